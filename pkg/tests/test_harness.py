import inspect
import json

import numpy as np
import pytest

from qdba.agreement import Decision, Message, Traitor
from qdba.channels import ChannelSet, Endpoint, Party, SessionError, Transcript
from qdba.config import Config, ConfigError
from qdba.harness import (
    SessionResult,
    monte_carlo,
    replay_decisions,
    run_agreement,
    run_session,
    trial_seed,
    verify_dba,
)
from qdba.list_distribution import Verdict


def _decision(plan, fallback=False):
    return Decision(Message(plan), fallback, Traitor.NONE, "iia")


def _result(plan, b, c, traitors=()):
    decisions = {p: _decision(v) for p, v in ((Party.B, b), (Party.C, c)) if p not in traitors}
    return SessionResult(Verdict.PROCEED, decisions, None if Party.A in traitors else Message(plan),
                         tuple(traitors))


# --- DBA conditions ---


def test_verify_dba_examples():
    assert verify_dba(_result(1, 1, 1))
    bad = verify_dba(_result(1, 0, 1))
    assert not bad and bad.condition == "ii'"
    assert verify_dba(_result(None, 0, 0, traitors=(Party.A,)))
    split = verify_dba(_result(None, 0, 1, traitors=(Party.A,)))
    assert not split and split.condition == "i'"
    assert verify_dba(_result(1, 1, 0, traitors=(Party.C,)))
    assert verify_dba(SessionResult(Verdict.ABORT))


# --- sessions ---


def test_honest_session_follows_plan():
    for plan in (0, 1):
        res = run_session(Config(seed=10, plan=plan))
        assert res.verdict is Verdict.PROCEED
        assert {d.case for d in res.decisions.values()} == {"iia"}
        assert res.actions() == {p: str(plan) for p in Party}
        assert verify_dba(res)


def test_session_reports_residual_risk():
    res = run_session(Config(seed=3))
    n = res.received_lengths[Party.B]
    assert n > 600
    assert 0 <= res.residual_risk[Party.B] < 1e-30
    json.dumps(res.to_dict())


def test_aborting_session():
    res = run_session(Config(seed=1, p_corrupt=0.6))
    assert res.verdict is Verdict.ABORT and res.abort_reason
    assert res.actions() == {p: "abort" for p in Party}
    assert verify_dba(res)


@pytest.mark.parametrize(
    "traitor, strategy, expect",
    [
        ("A", "conflicting_commander", {"iib"}),
        ("B", "forging_lieutenant", {"iid"}),
        ("C", "false_bot_lieutenant", {"iic"}),
    ],
)
def test_traitor_sessions(traitor, strategy, expect):
    res = run_session(Config(seed=5, traitor=traitor, strategy=strategy))
    assert res.verdict is Verdict.PROCEED
    assert {d.case for d in res.decisions.values()} == expect
    assert verify_dba(res)


def test_two_traitors_need_outside_model():
    with pytest.raises(ConfigError):
        Config(traitor="A,B", strategy="random")
    res = run_session(Config(seed=2, traitor="A,B", strategy="random", outside_model=True))
    assert Party.C in res.decisions or res.verdict is Verdict.ABORT


# --- determinism and replay ---


def test_identical_config_identical_transcript():
    cfg = Config(seed=77, traitor="B", strategy="random")
    assert run_session(cfg).transcript.to_jsonl() == run_session(cfg).transcript.to_jsonl()
    other = run_session(cfg.replace(seed=78)).transcript.to_jsonl()
    assert other != run_session(cfg).transcript.to_jsonl()


def test_transcript_meta_first_line(tmp_path):
    cfg = Config(seed=9)
    res = run_session(cfg)
    path = tmp_path / "t.jsonl"
    res.transcript.write(path)
    first = json.loads(path.read_text().splitlines()[0])
    assert first["meta"]["seed"] == 9 and first["meta"]["config_hash"] == cfg.hash()
    assert Transcript.read(path).to_jsonl() == res.transcript.to_jsonl()


@pytest.mark.parametrize("traitor, strategy", [(None, "honest"), ("A", "conflicting_commander"),
                                               ("B", "forging_lieutenant"), ("C", "random")])
def test_replay_reproduces_decisions(traitor, strategy):
    res = run_session(Config(seed=31, traitor=traitor, strategy=strategy))
    again = replay_decisions(Transcript.from_jsonl(res.transcript.to_jsonl()), res.lists)
    assert again == res.decisions


# --- channels ---


def test_endpoint_has_no_sender_argument():
    params = inspect.signature(Endpoint.send).parameters
    assert "sender" not in params and "frm" not in params
    ch = ChannelSet()
    rec = ch.endpoint(Party.B).send(Party.C, "bot", {"positions": []})
    assert rec.sender is Party.B


def test_undelivered_message_is_an_error():
    ch = ChannelSet()
    ch.next_round()
    with pytest.raises(SessionError) as exc:
        ch.endpoint(Party.B).receive(Party.A, "plan")
    assert exc.value.party is Party.A


def test_liveness_every_loyal_lieutenant_decides():
    for seed in range(20):
        res = run_session(Config(seed=seed, traitor="A", strategy="random"))
        if res.verdict is Verdict.PROCEED:
            assert set(res.decisions) == {Party.B, Party.C}


def test_run_agreement_transcript_is_two_rounds():
    lists = run_session(Config(seed=2)).lists
    ch = ChannelSet()
    run_agreement(lists, 0, ch)
    recs = list(ch.transcript)
    assert [r.kind for r in recs] == ["plan"] * 4
    assert len({r.round for r in recs}) == 2


# --- campaigns ---


def test_trial_seeds_distinct_and_stable():
    seeds = [trial_seed(2006, t) for t in range(200)]
    assert len(set(seeds)) == 200
    assert seeds[0] == trial_seed(2006, 0)


def test_small_campaign():
    stats = monte_carlo(Config(seed=1, traitor="A", strategy="conflicting_commander"), 20)
    assert stats.trials == 20 and stats.pass_rate == 1.0
    assert stats.identification_rate == 1.0
    assert stats.case_counts == {"iib": 40}
    assert "DBA pass rate" in stats.table()


def test_campaign_independent_of_workers():
    cfg = Config(seed=4, traitor="B", strategy="forging_lieutenant")
    a = monte_carlo(cfg, 6).to_json()
    b = monte_carlo(cfg, 6, workers=2).to_json()
    assert a == b


def test_campaign_rejects_zero_trials():
    with pytest.raises(ValueError):
        monte_carlo(Config(), 0)


def test_residual_budget_bounds_failure_rate():
    stats = monte_carlo(Config(seed=8, traitor="B", strategy="forging_lieutenant"), 15)
    assert stats.failure_rate == 0.0 and stats.residual_budget < 1e-20
    assert stats.forged_acceptance_rate == 0.0
    assert np.isclose(stats.forged_acceptance_predicted, 0.0, atol=1e-20)
