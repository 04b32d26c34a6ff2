"""End-to-end sessions, DBA verification, transcript replay and Monte Carlo
campaigns."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from qdba.adversary import CommanderView, LieutenantView, make_strategy
from qdba.agreement import (
    ConsistencyParams,
    Decision,
    Message,
    Traitor,
    commander_send,
    decide,
    decode_message,
    forward,
    lieutenant_phase1,
    send_message,
)
from qdba.channels import PARTIES, ChannelSet, Party, SessionError, Transcript, dumps
from qdba.config import Config
from qdba.list_distribution import PartyList, Verdict, run_distribution
from qdba.quantum_source import EntangledSource

__all__ = [
    "ChannelSet",
    "CampaignStats",
    "DbaCheck",
    "SessionResult",
    "forgery_acceptance_probability",
    "monte_carlo",
    "replay_decisions",
    "run_agreement",
    "run_session",
    "verify_dba",
]

FORGED_MISMATCH_RATE = 1.0 / 3.0
AGREEMENT_ROUNDS = 2


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P(Binomial(n, p) <= k), summed in log space."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    logs = [
        math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * lp + (n - i) * lq
        for i in range(k + 1)
    ]
    top = max(logs)
    return min(1.0, math.exp(top) * sum(math.exp(x - top) for x in logs))


def forgery_acceptance_probability(n: int, epsilon: float) -> float:
    """Chance that a forged list of ``n`` positions passes the content check:
    each forged position mismatches the victim's bit with probability 1/3."""
    return binomial_cdf(ConsistencyParams(epsilon=epsilon).max_mismatches(n), n, FORGED_MISMATCH_RATE)


@dataclass
class SessionResult:
    verdict: Verdict
    decisions: dict[Party, Decision] = field(default_factory=dict)
    commander_plan: Message | None = None
    traitors: tuple[Party, ...] = ()
    abort_reason: str | None = None
    qer: float = float("nan")
    tests_performed: int = 0
    raw_length: int = 0
    lists: tuple[PartyList, PartyList, PartyList] | None = None
    residual_risk: dict[Party, float] = field(default_factory=dict)
    received_lengths: dict[Party, int] = field(default_factory=dict)
    transcript: Transcript = field(default_factory=Transcript)
    config: Config | None = None

    @property
    def loyal(self) -> tuple[Party, ...]:
        return tuple(p for p in PARTIES if p not in self.traitors)

    @property
    def list_length(self) -> int:
        return len(self.lists[0]) if self.lists else 0

    def actions(self) -> dict[Party, str]:
        """'abort', '0' or '1' for every loyal party."""
        if self.verdict is Verdict.ABORT:
            return {p: "abort" for p in self.loyal}
        out = {}
        for p in self.loyal:
            if p is Party.A:
                out[p] = str(self.commander_plan.value)
            else:
                out[p] = str(self.decisions[p].plan.value)
        return out

    def attributions(self) -> dict[Party, Traitor]:
        return {p: d.traitor for p, d in self.decisions.items()}

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "abort_reason": self.abort_reason,
            "qer": None if math.isnan(self.qer) else self.qer,
            "tests_performed": self.tests_performed,
            "raw_length": self.raw_length,
            "list_length": self.list_length,
            "traitors": [p.value for p in self.traitors],
            "commander_plan": None if self.commander_plan is None else self.commander_plan.value,
            "decisions": {p.value: d.to_dict() for p, d in sorted(self.decisions.items())},
            "actions": {p.value: a for p, a in self.actions().items()},
            "residual_risk": {p.value: r for p, r in sorted(self.residual_risk.items())},
            "dba": verify_dba(self).to_dict(),
        }


@dataclass(frozen=True)
class DbaCheck:
    passed: bool
    condition: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {"passed": self.passed, "condition": self.condition, "detail": self.detail}


def verify_dba(result: SessionResult, loyal: Iterable[Party] | None = None) -> DbaCheck:
    """(i') loyal generals act alike or all abort; (ii') with a loyal
    commander, loyal lieutenants obey its order or all abort."""
    loyal = tuple(result.loyal if loyal is None else (Party(p) for p in loyal))
    if result.verdict is Verdict.ABORT:
        return DbaCheck(True, detail="all loyal generals aborted")
    actions = {}
    for p in loyal:
        if p is Party.A:
            actions[p] = result.commander_plan.value
        else:
            actions[p] = result.decisions[p].plan.value
    if Party.A in loyal:
        for p in loyal:
            if p is not Party.A and actions[p] != actions[Party.A]:
                return DbaCheck(False, "ii'", f"{p.value} acts {actions[p]}, commander ordered {actions[Party.A]}")
    if len(set(actions.values())) > 1:
        return DbaCheck(False, "i'", f"loyal actions differ: {dict((k.value, v) for k, v in actions.items())}")
    return DbaCheck(True)


def build_strategies(config: Config, seed_seq: np.random.SeedSequence) -> dict:
    out = {}
    for role, child in zip(config.traitors, seed_seq.spawn(len(config.traitors))):
        seed = int(child.generate_state(1)[0])
        out[role] = make_strategy(config.strategy, role, seed, **config.strategy_params)
    return out


def run_agreement(
    lists: Sequence[PartyList],
    plan: Message | int,
    channels: ChannelSet,
    params: ConsistencyParams = ConsistencyParams(),
    strategies: dict | None = None,
) -> tuple[dict[Party, Decision], dict[Party, int]]:
    """Two rounds: the commander sends, the lieutenants forward, then each
    loyal lieutenant decides. Returns decisions and received list lengths."""
    strategies = strategies or {}
    local = {l.owner: l for l in lists}
    plan = Message.plan(plan)

    channels.next_round()
    ep_a = channels.endpoint(Party.A)
    if Party.A in strategies:
        out = strategies[Party.A].on_commander_send(CommanderView(local[Party.A], plan))
        for p in (Party.B, Party.C):
            send_message(ep_a, p, *out[p])
    else:
        commander_send(plan, local[Party.A], ep_a)

    channels.next_round()
    phase1 = {}
    received_len = {}
    for x in (Party.B, Party.C):
        peer = Party.C if x is Party.B else Party.B
        m, pos = decode_message(channels.endpoint(x).receive(Party.A, ("plan", "bot")))
        received_len[x] = len(pos)
        st = lieutenant_phase1(m, pos, local[x], params)
        phase1[x] = st
        if x in strategies:
            view = LieutenantView(x, local[x], m, tuple(pos), st, params)
            send_message(channels.endpoint(x), peer, *strategies[x].on_forward(view))
        else:
            forward(st, channels.endpoint(x), peer)

    decisions = {}
    for x in (Party.B, Party.C):
        peer = Party.C if x is Party.B else Party.B
        pm, pl = decode_message(channels.endpoint(x).receive(peer, ("plan", "bot")))
        if x not in strategies:
            decisions[x] = decide(phase1[x], pm, pl, local[x], params)
    return decisions, received_len


def _session_rngs(config: Config, rng: np.random.Generator | None):
    if rng is None:
        root = np.random.SeedSequence(config.seed)
    else:
        root = np.random.SeedSequence(int(rng.integers(2**63)))
    dist_ss, adv_ss = root.spawn(2)
    return np.random.default_rng(dist_ss), adv_ss


def run_session(config: Config, rng: np.random.Generator | None = None) -> SessionResult:
    """Distribution, then (if it proceeds) agreement. Randomness is derived
    from ``config.seed`` unless a generator is passed."""
    dist_rng, adv_ss = _session_rngs(config, rng)
    strategies = build_strategies(config, adv_ss)
    transcript = Transcript(meta={
        "seed": config.seed,
        "config_hash": config.hash(),
        "config": config.protocol_dict(),
        "strategies": {p.value: s.describe() for p, s in sorted(strategies.items())},
    })
    channels = ChannelSet(transcript)
    traitors = config.traitors
    commander_plan = None if Party.A in traitors else Message.plan(config.plan)

    outcome = run_distribution(
        config.distribution(), EntangledSource(config.noise()), channels, dist_rng, strategies
    )
    base = dict(
        commander_plan=commander_plan, traitors=traitors, qer=outcome.qer_estimate,
        tests_performed=outcome.tests_performed, raw_length=outcome.raw_length,
        transcript=transcript, config=config,
    )
    if outcome.verdict is Verdict.ABORT:
        return SessionResult(Verdict.ABORT, abort_reason=outcome.reason, **base)

    params = config.consistency()
    decisions, received = run_agreement(outcome.lists, config.plan, channels, params, strategies)
    if channels.pending():
        raise SessionError("undelivered messages left after the agreement rounds")
    residual = {p: forgery_acceptance_probability(received[p], params.epsilon) for p in decisions}
    return SessionResult(
        Verdict.PROCEED, decisions=decisions, lists=outcome.lists,
        residual_risk=residual, received_lengths=received, **base,
    )


def replay_decisions(
    transcript: Transcript,
    lists: Sequence[PartyList],
    params: ConsistencyParams | None = None,
) -> dict[Party, Decision]:
    """Recompute every loyal lieutenant's decision from the agreement
    messages recorded in ``transcript`` and the lieutenants' own lists."""
    cfg = transcript.meta.get("config", {})
    if params is None:
        params = Config(**cfg).consistency() if cfg else ConsistencyParams()
    traitors = Config(**cfg).traitors if cfg else ()
    local = {l.owner: l for l in lists}
    out = {}
    for x in (Party.B, Party.C):
        if x in traitors:
            continue
        peer = Party.C if x is Party.B else Party.B
        from_a = [r for r in transcript.select(sender=Party.A, recipient=x) if r.kind in ("plan", "bot")]
        from_peer = [r for r in transcript.select(sender=peer, recipient=x) if r.kind in ("plan", "bot")]
        if not from_a or not from_peer:
            continue
        m, pos = decode_message(from_a[0])
        pm, pl = decode_message(from_peer[0])
        out[x] = decide(lieutenant_phase1(m, pos, local[x], params), pm, pl, local[x], params)
    return out


# --- campaigns ----------------------------------------------------------------


def trial_seed(master: int, trial: int) -> int:
    return int(np.random.SeedSequence([master, trial]).generate_state(1)[0])


def _expected_attribution(traitors: tuple[Party, ...], lieutenant: Party) -> Traitor:
    if not traitors:
        return Traitor.NONE
    if Party.A in traitors:
        return Traitor.COMMANDER
    return Traitor.PEER


def _summarise(config: Config, trial: int) -> dict:
    cfg = config.replace(seed=trial_seed(config.seed, trial))
    res = run_session(cfg)
    check = verify_dba(res)
    lieutenants_loyal = [p for p in (Party.B, Party.C) if p in res.decisions]
    forged = None
    if res.verdict is Verdict.PROCEED and config.strategy == "forging_lieutenant":
        victims = [res.decisions[p] for p in lieutenants_loyal]
        forged = any(d.case in ("iia", "iib") for d in victims)
    return {
        "trial": trial,
        "seed": cfg.seed,
        "verdict": res.verdict.value,
        "passed": check.passed,
        "condition": check.condition,
        "qer": None if math.isnan(res.qer) else res.qer,
        "list_length": res.list_length,
        "cases": {p.value: res.decisions[p].case for p in lieutenants_loyal},
        "identified": res.verdict is Verdict.PROCEED and all(
            res.decisions[p].traitor is _expected_attribution(res.traitors, p) for p in lieutenants_loyal
        ),
        "followed_commander": res.verdict is Verdict.PROCEED and res.commander_plan is not None and all(
            not res.decisions[p].fallback and res.decisions[p].plan is res.commander_plan
            for p in lieutenants_loyal
        ),
        "residual": max(res.residual_risk.values(), default=0.0),
        "forged_n": max((res.received_lengths.get(p, 0) for p in lieutenants_loyal), default=0),
        "forged_accepted": forged,
    }


@dataclass
class CampaignStats:
    config: dict
    trials: int
    pass_rate: float
    abort_rate: float
    identification_rate: float
    follow_commander_rate: float
    case_counts: dict
    qer: dict
    failure_rate: float
    residual_budget: float
    forged_acceptance_rate: float | None
    forged_acceptance_predicted: float | None
    forged_acceptance_sigma: float | None
    failures: list

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return dumps(self.to_dict()) + "\n"

    def table(self) -> str:
        rows = [
            ("trials", self.trials),
            ("DBA pass rate", f"{self.pass_rate:.4f}"),
            ("abort rate", f"{self.abort_rate:.4f}"),
            ("traitor identification rate", f"{self.identification_rate:.4f}"),
            ("loyal lieutenants follow commander", f"{self.follow_commander_rate:.4f}"),
            ("failure rate / residual budget", f"{self.failure_rate:.4g} / {self.residual_budget:.4g}"),
            ("QER mean (min..max)",
             "n/a" if self.qer["mean"] is None else f"{self.qer['mean']:.4f} ({self.qer['min']:.4f}..{self.qer['max']:.4f})"),
        ]
        if self.forged_acceptance_rate is not None:
            rows.append(("forged list acceptance (observed / predicted)",
                         f"{self.forged_acceptance_rate:.4g} / {self.forged_acceptance_predicted:.4g}"))
        for case, count in sorted(self.case_counts.items()):
            rows.append((f"case {case}", count))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _aggregate(config: Config, rows: list[dict]) -> CampaignStats:
    n = len(rows)
    proceeded = [r for r in rows if r["verdict"] == "proceed"]
    qers = np.array([r["qer"] for r in rows if r["qer"] is not None], dtype=float)
    cases: dict[str, int] = {}
    for r in proceeded:
        for c in r["cases"].values():
            cases[c] = cases.get(c, 0) + 1
    forged_rows = [r for r in proceeded if r["forged_accepted"] is not None]
    if forged_rows:
        ps = [forgery_acceptance_probability(r["forged_n"], config.epsilon) for r in forged_rows]
        f_rate = sum(r["forged_accepted"] for r in forged_rows) / len(forged_rows)
        f_pred = float(np.mean(ps))
        f_sigma = math.sqrt(sum(p * (1 - p) for p in ps)) / len(forged_rows)
    else:
        f_rate = f_pred = f_sigma = None

    def frac(xs):
        return sum(xs) / len(xs) if xs else 0.0

    return CampaignStats(
        config=config.protocol_dict(),
        trials=n,
        pass_rate=frac([r["passed"] for r in rows]),
        abort_rate=frac([r["verdict"] == "abort" for r in rows]),
        identification_rate=frac([r["identified"] for r in proceeded]),
        follow_commander_rate=frac([r["followed_commander"] for r in proceeded]),
        case_counts=cases,
        qer={
            "mean": float(qers.mean()) if qers.size else None,
            "std": float(qers.std()) if qers.size else None,
            "min": float(qers.min()) if qers.size else None,
            "max": float(qers.max()) if qers.size else None,
            "q05": float(np.quantile(qers, 0.05)) if qers.size else None,
            "q50": float(np.quantile(qers, 0.5)) if qers.size else None,
            "q95": float(np.quantile(qers, 0.95)) if qers.size else None,
        },
        failure_rate=1.0 - frac([r["passed"] for r in rows]),
        residual_budget=frac([r["residual"] for r in rows]),
        forged_acceptance_rate=f_rate,
        forged_acceptance_predicted=f_pred,
        forged_acceptance_sigma=f_sigma,
        failures=[{"trial": r["trial"], "seed": r["seed"], "condition": r["condition"]}
                  for r in rows if not r["passed"]],
    )


def _summarise_star(args):
    return _summarise(*args)


def monte_carlo(config: Config, trials: int, workers: int = 1, progress=None) -> CampaignStats:
    """Run ``trials`` sessions with per-trial seeds derived from
    ``config.seed``; the result does not depend on ``workers``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = [(config, t) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_summarise_star, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        rows = []
        for job in jobs:
            rows.append(_summarise_star(job))
            if progress is not None:
                progress(len(rows), trials)
    return _aggregate(config, rows)
