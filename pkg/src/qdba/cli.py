"""Command-line driver.

Exit codes: 0 success / DBA holds, 2 distribution aborted, 3 DBA violated,
4 configuration or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from qdba.agreement import Message
from qdba.channels import ChannelSet, Party, Transcript
from qdba.config import Config, ConfigError
from qdba.fixture import FixtureError, load_fixture, replay_report
from qdba.harness import (
    SessionResult,
    build_strategies,
    forgery_acceptance_probability,
    monte_carlo,
    run_agreement,
    run_session,
    verify_dba,
)
from qdba.list_distribution import (
    Verdict,
    read_combined_csv,
    run_distribution,
    write_combined_csv,
)
from qdba.quantum_source import DIM, EntangledSource, encode_indices

EXIT_OK = 0
EXIT_ABORT = 2
EXIT_DBA_VIOLATION = 3
EXIT_CONFIG = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("none", "null", "") else int(text)


def _optional_str(text: str) -> str | None:
    return None if text.lower() in ("none", "null", "") else text


def _json_object(text: str) -> dict:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return d


_FIELD_TYPES = {
    "seed": int, "n_windows": int, "p_corrupt": float, "p_detect": float,
    "n_tests": _optional_int, "qer_threshold": float, "min_length": int,
    "test_mode": str, "subset_size": int, "delta": float, "epsilon": float, "length_sigmas": float,
    "plan": int, "traitor": _optional_str, "strategy": str,
    "strategy_params": _json_object, "outside_model": _bool,
    "transcript_path": _optional_str, "lists_path": _optional_str, "stats_path": _optional_str,
}


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON configuration file")
    g = p.add_argument_group("configuration overrides (same names as the JSON fields)")
    for f in dataclasses.fields(Config):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        g.add_argument(*flags, dest=f.name, type=_FIELD_TYPES[f.name], default=argparse.SUPPRESS)


def load_config(args: argparse.Namespace) -> Config:
    base = Config.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for f in dataclasses.fields(Config):
        if hasattr(args, f.name):
            base[f.name] = getattr(args, f.name)
    return Config.from_dict(base)


def _emit(obj: dict, as_json: bool, text: str) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True) if as_json else text)


# --- subcommands --------------------------------------------------------------


def cmd_simulate_source(config: Config, args) -> int:
    rng = np.random.default_rng(config.seed)
    events = EntangledSource(config.noise()).emit(config.n_windows, rng)
    det = events.detected
    kept = det & events.same_basis
    trit, bb, bc = encode_indices(events.labels[kept])
    hist: dict[str, int] = {}
    for t in zip(trit.tolist(), bb.tolist(), bc.tolist()):
        key = "".join(map(str, t))
        hist[key] = hist.get(key, 0) + 1
    n_kept = int(kept.sum())
    valid = sum(hist.get(k, 0) for k in ("000", "111", "201", "210"))
    pattern_counts = np.bincount(events.labels[kept], minlength=DIM)
    report = {
        "windows": config.n_windows,
        "detected": int(det.sum()),
        "detected_fraction": float(det.mean()) if config.n_windows else 0.0,
        "same_basis": n_kept,
        "same_basis_fraction": n_kept / int(det.sum()) if det.any() else 0.0,
        "triples": {k: hist[k] for k in sorted(hist)},
        "triple_frequencies": {k: hist[k] / n_kept for k in sorted(hist)} if n_kept else {},
        "patterns": {format(i, "04b"): int(c) for i, c in enumerate(pattern_counts)},
        "qer": (n_kept - valid) / n_kept if n_kept else None,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = [
        f"windows {report['windows']}  detected {report['detected']} "
        f"({report['detected_fraction']:.4f})  same-basis {n_kept} ({report['same_basis_fraction']:.4f})",
    ]
    for k, v in report["triple_frequencies"].items():
        lines.append(f"  {k}: {hist[k]:7d}  {v:.4f}")
    if report["qer"] is not None:
        lines.append(f"error ratio {report['qer']:.4f}")
    _emit(report, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_distribute(config: Config, args) -> int:
    root = np.random.SeedSequence(config.seed)
    dist_ss, adv_ss = root.spawn(2)
    channels = ChannelSet(Transcript(meta={"seed": config.seed, "config_hash": config.hash(),
                                           "config": config.protocol_dict()}))
    outcome = run_distribution(
        config.distribution(), EntangledSource(config.noise()), channels,
        np.random.default_rng(dist_ss), build_strategies(config, adv_ss),
    )
    report = {
        "verdict": outcome.verdict.value,
        "reason": outcome.reason,
        "qer": outcome.qer_estimate,
        "per_party_qer": {p.value: q for p, q in outcome.per_party_qer.items()},
        "tests_performed": outcome.tests_performed,
        "raw_length": outcome.raw_length,
        "list_length": len(outcome.lists[0]) if outcome.lists else 0,
    }
    if outcome.lists and config.lists_path:
        write_combined_csv(outcome.lists, config.lists_path)
        base = Path(config.lists_path)
        for l in outcome.lists:
            base.with_name(f"{base.stem}_{l.owner.value}.csv").write_text(l.to_csv())
    if config.transcript_path:
        channels.transcript.write(config.transcript_path)
    _emit(report, args.json,
          f"{report['verdict']}  QER {report['qer']:.4f} over {report['tests_performed']} tests  "
          f"lists {report['raw_length']} -> {report['list_length']}"
          + (f"  ({report['reason']})" if report["reason"] else ""))
    return EXIT_OK if outcome.verdict is Verdict.PROCEED else EXIT_ABORT


def _render_result(res: SessionResult) -> str:
    lines = [f"distribution: {res.verdict.value}"
             + (f" ({res.abort_reason})" if res.abort_reason else "")
             + ("" if np.isnan(res.qer) else f"  QER {res.qer:.4f}")
             + f"  list length {res.list_length}"]
    if res.traitors:
        lines.append("traitor: " + ", ".join(p.value for p in res.traitors))
    if res.commander_plan is not None:
        lines.append(f"A: plan {res.commander_plan}")
    for p, d in sorted(res.decisions.items()):
        risk = res.residual_risk.get(p)
        lines.append(f"{p.value}: {d}" + (f"  forgery acceptance risk {risk:.3g}" if risk is not None else ""))
    check = verify_dba(res)
    lines.append("DBA: pass" if check else f"DBA: FAIL ({check.condition}) {check.detail}")
    return "\n".join(lines)


def _exit_for(res: SessionResult) -> int:
    if res.verdict is Verdict.ABORT:
        return EXIT_ABORT
    return EXIT_OK if verify_dba(res) else EXIT_DBA_VIOLATION


def cmd_agree(config: Config, args) -> int:
    lists = read_combined_csv(Path(args.lists).read_text(encoding="utf-8"))
    channels = ChannelSet(Transcript(meta={"seed": config.seed, "config_hash": config.hash(),
                                           "config": config.protocol_dict()}))
    strategies = build_strategies(config, np.random.SeedSequence(config.seed).spawn(2)[1])
    params = config.consistency()
    decisions, received = run_agreement(lists, config.plan, channels, params, strategies)
    res = SessionResult(
        Verdict.PROCEED, decisions=decisions, lists=lists, traitors=config.traitors,
        commander_plan=None if Party.A in config.traitors else Message.plan(config.plan),
        residual_risk={p: forgery_acceptance_probability(received[p], params.epsilon) for p in decisions},
        received_lengths=received, transcript=channels.transcript, config=config,
    )
    if config.transcript_path:
        channels.transcript.write(config.transcript_path)
    _emit(res.to_dict(), args.json, _render_result(res))
    return _exit_for(res)


def cmd_full_run(config: Config, args) -> int:
    res = run_session(config)
    if config.transcript_path:
        res.transcript.write(config.transcript_path)
    if config.lists_path and res.lists:
        write_combined_csv(res.lists, config.lists_path)
    _emit(res.to_dict(), args.json, _render_result(res))
    return _exit_for(res)


def cmd_campaign(config: Config, args) -> int:
    if args.trials < 1:
        raise UsageError("trials must be at least 1")
    stats = monte_carlo(config, args.trials, workers=args.workers)
    doc = stats.to_json()
    if config.stats_path:
        Path(config.stats_path).write_text(doc, encoding="utf-8")
    if args.json:
        sys.stdout.write(doc)
    else:
        print(stats.table())
    return EXIT_OK if stats.pass_rate == 1.0 else EXIT_DBA_VIOLATION


def cmd_replay(args) -> int:
    rows = load_fixture(args.fixture)
    report = replay_report(rows)
    lines = [
        f"{report['rows']} rows, {len(report['violations'])} violate the allowed combinations "
        f"(ratio {report['violation_ratio']:.4f})",
        "violating positions: " + (", ".join(map(str, report["violations"])) or "none"),
    ]
    if report["flagged"]:
        lines.append("flagged in source: " + ", ".join(map(str, report["flagged"])))
        lines.append("invalid but not flagged: " + (", ".join(map(str, report["invalid_not_flagged"])) or "none"))
        lines.append("flagged but valid: " + (", ".join(map(str, report["flagged_but_valid"])) or "none"))
    _emit(report, args.json, "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdba", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--json", action="store_true", help="print a JSON report")
        return p

    p = add("simulate-source", "sample the entangled source and report outcome statistics")
    _add_config_options(p)
    p.add_argument("--out", help="write the report JSON here")

    p = add("distribute", "run the distribute-and-test phase only")
    _add_config_options(p)

    p = add("agree", "run the agreement phase on given lists")
    _add_config_options(p)
    p.add_argument("--lists", required=True, help="CSV with columns position,lA,lB,lC")

    p = add("full-run", "distribution followed by agreement")
    _add_config_options(p)

    p = add("campaign", "Monte Carlo campaign of full sessions")
    _add_config_options(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)

    p = add("replay", "validate a position,lA,lB,lC fixture (defaults to the shipped table)")
    p.add_argument("fixture", nargs="?", default=None)
    return parser


_COMMANDS = {
    "simulate-source": cmd_simulate_source,
    "distribute": cmd_distribute,
    "agree": cmd_agree,
    "full-run": cmd_full_run,
    "campaign": cmd_campaign,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        config = load_config(args)
        return _COMMANDS[args.command](config, args)
    except (ConfigError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FixtureError as exc:
        print(f"fixture error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
