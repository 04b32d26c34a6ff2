"""Distribute-and-test phase: sifting of fourfold coincidences with rotating
collector roles, random-position correlation tests, error-ratio estimation
and the collective abort-or-proceed decision."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from qdba.channels import PARTIES, ChannelSet, Party, SessionError, as_int_list
from qdba.quantum_source import VALID_TRIPLES, EntangledSource, EventBatch, encode_indices


class Verdict(str, Enum):
    PROCEED = "proceed"
    ABORT = "abort"


_ALPHABET = {Party.A: (0, 1, 2), Party.B: (0, 1), Party.C: (0, 1)}


@dataclass(frozen=True)
class PartyList:
    """A general's secret list. Positions are 1-based in every public method."""

    owner: Party
    entries: np.ndarray

    def __post_init__(self):
        owner = Party(self.owner)
        arr = np.array(self.entries, dtype=np.int8).reshape(-1)
        allowed = _ALPHABET[owner]
        if arr.size and (arr.min() < 0 or arr.max() > allowed[-1]):
            raise ValueError(f"list for {owner.value} may only hold values {allowed}")
        arr.setflags(write=False)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "entries", arr)

    def __len__(self) -> int:
        return int(self.entries.size)

    @property
    def length(self) -> int:
        return len(self)

    def __getitem__(self, position: int) -> int:
        if not 1 <= position <= len(self):
            raise IndexError(f"position {position} outside 1..{len(self)}")
        return int(self.entries[position - 1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PartyList):
            return NotImplemented
        return self.owner is other.owner and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.owner, self.entries.tobytes()))

    def positions_of(self, value: int) -> np.ndarray:
        return np.flatnonzero(self.entries == value) + 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["position", "value"])
        for j, v in enumerate(self.entries.tolist(), 1):
            w.writerow([j, v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, owner: Party | str, text: str) -> "PartyList":
        rows = list(csv.DictReader(io.StringIO(text)))
        values = []
        for expected, row in enumerate(rows, 1):
            if int(row["position"]) != expected:
                raise ValueError(f"positions must run 1..L in order; row {expected} has {row['position']}")
            values.append(int(row["value"]))
        return cls(owner, values)


@dataclass(frozen=True)
class TripleRecord:
    position: int
    a: int
    b: int
    c: int

    @property
    def valid(self) -> bool:
        return (self.a, self.b, self.c) in VALID_TRIPLES


def check_lists(l_a: PartyList, l_b: PartyList, l_c: PartyList) -> list[int]:
    """Return the 1-based positions whose triple is not an allowed combination.

    Raises if the lists have different lengths or the wrong owners.
    """
    if (l_a.owner, l_b.owner, l_c.owner) != PARTIES:
        raise ValueError("lists must belong to A, B and C in that order")
    if not len(l_a) == len(l_b) == len(l_c):
        raise ValueError(f"list lengths differ: {len(l_a)}, {len(l_b)}, {len(l_c)}")
    return invalid_positions(l_a.entries, l_b.entries, l_c.entries)


def invalid_positions(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> list[int]:
    a, b, c = (np.asarray(x, dtype=np.int64) for x in (a, b, c))
    ok = ((a == 0) & (b == 0) & (c == 0)) | ((a == 1) & (b == 1) & (c == 1)) | ((a == 2) & (b != c))
    return (np.flatnonzero(~ok) + 1).tolist()


def write_combined_csv(lists: Sequence[PartyList], path: str | Path | None = None) -> str:
    l_a, l_b, l_c = lists
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["position", "lA", "lB", "lC"])
    for j, row in enumerate(zip(l_a.entries.tolist(), l_b.entries.tolist(), l_c.entries.tolist()), 1):
        w.writerow([j, *row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_combined_csv(text: str) -> tuple[PartyList, PartyList, PartyList]:
    cols: dict[str, list[int]] = {"lA": [], "lB": [], "lC": []}
    for expected, row in enumerate(csv.DictReader(io.StringIO(text)), 1):
        if int(row["position"]) != expected:
            raise ValueError(f"positions must run 1..L in order; row {expected} has {row['position']}")
        for k in cols:
            cols[k].append(int(row[k]))
    return PartyList(Party.A, cols["lA"]), PartyList(Party.B, cols["lB"]), PartyList(Party.C, cols["lC"])


# --- coincidence extraction ---------------------------------------------------


@dataclass(frozen=True)
class ScheduleBlock:
    start: int
    stop: int
    collector: Party
    first: Party
    second: Party


@dataclass(frozen=True)
class DisclosureSchedule:
    """Window ranges with their collecting party and speaking order.

    The windows are split in thirds collected by C, B and A in turn; inside
    each third the two speakers take the first turn for one half each.
    """

    blocks: tuple[ScheduleBlock, ...]

    def collector_counts(self) -> dict[Party, int]:
        out = {p: 0 for p in PARTIES}
        for blk in self.blocks:
            out[blk.collector] += blk.stop - blk.start
        return out

    def first_speaker_counts(self, collector: Party) -> dict[Party, int]:
        out: dict[Party, int] = {}
        for blk in self.blocks:
            if blk.collector is collector:
                out[blk.first] = out.get(blk.first, 0) + blk.stop - blk.start
        return out


_ROTATION = ((Party.C, Party.A, Party.B), (Party.B, Party.A, Party.C), (Party.A, Party.B, Party.C))


def make_schedule(n_windows: int) -> DisclosureSchedule:
    thirds = np.linspace(0, n_windows, 4).round().astype(int)
    blocks = []
    for (collector, s1, s2), lo, hi in zip(_ROTATION, thirds[:-1], thirds[1:]):
        mid = (lo + hi) // 2
        blocks.append(ScheduleBlock(int(lo), int(mid), collector, s1, s2))
        blocks.append(ScheduleBlock(int(mid), int(hi), collector, s2, s1))
    return DisclosureSchedule(tuple(blocks))


def _local_view(events: EventBatch, party: Party) -> tuple[np.ndarray, np.ndarray]:
    """(basis column, encoded record) visible to one party."""
    col = PARTIES.index(party)
    trit, bit_b, bit_c = encode_indices(events.labels)
    record = {Party.A: trit, Party.B: bit_b, Party.C: bit_c}[party]
    return events.bases[:, col], record


def extract_coincidences(
    events: EventBatch, schedule: DisclosureSchedule, channels: ChannelSet
) -> tuple[PartyList, PartyList, PartyList]:
    """Keep windows with a fourfold detection where all three bases agree.

    Each speaker discloses its detected windows and bases to the other two,
    then the collector announces which windows are kept. Every party builds
    its list from its own results at the announced windows.
    """
    views = {p: _local_view(events, p) for p in PARTIES}
    kept_by: dict[Party, list[np.ndarray]] = {p: [] for p in PARTIES}
    for blk in schedule.blocks:
        window = np.arange(blk.start, blk.stop)
        for speaker in (blk.first, blk.second):
            channels.next_round()
            basis = views[speaker][0][window]
            det = events.detected[window]
            channels.endpoint(speaker).broadcast(
                "disclose",
                {
                    "windows": as_int_list(window[det]),
                    "bases": "".join("X" if x else "Z" for x in basis[det].tolist()),
                },
            )
        # speakers hear each other; the collector hears both
        coll = channels.endpoint(blk.collector)
        disclosed = [coll.receive(blk.first, "disclose").payload, coll.receive(blk.second, "disclose").payload]
        channels.endpoint(blk.second).receive(blk.first, "disclose")
        channels.endpoint(blk.first).receive(blk.second, "disclose")

        own_basis = views[blk.collector][0]
        own_det = set(window[events.detected[window]].tolist())
        maps = [dict(zip(d["windows"], d["bases"])) for d in disclosed]
        keep = []
        for w in sorted(own_det.intersection(maps[0], maps[1])):
            b = "X" if own_basis[w] else "Z"
            if maps[0][w] == b and maps[1][w] == b:
                keep.append(w)
        channels.next_round()
        coll.broadcast("positions", {"keep": keep})
        for p in blk.collector.others():
            got = channels.endpoint(p).receive(blk.collector, "positions").payload["keep"]
            kept_by[p].append(np.asarray(got, dtype=np.int64))
        kept_by[blk.collector].append(np.asarray(keep, dtype=np.int64))

    out = []
    for p in PARTIES:
        idx = np.concatenate(kept_by[p]) if kept_by[p] else np.zeros(0, dtype=np.int64)
        out.append(PartyList(p, views[p][1][idx]))
    return tuple(out)


# --- correlation tests --------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    position: int
    tester: Party
    values: tuple[int, int, int] | None
    refused_by: Party | None = None

    @property
    def passed(self) -> bool:
        return self.values is not None and self.values in VALID_TRIPLES

    @property
    def violation(self) -> bool:
        return not self.passed


@dataclass
class TestState:
    """Sifted lists under test plus the positions not yet used for a test."""

    __test__ = False

    lists: dict[Party, PartyList]
    untested: list[int]

    @classmethod
    def start(cls, lists: Sequence[PartyList]) -> "TestState":
        n = len(lists[0])
        return cls({l.owner: l for l in lists}, list(range(1, n + 1)))

    def release(self) -> tuple[PartyList, PartyList, PartyList]:
        idx = np.asarray(self.untested, dtype=np.int64) - 1
        return tuple(PartyList(p, self.lists[p].entries[idx]) for p in PARTIES)


def _reply_value(party: Party, position: int, state: TestState, strategies: Mapping | None) -> int | None:
    strat = (strategies or {}).get(party)
    if strat is None:
        return state.lists[party][position]
    return strat.on_test_reply(state.lists[party], position)


def correlation_test_round(
    tester: Party,
    state: TestState,
    channels: ChannelSet,
    rng: np.random.Generator,
    strategies: Mapping | None = None,
) -> TestResult:
    """One test: ``tester`` names a random untested position, the other two
    disclose their entries there to both peers, the tester reveals its own,
    and the position is discarded by everyone."""
    if not state.untested:
        raise ValueError("no untested positions left")
    pos = state.untested.pop(int(rng.integers(len(state.untested))))
    channels.next_round()
    channels.endpoint(tester).broadcast("test-query", {"position": pos})
    responders = tester.others()
    refused = None
    channels.next_round()
    for r in responders:
        channels.endpoint(r).receive(tester, "test-query")
        value = _reply_value(r, pos, state, strategies)
        if value is None:
            refused = refused or r
            continue
        channels.endpoint(r).broadcast("test-reply", {"position": pos, "value": int(value)})
    channels.endpoint(tester).broadcast("test-reply", {"position": pos, "value": state.lists[tester][pos]})

    seen: dict[Party, int] = {tester: state.lists[tester][pos]}
    for r in responders:
        if r is refused:
            continue
        try:
            seen[r] = channels.endpoint(tester).receive(r, "test-reply").payload["value"]
        except SessionError:
            refused = refused or r
            continue
        other = r.others()[0] if r.others()[0] is not tester else r.others()[1]
        channels.endpoint(other).receive(r, "test-reply")
    for r in responders:
        channels.endpoint(r).receive(tester, "test-reply")
    if refused is not None:
        return TestResult(pos, tester, None, refused_by=refused)
    return TestResult(pos, tester, (seen[Party.A], seen[Party.B], seen[Party.C]))


def estimate_qer(results: Sequence[TestResult]) -> float:
    if len(results) == 0:
        raise ValueError("cannot estimate an error ratio from zero tests")
    return sum(r.violation for r in results) / len(results)


def decide_abort(qer: float, threshold: float) -> Verdict:
    """Abort iff the observed ratio exceeds the threshold; a tie proceeds."""
    if not 0.0 <= qer <= 1.0:
        raise ValueError(f"error ratio must lie in [0, 1], got {qer}")
    return Verdict.ABORT if qer > threshold else Verdict.PROCEED


# --- phase driver -------------------------------------------------------------


@dataclass(frozen=True)
class DistributionConfig:
    n_windows: int = 48184
    n_tests: int | None = None
    qer_threshold: float = 0.10
    min_length: int = 300
    test_mode: str = "shared"
    subset_size: int = 1000

    def __post_init__(self):
        if self.n_windows <= 0:
            raise ValueError("n_windows must be positive")
        if self.n_tests is not None and self.n_tests <= 0:
            raise ValueError("n_tests must be positive")
        if not 0.0 <= self.qer_threshold <= 1.0:
            raise ValueError("qer_threshold must lie in [0, 1]")
        if self.test_mode not in ("shared", "subsets"):
            raise ValueError(f"unknown test_mode {self.test_mode!r}")

    def tests_for(self, raw_length: int) -> int:
        if self.n_tests is not None:
            return self.n_tests
        return max(100, raw_length // 10)


@dataclass
class DistributionOutcome:
    verdict: Verdict
    lists: tuple[PartyList, PartyList, PartyList] | None
    qer_estimate: float
    tests_performed: int
    reason: str | None = None
    raw_length: int = 0
    results: tuple[TestResult, ...] = ()
    per_party_qer: dict[Party, float] = field(default_factory=dict)
    per_party_verdict: dict[Party, Verdict] = field(default_factory=dict)
    faulty: Party | None = None


def _abort(reason: str, **kw) -> DistributionOutcome:
    kw.setdefault("qer_estimate", float("nan"))
    kw.setdefault("tests_performed", 0)
    return DistributionOutcome(Verdict.ABORT, None, reason=reason, **kw)


def _shared_tests(n_tests, state, channels, rng, strategies):
    results = []
    order = (Party.C, Party.B, Party.A)
    for k in range(min(n_tests, len(state.untested))):
        res = correlation_test_round(order[k % 3], state, channels, rng, strategies)
        results.append(res)
        if res.refused_by is not None:
            break
    return results


def _subset_tests(subset_size, state, channels, rng, strategies):
    results = []
    for tester in (Party.C, Party.B, Party.A):
        for _ in range(min(subset_size, len(state.untested))):
            res = correlation_test_round(tester, state, channels, rng, strategies)
            results.append(res)
            if res.refused_by is not None:
                return results
    return results


def run_distribution(
    config: DistributionConfig,
    source: EntangledSource,
    channels: ChannelSet,
    rng: np.random.Generator,
    strategies: Mapping | None = None,
) -> DistributionOutcome:
    events = source.emit(config.n_windows, rng)
    raw = extract_coincidences(events, make_schedule(config.n_windows), channels)
    raw_length = len(raw[0])
    if raw_length == 0:
        return _abort("insufficient entries", raw_length=0)

    state = TestState.start(raw)
    if config.test_mode == "shared":
        results = _shared_tests(config.tests_for(raw_length), state, channels, rng, strategies)
    else:
        results = _subset_tests(config.subset_size, state, channels, rng, strategies)

    refused = next((r.refused_by for r in results if r.refused_by is not None), None)
    if refused is not None:
        return _abort(
            f"{refused.value} refused to answer a correlation test",
            raw_length=raw_length, results=tuple(results),
            tests_performed=len(results), faulty=refused,
        )

    if config.test_mode == "shared":
        qer = estimate_qer(results)
        per_party_qer = {p: qer for p in PARTIES}
    else:
        per_party_qer = {
            p: estimate_qer([r for r in results if r.tester is p]) for p in PARTIES
            if any(r.tester is p for r in results)
        }
        qer = estimate_qer(results)

    # every party announces its local verdict; a single abort stops everyone
    channels.next_round()
    verdicts = {}
    for p in PARTIES:
        v = decide_abort(per_party_qer.get(p, qer), config.qer_threshold)
        verdicts[p] = v
        channels.endpoint(p).broadcast("verdict", {"verdict": v.value, "qer": per_party_qer.get(p, qer)})
    announced = []
    for p in PARTIES:
        for q in p.others():
            announced.append(channels.endpoint(p).receive(q, "verdict").payload["verdict"])

    common = dict(
        qer_estimate=qer, tests_performed=len(results), raw_length=raw_length,
        results=tuple(results), per_party_qer=per_party_qer, per_party_verdict=verdicts,
    )
    if Verdict.ABORT.value in announced:
        return _abort("error ratio above threshold", **common)
    released = state.release()
    if len(released[0]) < config.min_length:
        return _abort("insufficient entries", **common)
    return DistributionOutcome(Verdict.PROCEED, released, **common)
