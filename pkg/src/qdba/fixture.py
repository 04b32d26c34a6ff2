"""Table-style list fixtures (``position,lA,lB,lC[,flagged]``) and the replay
check that flags rows outside the allowed combinations."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from qdba.channels import Party
from qdba.list_distribution import PartyList, TestResult, estimate_qer
from qdba.quantum_source import VALID_TRIPLES


class FixtureError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class FixtureRow:
    position: int
    lA: int
    lB: int
    lC: int
    flagged: bool = False

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.lA, self.lB, self.lC)

    @property
    def valid(self) -> bool:
        return self.triple in VALID_TRIPLES


def _int_field(row: dict, key: str, lineno: int, allowed: tuple[int, ...]) -> int:
    raw = row.get(key)
    if raw is None or raw.strip() == "":
        raise FixtureError(lineno, f"missing {key}")
    try:
        v = int(raw)
    except ValueError:
        raise FixtureError(lineno, f"{key}={raw!r} is not an integer") from None
    if allowed and v not in allowed:
        raise FixtureError(lineno, f"{key}={v} not in {allowed}")
    return v


def parse_fixture(text: str) -> list[FixtureRow]:
    reader = csv.DictReader(io.StringIO(text))
    missing = {"position", "lA", "lB", "lC"} - set(reader.fieldnames or ())
    if missing:
        raise FixtureError(1, f"header lacks {sorted(missing)}")
    rows = []
    for row in reader:
        lineno = reader.line_num
        if None in row:
            raise FixtureError(lineno, "too many fields")
        pos = _int_field(row, "position", lineno, ())
        if pos != len(rows) + 1:
            raise FixtureError(lineno, f"expected position {len(rows) + 1}, got {pos}")
        flagged = row.get("flagged")
        if flagged not in (None, "", "0", "1", "true", "false"):
            raise FixtureError(lineno, f"flagged={flagged!r} is not a boolean")
        rows.append(FixtureRow(
            pos,
            _int_field(row, "lA", lineno, (0, 1, 2)),
            _int_field(row, "lB", lineno, (0, 1)),
            _int_field(row, "lC", lineno, (0, 1)),
            flagged in ("1", "true"),
        ))
    return rows


def shipped_fixture_text() -> str:
    return resources.files("qdba").joinpath("data/table1.csv").read_text(encoding="utf-8")


def load_fixture(path: str | Path | None = None) -> list[FixtureRow]:
    """Rows of ``path``, or of the 30-row experimental excerpt shipped with
    the package when no path is given."""
    text = shipped_fixture_text() if path is None else Path(path).read_text(encoding="utf-8")
    return parse_fixture(text)


def rows_to_lists(rows: list[FixtureRow]) -> tuple[PartyList, PartyList, PartyList]:
    return (
        PartyList(Party.A, [r.lA for r in rows]),
        PartyList(Party.B, [r.lB for r in rows]),
        PartyList(Party.C, [r.lC for r in rows]),
    )


def replay_report(rows: list[FixtureRow]) -> dict:
    """Violating positions, their ratio, and a cross-check against the
    ``flagged`` column."""
    results = [TestResult(r.position, Party.C, r.triple) for r in rows]
    violations = [r.position for r in rows if not r.valid]
    flagged = [r.position for r in rows if r.flagged]
    return {
        "rows": len(rows),
        "violations": violations,
        "violation_ratio": estimate_qer(results) if rows else 0.0,
        "flagged": flagged,
        "flagged_and_invalid": sorted(set(flagged) & set(violations)),
        "invalid_not_flagged": sorted(set(violations) - set(flagged)),
        "flagged_but_valid": sorted(set(flagged) - set(violations)),
    }
