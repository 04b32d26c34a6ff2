"""Pairwise authenticated FIFO channels between the three generals.

A party only ever holds an :class:`Endpoint` bound to its own identity, so
the sender tag on a message is fixed by construction and cannot be chosen by
the caller. Every delivered message is appended to the session transcript.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator


class Party(str, Enum):
    A = "A"
    B = "B"
    C = "C"

    def others(self) -> tuple["Party", "Party"]:
        return _OTHERS[self]


PARTIES = (Party.A, Party.B, Party.C)
_OTHERS = {p: tuple(q for q in PARTIES if q is not p) for p in PARTIES}

KINDS = frozenset(
    {"plan", "bot", "positions", "test-query", "test-reply", "disclose", "verdict"}
)


class SessionError(RuntimeError):
    """A party stalled or broke the message protocol."""

    def __init__(self, message: str, party: Party | None = None):
        super().__init__(message)
        self.party = party


@dataclass(frozen=True)
class WireRecord:
    round: int
    sender: Party
    recipient: Party
    kind: str
    payload: Any

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "from": self.sender.value,
            "to": self.recipient.value,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WireRecord":
        return cls(int(d["round"]), Party(d["from"]), Party(d["to"]), d["kind"], d["payload"])


def dumps(obj: Any) -> str:
    """Canonical single-line JSON used for transcripts and hashes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(dumps(config_dict).encode()).hexdigest()


@dataclass
class Transcript:
    meta: dict = field(default_factory=dict)
    records: list[WireRecord] = field(default_factory=list)

    def __iter__(self) -> Iterator[WireRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def select(self, kind: str | None = None, sender: Party | None = None,
               recipient: Party | None = None) -> list[WireRecord]:
        return [
            r for r in self.records
            if (kind is None or r.kind == kind)
            and (sender is None or r.sender is sender)
            and (recipient is None or r.recipient is recipient)
        ]

    def to_jsonl(self) -> str:
        lines = [dumps({"meta": self.meta})]
        lines.extend(dumps(r.to_dict()) for r in self.records)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        meta: dict = {}
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj and lineno == 1:
                meta = obj["meta"]
            else:
                records.append(WireRecord.from_dict(obj))
        return cls(meta, records)

    @classmethod
    def read(cls, path: str | Path) -> "Transcript":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


class ChannelSet:
    """Three bidirectional links A-B, A-C, B-C with lossless in-order delivery."""

    def __init__(self, transcript: Transcript | None = None):
        self.transcript = transcript if transcript is not None else Transcript()
        self.round = 0
        self._queues: dict[tuple[Party, Party], deque] = {
            (s, r): deque() for s in PARTIES for r in PARTIES if s is not r
        }
        self._endpoints = {p: Endpoint(self, p) for p in PARTIES}

    def endpoint(self, party: Party | str) -> "Endpoint":
        return self._endpoints[party if isinstance(party, Party) else Party(party)]

    def next_round(self) -> int:
        """Round barrier: everything sent so far belongs to earlier rounds."""
        self.round += 1
        return self.round

    def pending(self, recipient: Party | None = None) -> int:
        return sum(len(q) for (s, r), q in self._queues.items() if recipient is None or r is recipient)

    def _deliver(self, sender: Party, recipient: Party, kind: str, payload: Any) -> WireRecord:
        if recipient is sender:
            raise ValueError("a party cannot message itself")
        if kind not in KINDS:
            raise ValueError(f"unknown message kind {kind!r}")
        rec = WireRecord(self.round, sender, recipient, kind, payload)
        self._queues[(sender, recipient)].append(rec)
        self.transcript.records.append(rec)
        return rec

    def _take(self, recipient: Party, sender: Party, kind: str | None) -> WireRecord:
        q = self._queues[(sender, recipient)]
        if not q:
            raise SessionError(
                f"{recipient.value} waited on {sender.value} but nothing arrived "
                f"(round {self.round})",
                party=sender,
            )
        rec = q.popleft()
        if kind is not None and rec.kind not in (kind if isinstance(kind, tuple) else (kind,)):
            raise SessionError(
                f"{recipient.value} expected {kind} from {sender.value}, got {rec.kind}",
                party=sender,
            )
        return rec


class Endpoint:
    """A party's handle on the channel set; the sender is always ``owner``."""

    __slots__ = ("_channels", "_owner")

    def __init__(self, channels: ChannelSet, owner: Party):
        self._channels = channels
        self._owner = owner

    @property
    def owner(self) -> Party:
        return self._owner

    def send(self, to: Party | str, kind: str, payload: Any) -> WireRecord:
        to = to if isinstance(to, Party) else Party(to)
        return self._channels._deliver(self._owner, to, kind, payload)

    def broadcast(self, kind: str, payload: Any) -> None:
        for other in self._owner.others():
            self.send(other, kind, payload)

    def receive(self, frm: Party | str, kind: str | tuple | None = None) -> WireRecord:
        frm = frm if isinstance(frm, Party) else Party(frm)
        return self._channels._take(self._owner, frm, kind)


def as_int_list(values: Iterable) -> list[int]:
    return [int(v) for v in values]
