"""Classical agreement phase.

The commander sends each lieutenant a plan together with every position of
its trit list holding that plan. A lieutenant checks the claim against its
own bit list, forwards either the claim or ``BOT`` to the other lieutenant,
and then picks one of the six outcomes below (plus a fail-safe for data that
cannot arise with a single traitor).

====  =================  ========================  ======================
case  own phase 1        peer message              result
====  =================  ========================  ======================
iia   consistent m       consistent m' == m        follow m
iib   consistent m       consistent m' != m        fallback 0, commander
iic   consistent m       BOT                       follow m
iid   consistent m       inconsistent              follow m, peer
iie   inconsistent       consistent m'             follow m', commander
iif   inconsistent       BOT                       fallback 0, commander
x     inconsistent       inconsistent              fallback 0, both
====  =================  ========================  ======================
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union

import numpy as np

from qdba.channels import Endpoint, Party, WireRecord
from qdba.list_distribution import PartyList


class Message(Enum):
    ZERO = 0
    ONE = 1
    BOT = "bot"

    @classmethod
    def plan(cls, value: int | "Message") -> "Message":
        if isinstance(value, Message):
            if value is Message.BOT:
                raise ValueError("BOT is not a plan")
            return value
        if value not in (0, 1):
            raise ValueError(f"a plan is 0 or 1, got {value!r}")
        return cls(int(value))

    @property
    def is_plan(self) -> bool:
        return self is not Message.BOT

    def opposite(self) -> "Message":
        if self is Message.BOT:
            raise ValueError("BOT has no opposite")
        return Message(1 - self.value)

    def __str__(self) -> str:
        return "⊥" if self is Message.BOT else str(self.value)


FALLBACK_PLAN = Message.ZERO


@dataclass(frozen=True)
class PositionList:
    """Strictly increasing 1-based positions."""

    positions: tuple[int, ...] = ()

    def __post_init__(self):
        pos = tuple(int(p) for p in self.positions)
        if any(p < 1 for p in pos):
            raise ValueError("positions are 1-based")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.int64)


PositionsLike = Union[PositionList, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class ConsistencyParams:
    """``delta`` bounds the deviation of the claimed list length from L/3;
    ``epsilon`` bounds the fraction of claimed positions whose local bit
    differs from the announced plan.

    The length band is widened to ``length_sigmas`` binomial standard
    deviations of Binomial(L, 1/3) when that is wider than ``delta * L``, so
    short genuine lists are not rejected. ``length_sigmas = 0`` gives the bare
    ``[(1/3 - delta) L, (1/3 + delta) L]`` band.
    """

    delta: float = 0.05
    epsilon: float = 0.15
    length_sigmas: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0 / 3.0:
            raise ValueError(f"delta must lie in [0, 1/3), got {self.delta}")
        if not 0.0 < self.epsilon < 1.0 / 3.0:
            raise ValueError(f"epsilon must lie in (0, 1/3), got {self.epsilon}")
        if self.length_sigmas < 0:
            raise ValueError(f"length_sigmas must be non-negative, got {self.length_sigmas}")

    def length_bounds(self, length: int) -> tuple[float, float]:
        half = max(self.delta * length, self.length_sigmas * math.sqrt(length * 2.0 / 9.0))
        return (length / 3.0 - half, length / 3.0 + half)

    def max_mismatches(self, n: int) -> int:
        # guard against 0.15 * 60 evaluating to 8.999...
        return math.floor(self.epsilon * n + 1e-9)


@dataclass(frozen=True)
class Consistency:
    ok: bool
    reason: str | None = None
    n: int = 0
    mismatches: int = 0

    def __bool__(self) -> bool:
        return self.ok


def build_position_list(l_a: PartyList, plan: Message | int) -> PositionList:
    if l_a.owner is not Party.A:
        raise ValueError("position lists are built from the commander's list")
    plan = Message.plan(plan)
    return PositionList(tuple(l_a.positions_of(plan.value).tolist()))


def _as_positions(claimed: PositionsLike, length: int) -> np.ndarray | None:
    if isinstance(claimed, PositionList):
        arr = claimed.as_array()
    else:
        try:
            arr = np.asarray(list(claimed))
        except TypeError:
            return None
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            return None
        arr = arr.astype(np.int64).reshape(-1)
        if arr.size > 1 and np.any(np.diff(arr) <= 0):
            return None
    if arr.size and (arr[0] < 1 or arr[-1] > length):
        return None
    return arr


def check_consistency(
    m: Message | int,
    claimed: PositionsLike,
    local: PartyList,
    params: ConsistencyParams = ConsistencyParams(),
) -> Consistency:
    """Length check against L/3 and content check against the local bits.

    A claimed position for plan m must carry bit m in a lieutenant's list,
    since trit 0 only ever pairs with bits 00 and trit 1 with bits 11.
    """
    if local.owner is Party.A:
        raise ValueError("consistency is checked against a lieutenant's list")
    if isinstance(m, Message) and m is Message.BOT:
        return Consistency(False, "bot")
    m = Message.plan(m)
    L = len(local)
    arr = _as_positions(claimed, L)
    if arr is None:
        return Consistency(False, "malformed")
    n = int(arr.size)
    lo, hi = params.length_bounds(L)
    if not lo <= n <= hi:
        return Consistency(False, "length", n=n)
    mismatches = int(np.count_nonzero(local.entries[arr - 1] != m.value))
    if mismatches > params.max_mismatches(n):
        return Consistency(False, "content", n=n, mismatches=mismatches)
    return Consistency(True, None, n=n, mismatches=mismatches)


@dataclass(frozen=True)
class Phase1State:
    consistent: bool
    plan: Message | None = None
    positions: PositionList | None = None

    @classmethod
    def got(cls, plan: Message, positions: PositionsLike) -> "Phase1State":
        if not isinstance(positions, PositionList):
            positions = PositionList(tuple(int(p) for p in positions))
        return cls(True, Message.plan(plan), positions)

    @classmethod
    def inconsistent(cls) -> "Phase1State":
        return cls(False)


def lieutenant_phase1(
    m: Message | int,
    claimed: PositionsLike,
    local: PartyList,
    params: ConsistencyParams = ConsistencyParams(),
) -> Phase1State:
    if isinstance(m, Message) and m is Message.BOT:
        # the commander may not send BOT; treat it as inconsistent data
        return Phase1State.inconsistent()
    if check_consistency(m, claimed, local, params):
        return Phase1State.got(Message.plan(m), claimed)
    return Phase1State.inconsistent()


class Traitor(str, Enum):
    NONE = "none"
    COMMANDER = "commander"
    PEER = "peer"
    COMMANDER_AND_PEER = "commander_and_peer"


@dataclass(frozen=True)
class Decision:
    plan: Message
    fallback: bool
    traitor: Traitor
    case: str
    outside_model: bool = False

    @property
    def action(self) -> str:
        return "fallback" if self.fallback else "follow"

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "plan": self.plan.value,
            "traitor": self.traitor.value,
            "case": self.case,
            "outside_model": self.outside_model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Decision":
        return cls(
            Message.plan(d["plan"]), d["action"] == "fallback", Traitor(d["traitor"]),
            d["case"], bool(d.get("outside_model", False)),
        )

    def __str__(self) -> str:
        what = f"fallback({self.plan})" if self.fallback else f"follow({self.plan})"
        return f"{what} traitor={self.traitor.value} case={self.case}"


def _follow(plan: Message, traitor: Traitor, case: str) -> Decision:
    return Decision(plan, False, traitor, case)


def _fallback(traitor: Traitor, case: str, outside: bool = False) -> Decision:
    return Decision(FALLBACK_PLAN, True, traitor, case, outside)


def decide(
    own: Phase1State,
    peer_msg: Message,
    peer_list: PositionsLike,
    local: PartyList,
    params: ConsistencyParams = ConsistencyParams(),
) -> Decision:
    peer_ok = peer_msg.is_plan and bool(check_consistency(peer_msg, peer_list, local, params))
    if own.consistent:
        m = own.plan
        if peer_msg is Message.BOT:
            return _follow(m, Traitor.NONE, "iic")
        if not peer_ok:
            return _follow(m, Traitor.PEER, "iid")
        if peer_msg is m:
            return _follow(m, Traitor.NONE, "iia")
        return _fallback(Traitor.COMMANDER, "iib")
    if peer_msg is Message.BOT:
        return _fallback(Traitor.COMMANDER, "iif")
    if peer_ok:
        return _follow(peer_msg, Traitor.COMMANDER, "iie")
    return _fallback(Traitor.COMMANDER_AND_PEER, "x", outside=True)


# --- wire format --------------------------------------------------------------


def encode_message(m: Message, positions: Iterable[int]) -> tuple[str, dict]:
    pos = [int(p) for p in positions]
    if m is Message.BOT:
        return "bot", {"positions": pos}
    return "plan", {"plan": m.value, "positions": pos}


def decode_message(rec: WireRecord) -> tuple[Message, list[int]]:
    if rec.kind == "bot":
        return Message.BOT, list(rec.payload.get("positions", []))
    if rec.kind == "plan":
        return Message.plan(rec.payload["plan"]), list(rec.payload["positions"])
    raise ValueError(f"not an agreement message: {rec.kind}")


def send_message(endpoint: Endpoint, to: Party, m: Message, positions: Iterable[int]) -> WireRecord:
    kind, payload = encode_message(m, positions)
    return endpoint.send(to, kind, payload)


def commander_send(plan: Message | int, l_a: PartyList, endpoint: Endpoint) -> PositionList:
    """Loyal commander: the same plan and position list to both lieutenants."""
    plan = Message.plan(plan)
    positions = build_position_list(l_a, plan)
    for lieutenant in (Party.B, Party.C):
        send_message(endpoint, lieutenant, plan, positions)
    return positions


def forward(state: Phase1State, endpoint: Endpoint, peer: Party) -> WireRecord:
    if state.consistent:
        return send_message(endpoint, peer, state.plan, state.positions)
    return send_message(endpoint, peer, Message.BOT, ())
