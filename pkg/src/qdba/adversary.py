"""Traitor behaviours plugged into the three decision points of the protocol:
the commander's send, a lieutenant's forward, and answers to correlation
tests during distribution.

Hooks only ever receive a restricted view holding what the traitor
legitimately knows: its own list and the messages it was sent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from qdba.agreement import ConsistencyParams, Message, Phase1State, build_position_list
from qdba.channels import Party
from qdba.list_distribution import PartyList

Outgoing = tuple[Message, tuple[int, ...]]


@dataclass(frozen=True)
class CommanderView:
    own_list: PartyList
    plan: Message


@dataclass(frozen=True)
class LieutenantView:
    role: Party
    own_list: PartyList
    received: Message
    received_positions: tuple[int, ...]
    phase1: Phase1State
    params: ConsistencyParams = ConsistencyParams()


class AdversaryStrategy:
    """Honest behaviour at every hook. Subclasses override what they corrupt."""

    name = "honest"
    roles: frozenset = frozenset(Party)

    def __init__(self, role: Party | str, seed: int = 0):
        self.role = Party(role)
        if self.role not in self.roles:
            allowed = ", ".join(sorted(p.value for p in self.roles))
            raise ValueError(f"strategy {self.name!r} needs role in {{{allowed}}}, got {self.role.value}")
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def on_commander_send(self, view: CommanderView) -> dict[Party, Outgoing]:
        pos = tuple(build_position_list(view.own_list, view.plan))
        return {Party.B: (view.plan, pos), Party.C: (view.plan, pos)}

    def on_forward(self, view: LieutenantView) -> Outgoing:
        if view.phase1.consistent:
            return view.phase1.plan, tuple(view.phase1.positions)
        return Message.BOT, ()

    def on_test_reply(self, own_list: PartyList, position: int) -> int | None:
        return own_list[position]

    def describe(self) -> dict:
        return {"name": self.name, "role": self.role.value, "seed": self.seed}


class ConflictingCommander(AdversaryStrategy):
    """Sends plan 0 with its genuine 0-positions to one lieutenant and plan 1
    with its genuine 1-positions to the other."""

    name = "conflicting_commander"
    roles = frozenset({Party.A})

    def __init__(self, role="A", seed=0, zero_to: Party | str = Party.B):
        super().__init__(role, seed)
        self.zero_to = Party(zero_to)
        if self.zero_to is Party.A:
            raise ValueError("zero_to must name a lieutenant")

    def on_commander_send(self, view):
        one_to = Party.C if self.zero_to is Party.B else Party.B
        return {
            self.zero_to: (Message.ZERO, tuple(build_position_list(view.own_list, Message.ZERO))),
            one_to: (Message.ONE, tuple(build_position_list(view.own_list, Message.ONE))),
        }


def forge_positions(
    own_list: PartyList, plan: Message, target: int, rng: np.random.Generator
) -> tuple[int, ...]:
    """Positions where the forger's own bit equals ``plan``, sampled down to
    ``target``; if there are too few, pad with random unused positions."""
    L = len(own_list)
    target = max(0, min(int(target), L))
    matching = own_list.positions_of(plan.value)
    if len(matching) >= target:
        chosen = rng.choice(matching, size=target, replace=False)
    else:
        rest = np.setdiff1d(np.arange(1, L + 1), matching)
        pad = rng.choice(rest, size=target - len(matching), replace=False)
        chosen = np.concatenate([matching, pad])
    return tuple(sorted(int(p) for p in chosen))


class ForgingLieutenant(AdversaryStrategy):
    """Forwards a plan (the opposite of the received one when ``flip``) with
    a position list assembled from its own matching bits."""

    name = "forging_lieutenant"
    roles = frozenset({Party.B, Party.C})

    def __init__(self, role="B", seed=0, flip: bool = True, length: int | None = None):
        super().__init__(role, seed)
        self.flip = flip
        self.length = length

    def on_forward(self, view):
        if view.received.is_plan:
            plan = view.received.opposite() if self.flip else view.received
        else:
            plan = Message(int(self.rng.integers(2)))
        target = self.length
        if target is None:
            target = len(view.received_positions) or round(len(view.own_list) / 3)
        return plan, forge_positions(view.own_list, plan, target, self.rng)


class FalseBotLieutenant(AdversaryStrategy):
    """Claims to have received inconsistent data regardless of what arrived."""

    name = "false_bot_lieutenant"
    roles = frozenset({Party.B, Party.C})

    def on_forward(self, view):
        return Message.BOT, ()


def _lie(own_list: PartyList, position: int, rng: np.random.Generator) -> int:
    v = own_list[position]
    if own_list.owner is Party.A:
        return int((v + 1 + rng.integers(2)) % 3)
    return 1 - v


class LyingReplier(AdversaryStrategy):
    """Answers correlation tests with a wrong value with probability ``p_lie``,
    or refuses outright when ``refuse`` is set."""

    name = "lying_replier"

    def __init__(self, role="B", seed=0, p_lie: float = 1.0, refuse: bool = False):
        super().__init__(role, seed)
        if not 0.0 <= p_lie <= 1.0:
            raise ValueError("p_lie must lie in [0, 1]")
        self.p_lie = p_lie
        self.refuse = refuse

    def on_test_reply(self, own_list, position):
        if self.refuse:
            return None
        if self.rng.random() < self.p_lie:
            return _lie(own_list, position, self.rng)
        return own_list[position]


BEHAVIOURS = ("honest", "flip", "bot", "random_list", "replay")


class RandomAdversary(AdversaryStrategy):
    """Draws one behaviour per hook from :data:`BEHAVIOURS` when built.

    Test replies stay honest unless ``lie_in_tests`` is set; most lying
    behaviours push the error ratio over the abort threshold, which would
    hide the agreement-phase fuzzing behind an abort.
    """

    name = "random"

    def __init__(self, role="A", seed=0, lie_in_tests: bool = False):
        super().__init__(role, seed)
        self.lie_in_tests = lie_in_tests
        pick = lambda: BEHAVIOURS[int(self.rng.integers(len(BEHAVIOURS)))]  # noqa: E731
        self.behaviour = {
            "send_B": pick(),
            "send_C": pick(),
            "forward": pick(),
            "test_reply": pick() if lie_in_tests else "honest",
        }
        self._last_reply: int | None = None

    def _random_list(self, L: int) -> tuple[int, ...]:
        n = int(self.rng.integers(0, L + 1))
        return tuple(sorted(int(p) for p in self.rng.choice(np.arange(1, L + 1), size=n, replace=False)))

    def on_commander_send(self, view):
        honest = super().on_commander_send(view)
        out: dict[Party, Outgoing] = {}
        kinds = {Party.B: self.behaviour["send_B"], Party.C: self.behaviour["send_C"]}
        for p in (Party.B, Party.C):
            kind = kinds[p]
            if kind == "flip":
                other = view.plan.opposite()
                out[p] = (other, tuple(build_position_list(view.own_list, other)))
            elif kind == "bot":
                out[p] = (Message.BOT, ())
            elif kind == "random_list":
                out[p] = (view.plan, self._random_list(len(view.own_list)))
            elif kind == "honest":
                out[p] = honest[p]
        for p, q in ((Party.B, Party.C), (Party.C, Party.B)):
            if kinds[p] == "replay":
                out[p] = out.get(q, honest[q]) if kinds[q] != "replay" else honest[p]
        return out

    def on_forward(self, view):
        kind = self.behaviour["forward"]
        if kind == "flip" and view.received.is_plan:
            return view.received.opposite(), view.received_positions
        if kind == "bot":
            return Message.BOT, ()
        if kind == "random_list":
            plan = view.received if view.received.is_plan else Message.ZERO
            return plan, self._random_list(len(view.own_list))
        if kind == "replay":
            # pass the commander's data on verbatim, consistent or not
            return view.received, view.received_positions
        return super().on_forward(view)

    def on_test_reply(self, own_list, position):
        kind = self.behaviour["test_reply"]
        if kind == "honest":
            value = own_list[position]
        elif kind == "flip":
            value = _lie(own_list, position, self.rng)
        elif kind == "bot":
            return None
        elif kind == "random_list":
            value = int(self.rng.integers(3 if own_list.owner is Party.A else 2))
        else:
            value = self._last_reply if self._last_reply is not None else own_list[position]
        self._last_reply = value
        return value

    def describe(self):
        return {**super().describe(), "behaviour": dict(self.behaviour)}


REGISTRY: dict[str, Callable[..., AdversaryStrategy]] = {
    "honest": AdversaryStrategy,
    "conflicting_commander": ConflictingCommander,
    "forging_lieutenant": ForgingLieutenant,
    "false_bot_lieutenant": FalseBotLieutenant,
    "lying_replier": LyingReplier,
    "random": RandomAdversary,
}


def make_strategy(name: str, role: Party | str, seed: int = 0, **params) -> AdversaryStrategy:
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(REGISTRY)}") from None
    return cls(role, seed, **params)


# keyword constructors for the common strategies

def conflicting_commander(seed: int = 0, zero_to: Party | str = Party.B) -> ConflictingCommander:
    return ConflictingCommander(Party.A, seed, zero_to=zero_to)


def forging_lieutenant(flip: bool = True, role: Party | str = Party.B, seed: int = 0,
                       length: int | None = None) -> ForgingLieutenant:
    return ForgingLieutenant(role, seed, flip=flip, length=length)


def false_bot_lieutenant(role: Party | str = Party.B, seed: int = 0) -> FalseBotLieutenant:
    return FalseBotLieutenant(role, seed)


def random_adversary(seed: int, role: Party | str = Party.A, lie_in_tests: bool = False) -> RandomAdversary:
    return RandomAdversary(role, seed, lie_in_tests=lie_in_tests)
