"""Simulation of a three-party quantum protocol for detectable Byzantine
agreement and liar detection built on four-qubit correlated lists."""

from qdba.agreement import (
    ConsistencyParams,
    Decision,
    Message,
    Phase1State,
    PositionList,
    Traitor,
    build_position_list,
    check_consistency,
    decide,
    lieutenant_phase1,
)
from qdba.config import Config
from qdba.harness import SessionResult, monte_carlo, run_session, verify_dba
from qdba.list_distribution import Party, PartyList, TripleRecord, Verdict
from qdba.quantum_source import Basis, NoiseModel, QuantumState, canonical_state

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "Config",
    "ConsistencyParams",
    "Decision",
    "Message",
    "NoiseModel",
    "Party",
    "PartyList",
    "Phase1State",
    "PositionList",
    "QuantumState",
    "SessionResult",
    "Traitor",
    "TripleRecord",
    "Verdict",
    "build_position_list",
    "canonical_state",
    "check_consistency",
    "decide",
    "lieutenant_phase1",
    "monte_carlo",
    "run_session",
    "verify_dba",
]
