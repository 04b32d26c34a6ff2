"""Four-qubit entangled source: state preparation, local basis choice,
projective measurement, phenomenological noise and record encoding.

Qubits are ordered (a, b, c, d); a basis label such as ``"0011"`` is read
left to right, so its index in the amplitude vector is ``int(label, 2)``.
Party A holds qubits a and b, B holds c and C holds d.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

import numpy as np

N_QUBITS = 4
DIM = 2**N_QUBITS

HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)

# labels carrying nonzero weight in the canonical state, with integer weights
# before the 1/(2*sqrt(3)) normalisation
_CANONICAL_TERMS = {
    "0011": 2.0,
    "0101": -1.0,
    "0110": -1.0,
    "1001": -1.0,
    "1010": -1.0,
    "1100": 2.0,
}

Label = Union[str, int, tuple]


def label_index(label: Label) -> int:
    """Map ``"0101"``, ``(0, 1, 0, 1)`` or a plain int to an amplitude index."""
    if isinstance(label, (int, np.integer)):
        idx = int(label)
    elif isinstance(label, str):
        if len(label) != N_QUBITS or set(label) - {"0", "1"}:
            raise ValueError(f"bad basis label {label!r}")
        idx = int(label, 2)
    else:
        bits = tuple(int(x) for x in label)
        if len(bits) != N_QUBITS or set(bits) - {0, 1}:
            raise ValueError(f"bad basis label {label!r}")
        idx = (bits[0] << 3) | (bits[1] << 2) | (bits[2] << 1) | bits[3]
    if not 0 <= idx < DIM:
        raise ValueError(f"basis index {idx} out of range")
    return idx


def index_bits(idx: int) -> tuple[int, int, int, int]:
    return ((idx >> 3) & 1, (idx >> 2) & 1, (idx >> 1) & 1, idx & 1)


@dataclass(frozen=True)
class QuantumState:
    """Pure four-qubit state as a 16-entry complex amplitude vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(DIM).copy()
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def amplitude(self, label: Label) -> complex:
        return complex(self.amplitudes[label_index(label)])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def overlap(self, other: "QuantumState") -> complex:
        """Inner product <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def support(self) -> list[str]:
        return [format(i, "04b") for i in np.flatnonzero(np.abs(self.amplitudes) > 1e-15)]


class Basis(str, Enum):
    Z = "Z"
    X = "X"


@dataclass(frozen=True)
class BasisChoice:
    """One measurement basis per party. A applies its selector to both qubits."""

    a: Basis = Basis.Z
    b: Basis = Basis.Z
    c: Basis = Basis.Z

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, Basis(getattr(self, name)))

    @classmethod
    def uniform(cls, basis: Basis | str) -> "BasisChoice":
        return cls(basis, basis, basis)

    @property
    def same(self) -> bool:
        return self.a == self.b == self.c

    def per_qubit(self) -> tuple[Basis, Basis, Basis, Basis]:
        return (self.a, self.a, self.b, self.c)

    def __str__(self) -> str:
        return f"{self.a.value}{self.b.value}{self.c.value}"


@dataclass(frozen=True)
class JointOutcome:
    a: int
    b: int
    c: int
    d: int
    bases: BasisChoice = BasisChoice()
    detected: bool = True

    @property
    def bits(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    @property
    def index(self) -> int:
        return label_index(self.bits)


@dataclass(frozen=True)
class NoiseModel:
    """Uniform joint-outcome replacement plus a per-window fourfold detection
    probability. The defaults reproduce the observed error ratio (5.47%) and
    the detected/window ratio 12043/48184."""

    p_corrupt: float = 0.0875
    p_detect: float = 0.25

    def __post_init__(self):
        for name in ("p_corrupt", "p_detect"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @staticmethod
    def calibrated(target_qer: float, p_detect: float = 0.25) -> "NoiseModel":
        # 10 of the 16 patterns break the allowed correlations
        return NoiseModel(p_corrupt=target_qer / INVALID_PATTERN_FRACTION, p_detect=p_detect)


def canonical_state() -> QuantumState:
    amps = np.zeros(DIM, dtype=complex)
    for label, weight in _CANONICAL_TERMS.items():
        amps[int(label, 2)] = weight / (2.0 * np.sqrt(3.0))
    return QuantumState(amps)


def _check_unitary(u: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {u.shape}")
    if not np.allclose(u.conj().T @ u, np.eye(2), atol=tol, rtol=0.0):
        raise ValueError("matrix is not unitary")
    return u


def _apply_on_qubit(psi: np.ndarray, u: np.ndarray, qubit: int) -> np.ndarray:
    t = psi.reshape((2,) * N_QUBITS)
    t = np.tensordot(u, t, axes=([1], [qubit]))
    return np.moveaxis(t, 0, qubit).reshape(DIM)


def apply_single_qubit_unitary_to_all(state: QuantumState, u: np.ndarray) -> QuantumState:
    """Return (u x u x u x u)|state>."""
    u = _check_unitary(u)
    psi = state.amplitudes
    for q in range(N_QUBITS):
        psi = _apply_on_qubit(psi, u, q)
    return QuantumState(psi)


def random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-random 2x2 unitary via QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def outcome_probabilities(state: QuantumState, bases: BasisChoice) -> np.ndarray:
    """Exact probabilities of the 16 joint results for the given bases.

    X-basis qubits are rotated by a Hadamard and then read out in Z.
    """
    psi = state.amplitudes
    for q, basis in enumerate(bases.per_qubit()):
        if basis is Basis.X:
            psi = _apply_on_qubit(psi, HADAMARD, q)
    probs = np.abs(psi) ** 2
    return probs / probs.sum()


def sample_outcome(
    state: QuantumState,
    bases: BasisChoice,
    rng: np.random.Generator,
    detected: bool = True,
) -> JointOutcome:
    probs = outcome_probabilities(state, bases)
    idx = int(rng.choice(DIM, p=probs))
    return JointOutcome(*index_bits(idx), bases=bases, detected=detected)


def apply_noise(outcome: JointOutcome, model: NoiseModel, rng: np.random.Generator) -> JointOutcome:
    """With probability ``model.p_corrupt`` replace the four result bits by a
    uniformly random pattern."""
    if rng.random() < model.p_corrupt:
        idx = int(rng.integers(DIM))
        return JointOutcome(*index_bits(idx), bases=outcome.bases, detected=outcome.detected)
    return outcome


def encode_records(outcome: JointOutcome) -> tuple[int, int, int]:
    """(trit for A, bit for B, bit for C). A writes 0 for (1,1), 1 for (0,0)
    and 2 for a mixed pair."""
    a, b = outcome.a, outcome.b
    if a == 1 and b == 1:
        trit = 0
    elif a == 0 and b == 0:
        trit = 1
    else:
        trit = 2
    return trit, outcome.c, outcome.d


def encode_indices(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`encode_records` over amplitude indices."""
    idx = np.asarray(idx, dtype=np.int64)
    a = (idx >> 3) & 1
    b = (idx >> 2) & 1
    trit = np.where(a == b, 1 - a, 2).astype(np.int8)
    return trit, ((idx >> 1) & 1).astype(np.int8), (idx & 1).astype(np.int8)


VALID_TRIPLES = frozenset({(0, 0, 0), (1, 1, 1), (2, 0, 1), (2, 1, 0)})


def _count_invalid_patterns() -> int:
    bad = 0
    for i in range(DIM):
        if encode_records(JointOutcome(*index_bits(i))) not in VALID_TRIPLES:
            bad += 1
    return bad


INVALID_PATTERN_FRACTION = _count_invalid_patterns() / DIM


@dataclass(frozen=True)
class EventBatch:
    """Raw measurement windows. ``bases`` is (n, 3) with 0 = Z, 1 = X for
    parties A, B, C; ``labels`` holds the joint result index per window."""

    bases: np.ndarray
    detected: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def same_basis(self) -> np.ndarray:
        return (self.bases[:, 0] == self.bases[:, 1]) & (self.bases[:, 1] == self.bases[:, 2])

    def outcome(self, i: int) -> JointOutcome:
        bc = BasisChoice(*(Basis.X if x else Basis.Z for x in self.bases[i]))
        return JointOutcome(*index_bits(int(self.labels[i])), bases=bc, detected=bool(self.detected[i]))

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[JointOutcome]) -> "EventBatch":
        outcomes = list(outcomes)
        bases = np.array(
            [[int(o.bases.a is Basis.X), int(o.bases.b is Basis.X), int(o.bases.c is Basis.X)] for o in outcomes],
            dtype=np.int8,
        ).reshape(-1, 3)
        detected = np.array([o.detected for o in outcomes], dtype=bool)
        labels = np.array([o.index for o in outcomes], dtype=np.int64)
        return cls(bases, detected, labels)


class EntangledSource:
    """Emits windows of the four-qubit state measured in random local bases."""

    def __init__(self, noise: NoiseModel | None = None, state: QuantumState | None = None):
        self.noise = noise if noise is not None else NoiseModel()
        self.state = state if state is not None else canonical_state()
        self._cdf = {}
        for k in range(8):
            bc = BasisChoice(*(Basis.X if (k >> s) & 1 else Basis.Z for s in (2, 1, 0)))
            self._cdf[k] = np.cumsum(outcome_probabilities(self.state, bc))

    def emit(self, n: int, rng: np.random.Generator) -> EventBatch:
        if n < 0:
            raise ValueError("window count must be non-negative")
        bases = rng.integers(0, 2, size=(n, 3), dtype=np.int8)
        detected = rng.random(n) < self.noise.p_detect
        u = rng.random(n)
        cls = (bases[:, 0].astype(np.int64) << 2) | (bases[:, 1] << 1) | bases[:, 2]
        labels = np.empty(n, dtype=np.int64)
        for k, cdf in self._cdf.items():
            sel = cls == k
            labels[sel] = np.minimum(np.searchsorted(cdf, u[sel], side="right"), DIM - 1)
        corrupt = rng.random(n) < self.noise.p_corrupt
        replacement = rng.integers(0, DIM, size=n)
        labels = np.where(corrupt, replacement, labels)
        return EventBatch(bases, detected, labels)
