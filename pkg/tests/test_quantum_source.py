import itertools
import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdba.quantum_source import (
    HADAMARD,
    INVALID_PATTERN_FRACTION,
    Basis,
    BasisChoice,
    EntangledSource,
    EventBatch,
    JointOutcome,
    NoiseModel,
    QuantumState,
    apply_noise,
    apply_single_qubit_unitary_to_all,
    canonical_state,
    encode_indices,
    encode_records,
    label_index,
    outcome_probabilities,
    random_unitary,
    sample_outcome,
)

SQ3 = math.sqrt(3.0)


def kron4(u):
    return reduce(np.kron, [u, u, u, u])


def oracle_probs(state, bases):
    """Exact outcome law by building the full 16x16 rotation explicitly."""
    mats = [HADAMARD if b is Basis.X else np.eye(2) for b in bases.per_qubit()]
    psi = reduce(np.kron, mats) @ state.amplitudes
    return np.abs(psi) ** 2


# --- state ---


@pytest.mark.parametrize(
    "label, expected",
    [
        ("0011", 1 / SQ3),
        ("1100", 1 / SQ3),
        ("0101", -1 / (2 * SQ3)),
        ("0110", -1 / (2 * SQ3)),
        ("1001", -1 / (2 * SQ3)),
        ("1010", -1 / (2 * SQ3)),
        ("0000", 0.0),
        ("1111", 0.0),
        ("0111", 0.0),
    ],
)
def test_canonical_amplitudes(label, expected):
    assert canonical_state().amplitude(label) == pytest.approx(expected, abs=1e-12)


def test_canonical_state_invariants():
    s = canonical_state()
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    assert s.support() == ["0011", "0101", "0110", "1001", "1010", "1100"]
    assert s.amplitude("0011") == pytest.approx(0.577350, abs=1e-6)
    assert s.amplitude("0101") == pytest.approx(-0.288675, abs=1e-6)


def test_label_forms_agree():
    assert label_index("0110") == label_index((0, 1, 1, 0)) == label_index(6) == 6
    with pytest.raises(ValueError):
        label_index("012a")
    with pytest.raises(ValueError):
        label_index((0, 1, 2, 0))


def test_state_is_immutable():
    s = canonical_state()
    with pytest.raises(ValueError):
        s.amplitudes[0] = 1.0


# --- U x U x U x U ---


def test_identity_leaves_state_unchanged():
    s = canonical_state()
    out = apply_single_qubit_unitary_to_all(s, np.eye(2))
    np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-15)


def test_hadamard_invariance():
    s = canonical_state()
    out = apply_single_qubit_unitary_to_all(s, HADAMARD)
    assert abs(s.overlap(out)) == pytest.approx(1.0, abs=1e-10)


def test_random_unitaries_match_kron_oracle_and_leave_state_invariant():
    rng = np.random.default_rng(7)
    s = canonical_state()
    for _ in range(100):
        u = random_unitary(rng)
        out = apply_single_qubit_unitary_to_all(s, u)
        np.testing.assert_allclose(out.amplitudes, kron4(u) @ s.amplitudes, atol=1e-12)
        assert out.norm() == pytest.approx(1.0, abs=1e-12)
        assert abs(s.overlap(out)) == pytest.approx(1.0, abs=1e-10)


def test_non_invariant_state_is_detected():
    # |0011> alone is not a singlet-type state; a Hadamard moves it
    s = QuantumState(np.eye(16)[3])
    out = apply_single_qubit_unitary_to_all(s, HADAMARD)
    assert abs(s.overlap(out)) < 0.5


def test_non_unitary_rejected():
    with pytest.raises(ValueError):
        apply_single_qubit_unitary_to_all(canonical_state(), np.array([[1, 1], [0, 1]]))
    with pytest.raises(ValueError):
        apply_single_qubit_unitary_to_all(canonical_state(), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_norm_preserved_for_any_unitary_and_state(seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    s = QuantumState(v / np.linalg.norm(v))
    out = apply_single_qubit_unitary_to_all(s, random_unitary(rng))
    assert out.norm() == pytest.approx(1.0, abs=1e-12)


# --- exact outcome law ---


def test_zzz_probabilities_from_amplitudes():
    p = outcome_probabilities(canonical_state(), BasisChoice.uniform("Z"))
    assert p[label_index("1100")] == pytest.approx(1 / 3, abs=1e-12)
    assert p[label_index("0011")] == pytest.approx(1 / 3, abs=1e-12)
    assert p[label_index("0101")] == pytest.approx(1 / 12, abs=1e-12)
    assert p[label_index("0000")] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("combo", list(itertools.product("ZX", repeat=3)))
def test_outcome_probabilities_match_kron_oracle(combo):
    bc = BasisChoice(*combo)
    np.testing.assert_allclose(
        outcome_probabilities(canonical_state(), bc), oracle_probs(canonical_state(), bc), atol=1e-12
    )


def test_x_basis_law_equals_z_basis_law():
    s = canonical_state()
    np.testing.assert_allclose(
        outcome_probabilities(s, BasisChoice.uniform("X")),
        outcome_probabilities(s, BasisChoice.uniform("Z")),
        atol=1e-12,
    )


def test_mixed_bases_break_correlations():
    p = outcome_probabilities(canonical_state(), BasisChoice("Z", "X", "Z"))
    invalid = sum(p[i] for i in range(16) if encode_records(JointOutcome(*[(i >> k) & 1 for k in (3, 2, 1, 0)])) not in
                  {(0, 0, 0), (1, 1, 1), (2, 0, 1), (2, 1, 0)})
    assert invalid > 0.1


def test_sample_outcome_frequencies():
    rng = np.random.default_rng(3)
    s = canonical_state()
    bc = BasisChoice.uniform("Z")
    n = 20000
    counts = {}
    for _ in range(n):
        o = sample_outcome(s, bc, rng)
        counts[o.bits] = counts.get(o.bits, 0) + 1
    assert counts[(1, 1, 0, 0)] / n == pytest.approx(1 / 3, abs=0.015)
    assert counts[(0, 1, 0, 1)] / n == pytest.approx(1 / 12, abs=0.01)
    assert (0, 0, 0, 0) not in counts


@pytest.mark.parametrize("basis", ["Z", "X"])
def test_source_histogram_within_4_sigma_of_exact_law(basis):
    rng = np.random.default_rng(11)
    src = EntangledSource(NoiseModel(p_corrupt=0.0, p_detect=1.0))
    ev = src.emit(200000, rng)
    want = 0 if basis == "Z" else 1
    sel = np.all(ev.bases == want, axis=1)
    hist = np.bincount(ev.labels[sel], minlength=16)
    n = hist.sum()
    p = oracle_probs(canonical_state(), BasisChoice.uniform(basis))
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(hist - n * p) <= 4 * sigma + 1e-9)


def test_source_mixed_basis_histogram_within_4_sigma():
    rng = np.random.default_rng(12)
    ev = EntangledSource(NoiseModel(0.0, 1.0)).emit(160000, rng)
    for combo in itertools.product((0, 1), repeat=3):
        sel = np.all(ev.bases == np.array(combo), axis=1)
        hist = np.bincount(ev.labels[sel], minlength=16)
        n = hist.sum()
        bc = BasisChoice(*("X" if c else "Z" for c in combo))
        p = oracle_probs(canonical_state(), bc)
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(hist - n * p) <= 4 * sigma + 1e-9), combo


# --- records ---


@pytest.mark.parametrize(
    "bits, expected",
    [
        ((1, 1, 0, 0), (0, 0, 0)),
        ((0, 0, 1, 1), (1, 1, 1)),
        ((0, 1, 0, 1), (2, 0, 1)),
        ((1, 0, 1, 0), (2, 1, 0)),
        ((0, 1, 1, 0), (2, 1, 0)),
        ((1, 0, 0, 1), (2, 0, 1)),
    ],
)
def test_encode_records(bits, expected):
    assert encode_records(JointOutcome(*bits)) == expected


def test_vectorised_encoding_matches_scalar():
    trit, b, c = encode_indices(np.arange(16))
    for i in range(16):
        bits = tuple((i >> k) & 1 for k in (3, 2, 1, 0))
        assert (trit[i], b[i], c[i]) == encode_records(JointOutcome(*bits))


def test_noiseless_encoded_law():
    rng = np.random.default_rng(5)
    ev = EntangledSource(NoiseModel(0.0, 1.0)).emit(100000, rng)
    trit, b, c = encode_indices(ev.labels[ev.same_basis])
    n = len(trit)
    freq = {k: np.mean((trit == k[0]) & (b == k[1]) & (c == k[2])) for k in itertools.product((0, 1, 2), (0, 1), (0, 1))}
    assert freq[(0, 0, 0)] == pytest.approx(1 / 3, abs=0.01 + 3 / math.sqrt(n))
    assert freq[(1, 1, 1)] == pytest.approx(1 / 3, abs=0.01 + 3 / math.sqrt(n))
    assert freq[(2, 0, 1)] == pytest.approx(1 / 6, abs=0.01 + 3 / math.sqrt(n))
    assert freq[(2, 1, 0)] == pytest.approx(1 / 6, abs=0.01 + 3 / math.sqrt(n))
    for k, f in freq.items():
        if k not in {(0, 0, 0), (1, 1, 1), (2, 0, 1), (2, 1, 0)}:
            assert f == 0.0


# --- noise ---


def test_invalid_pattern_fraction_is_ten_sixteenths():
    assert INVALID_PATTERN_FRACTION == 10 / 16


def test_zero_noise_leaves_outcome():
    rng = np.random.default_rng(0)
    o = JointOutcome(1, 1, 0, 0)
    for _ in range(100):
        assert apply_noise(o, NoiseModel(p_corrupt=0.0), rng) == o


def test_full_noise_is_uniform():
    rng = np.random.default_rng(1)
    o = JointOutcome(1, 1, 0, 0)
    n = 32000
    counts = np.zeros(16)
    for _ in range(n):
        counts[apply_noise(o, NoiseModel(p_corrupt=1.0), rng).index] += 1
    np.testing.assert_allclose(counts / n, 1 / 16, atol=0.01)


def test_calibrated_noise_reproduces_error_ratio():
    model = NoiseModel.calibrated(0.0547)
    assert model.p_corrupt == pytest.approx(0.08752)
    rng = np.random.default_rng(2)
    ev = EntangledSource(NoiseModel(0.0875, 1.0)).emit(200000, rng)
    trit, b, c = encode_indices(ev.labels[ev.same_basis])
    ok = ((trit == 0) & (b == 0) & (c == 0)) | ((trit == 1) & (b == 1) & (c == 1)) | ((trit == 2) & (b != c))
    assert 1 - ok.mean() == pytest.approx(0.0547, abs=0.005)


@pytest.mark.parametrize("kw", [{"p_corrupt": -0.1}, {"p_corrupt": 1.5}, {"p_detect": 2.0}])
def test_noise_model_rejects_bad_probabilities(kw):
    with pytest.raises(ValueError):
        NoiseModel(**kw)


# --- events ---


def test_emit_is_reproducible():
    a = EntangledSource().emit(1000, np.random.default_rng(9))
    b = EntangledSource().emit(1000, np.random.default_rng(9))
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.bases, b.bases)
    np.testing.assert_array_equal(a.detected, b.detected)


def test_event_batch_roundtrip():
    outs = [
        JointOutcome(1, 1, 0, 0, BasisChoice("Z", "Z", "Z"), True),
        JointOutcome(0, 1, 1, 0, BasisChoice("X", "Z", "X"), False),
    ]
    batch = EventBatch.from_outcomes(outs)
    assert [batch.outcome(i) for i in range(2)] == outs
    assert batch.same_basis.tolist() == [True, False]
