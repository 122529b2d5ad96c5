import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qreadout.statevec import (
    DEFAULT_QUBIT_CAP, QFT, Circuit, EvenExtension, GateOp, H, Increment, MeasurementHistogram, ModularAdd, P,
    PostSelectionError, RegisterLayout, Ry, StatePrep, StateVector, Swap, X, Z, ZeroReflection, apply_gate,
    even_extension, incrementer, marginal, modular_add, post_select, qft, rng_for, sample,
)

from conftest import random_state


def basis(n, k):
    return StateVector.basis(n, k)


def value_of(state):
    idx = np.flatnonzero(np.abs(state.amplitudes) > 1e-12)
    assert idx.size == 1
    return int(idx[0])


# --- layout and state ------------------------------------------------------

def test_layout_counts_and_cap():
    lay = RegisterLayout((3, 2), ancillas=2)
    assert lay.n_total == 7
    assert lay.register(1) == (3, 4)
    assert lay.ancilla(1) == 6
    with pytest.raises(ValueError):
        RegisterLayout((0, 2))
    with pytest.raises(ValueError):
        RegisterLayout((DEFAULT_QUBIT_CAP,), ancillas=1)
    assert RegisterLayout((20,), ancillas=6, cap=30).n_total == 26


def test_state_rejects_bad_sizes_and_norms():
    with pytest.raises(ValueError):
        StateVector(np.ones(3) / np.sqrt(3))
    with pytest.raises(ValueError):
        StateVector(np.array([1.0, 1.0]))
    sub = StateVector(np.array([0.5, 0.0]))  # sub-normalized is allowed
    assert sub.norm_sq == pytest.approx(0.25)


# --- gates -----------------------------------------------------------------

def test_hadamard_x_and_trivial_ry():
    s = apply_gate(basis(1, 0), H, 0)
    assert np.allclose(s.amplitudes, [1 / np.sqrt(2)] * 2, atol=1e-15)
    assert value_of(apply_gate(basis(1, 0), X, 0)) == 1
    b = 1.0
    s = apply_gate(basis(1, 0), Ry(2 * np.arccos(b)), 0)
    assert np.allclose(s.amplitudes, [1, 0])


def test_gate_index_errors():
    with pytest.raises(IndexError):
        apply_gate(basis(2, 0), X, 2)
    with pytest.raises(ValueError):
        apply_gate(basis(2, 0), X, 0, controls=(0,))


def test_controlled_gate_open_and_closed():
    s = apply_gate(basis(2, 0), X, 1, controls=(0,))
    assert value_of(s) == 0
    s = apply_gate(basis(2, 0), X, 1, controls=(0,), ctrl_state=(0,))
    assert value_of(s) == 2


# --- QFT -------------------------------------------------------------------

def test_inverse_qft_of_uniform_is_zero():
    n = 4
    s = StateVector(np.ones(1 << n) / np.sqrt(1 << n))
    out = qft(s, range(n), inverse=True)
    assert np.allclose(out.amplitudes, np.eye(1 << n)[0], atol=1e-12)


@pytest.mark.parametrize("backend", ["fast", "gate"])
def test_qft_roundtrip(rng, backend):
    s = StateVector(random_state(rng, 5))
    out = qft(qft(s, range(5), backend=backend), range(5), inverse=True, backend=backend)
    assert np.allclose(out.amplitudes, s.amplitudes, atol=1e-12)


@pytest.mark.parametrize("backend", ["fast", "gate"])
def test_inverse_qft_equals_classical_dft(rng, backend):
    psi = rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    out = qft(StateVector(psi), range(3), inverse=True, backend=backend)
    j = np.arange(8)
    dft = np.array([np.sum(psi * np.exp(-2j * np.pi * j * k / 8)) for k in range(8)]) / np.sqrt(8)
    assert np.allclose(out.amplitudes, dft, atol=1e-10)


def test_qft_on_register_slice(rng):
    # QFT on the upper register only acts along that axis
    a = random_state(rng, 5)
    out = qft(StateVector(a), (2, 3, 4), inverse=True)
    ref = np.fft.fft(a.reshape(8, 4), axis=0, norm="ortho").reshape(-1)
    assert np.allclose(out.amplitudes, ref, atol=1e-12)


# --- adders ----------------------------------------------------------------

def test_modular_add_examples():
    assert value_of(modular_add(basis(3, 5), range(3), 2)) == 7
    assert value_of(modular_add(basis(3, 5), range(3), 2, inverse=True)) == 3
    with pytest.raises(ValueError):
        modular_add(basis(3, 5), range(3), 8)


@pytest.mark.parametrize("n", range(1, 7))
def test_modular_add_exhaustive(n):
    N = 1 << n
    # a state with distinct amplitudes on every basis index tracks the whole permutation
    a = np.arange(1, N + 1, dtype=complex)
    a /= np.linalg.norm(a)
    for j in range(N):
        for inverse, sgn in ((False, 1), (True, -1)):
            ref = np.empty(N, complex)
            ref[(np.arange(N) + sgn * j) % N] = a
            for backend in ("fast", "gate"):
                out = modular_add(StateVector(a), range(n), j, inverse, backend)
                assert np.array_equal(np.round(out.amplitudes, 12), np.round(ref, 12))


def test_incrementer_wraps_and_respects_controls():
    n = 3
    assert value_of(incrementer(basis(n, 7), range(n))) == 0
    # control qubit 3 in |0>: identity
    assert value_of(incrementer(basis(n + 1, 5), range(n), controls=(3,))) == 5
    assert value_of(incrementer(basis(n + 1, 5 + 8), range(n), controls=(3,))) == 6 + 8


@pytest.mark.parametrize("n", range(1, 7))
def test_incrementer_equals_add_one(rng, n):
    a = random_state(rng, n)
    for backend in ("fast", "gate"):
        inc = incrementer(StateVector(a), range(n), backend=backend)
        add = modular_add(StateVector(a), range(n), 1 % (1 << n), backend=backend)
        assert np.allclose(inc.amplitudes, add.amplitudes, atol=1e-12)


# --- even extension --------------------------------------------------------

def _extend(psi, backend="fast"):
    n = int(np.log2(psi.size))
    a = np.zeros(2 * psi.size, complex)
    a[: psi.size] = psi
    return even_extension(StateVector(a), range(n), n, backend).amplitudes


def test_even_extension_examples():
    g = _extend(np.array([1.0, 0, 0, 0]))
    assert np.allclose(g, np.array([1, 0, 0, 0, 1, 0, 0, 0]) / np.sqrt(2), atol=1e-12)
    g = _extend(np.full(4, 0.5))
    assert np.allclose(g, np.full(8, 0.5 / np.sqrt(2)), atol=1e-12)


def test_even_extension_needs_clean_ancilla():
    a = np.zeros(8, complex)
    a[4] = 1.0
    with pytest.raises(ValueError):
        even_extension(StateVector(a), range(2), 2)


@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_even_extension_mirror_law_and_real_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    psi = random_state(rng, n, real=True)
    N = psi.size
    for backend in ("fast", "gate") if n <= 4 else ("fast",):
        g = _extend(psi, backend)
        J = np.arange(2 * N)
        ref = np.where(J < N, psi[J % N], psi[(2 * N - J) % N]) / np.sqrt(2)
        assert np.allclose(g, ref, atol=1e-12)
        assert np.max(np.abs(np.fft.fft(g).imag)) < 1e-10


# --- random circuits: unitarity and backend agreement ----------------------

def _random_circuit(rng, n, length=12):
    c = Circuit(n)
    for _ in range(length):
        kind = rng.integers(0, 8)
        q = list(rng.permutation(n))
        if kind == 0:
            c.append(GateOp([H, X, Z][rng.integers(0, 3)], int(q[0])))
        elif kind == 1:
            c.append(GateOp(Ry(rng.uniform(0, 2 * np.pi)), int(q[0]), controls=(int(q[1]),) if n > 1 else ()))
        elif kind == 2:
            c.append(GateOp(P(rng.uniform(0, 2 * np.pi)), int(q[0])))
        elif kind == 3 and n >= 2:
            c.append(Swap(int(q[0]), int(q[1])))
        else:
            m = int(rng.integers(1, n + 1))
            lo = int(rng.integers(0, n - m + 1))
            reg = tuple(range(lo, lo + m))
            ctrl = tuple(int(x) for x in q if x not in reg)[:1] if rng.random() < 0.5 else ()
            if kind == 4:
                c.append(QFT(reg, bool(rng.integers(0, 2)), controls=ctrl))
            elif kind == 5:
                c.append(Increment(reg, bool(rng.integers(0, 2)), controls=ctrl))
            elif kind == 6:
                c.append(ModularAdd(reg, int(rng.integers(0, 1 << m)), controls=ctrl))
            else:
                psi = random_state(rng, m)
                c.append(StatePrep(reg, psi, controls=ctrl))
    return c


def test_backend_equivalence_100_random_circuits():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(1, 9))
        c = _random_circuit(rng, n)
        s = StateVector(random_state(rng, n))
        fast = c.run(s, "fast").amplitudes
        gate = c.run(s, "gate").amplitudes
        worst = max(worst, float(np.max(np.abs(fast - gate))))
        assert abs(np.linalg.norm(fast) - 1) < 1e-12
    assert worst < 1e-10


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_unitarity_and_inverse(n, seed):
    rng = np.random.default_rng(seed)
    c = _random_circuit(rng, n, 8)
    s = StateVector(random_state(rng, n))
    out = c.run(s)
    assert abs(out.norm_sq - 1) < 1e-12
    back = c.inverse().run(out)
    assert np.allclose(back.amplitudes, s.amplitudes, atol=1e-10)


def test_state_prep_maps_zero_to_psi(rng):
    psi = random_state(rng, 4)
    for backend in ("fast", "gate"):
        out = Circuit(4, [StatePrep(tuple(range(4)), psi)]).run(backend=backend)
        assert np.allclose(out.amplitudes, psi, atol=1e-12)


def test_zero_reflection():
    s = StateVector(np.full(4, 0.5))
    out = Circuit(2, [ZeroReflection((0, 1))]).run(s, "gate")
    assert np.allclose(out.amplitudes, [-0.5, 0.5, 0.5, 0.5])


# --- sampling --------------------------------------------------------------

def test_sample_basis_state():
    h = sample(basis(3, 0), None, 100, seed=1)
    assert h.as_dict() == {0: 100}
    assert h.shots == 100


def test_sample_law_of_large_numbers():
    s = StateVector(np.full(4, 0.5))
    shots = 1_000_000
    h = sample(s, None, shots, seed=3)
    sigma = np.sqrt(0.25 * 0.75 / shots)
    assert np.all(np.abs(h.frequencies() - 0.25) < 3 * sigma)


def test_sampling_error_bound_beta5():
    # |p~ - p| <= 5 sqrt(p(1-p)/shots) in at least 99% of trials
    p = np.array([0.5, 0.3, 0.15, 0.05])
    s = StateVector(np.sqrt(p))
    shots = 2000
    ok = 0
    for t in range(1000):
        f = sample(s, None, shots, seed=t).frequencies()
        ok += bool(np.all(np.abs(f - p) <= 5 * np.sqrt(p * (1 - p) / shots)))
    assert ok >= 990


def test_sample_marginal_and_merge(rng):
    a = random_state(rng, 3)
    s = StateVector(a)
    h1 = sample(s, (2,), 500, seed=1)
    h2 = sample(s, (2,), 300, seed=2)
    m = h1.merge(h2)
    assert m.shots == 800 and m.counts.size == 2
    with pytest.raises(ValueError):
        h1.merge(sample(s, (1,), 10, seed=0))
    p = marginal(s, (2,))
    assert p[1] == pytest.approx(np.sum(np.abs(a[4:]) ** 2))


@given(st.integers(0, 10_000), st.integers(1, 5000))
def test_sampling_deterministic(seed, shots):
    s = StateVector(np.sqrt(np.array([0.1, 0.2, 0.3, 0.4])))
    a = sample(s, None, shots, seed=seed)
    b = sample(s, None, shots, seed=seed)
    assert np.array_equal(a.counts, b.counts)
    assert a.shots == shots


def test_counter_based_streams_are_independent():
    a = rng_for(5, 1).random(4)
    b = rng_for(5, 2).random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(rng_for(5, 1).random(4), a)


def test_histogram_shots_are_counts_sum():
    h = MeasurementHistogram((0, 1), np.array([1, 2, 3, 4]))
    assert h.shots == 10
    assert np.allclose(h.frequencies(), [0.1, 0.2, 0.3, 0.4])


# --- post-selection --------------------------------------------------------

def test_post_select_bell_and_product(rng):
    bell = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    st_, p = post_select(bell, [0], 0)
    assert p == pytest.approx(0.5)
    assert np.allclose(st_.amplitudes, [1, 0, 0, 0])
    psi = random_state(rng, 2)
    prod = np.zeros(8, complex)
    prod[0::2] = psi  # qubit 0 is |0>
    st_, p = post_select(StateVector(prod), [0], 0)
    assert p == pytest.approx(1.0)
    assert np.allclose(st_.amplitudes[0::2], psi)


def test_post_select_zero_probability():
    with pytest.raises(PostSelectionError):
        post_select(basis(2, 0), [1], 1)


@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_post_select_probabilities(n, seed):
    rng = np.random.default_rng(seed)
    s = StateVector(random_state(rng, n))
    qs = [int(q) for q in rng.choice(n, size=min(2, n), replace=False)]
    m = marginal(s, qs)
    total = 0.0
    for outcome, bits in enumerate(itertools.product([0, 1], repeat=len(qs))):
        bits = [(outcome >> i) & 1 for i in range(len(qs))]
        if m[outcome] < 1e-15:
            continue
        _, p = post_select(s, qs, bits)
        assert abs(p - m[outcome]) < 1e-12
        total += p
    assert abs(total - 1) < 1e-12
