"""Sampling-based readouts: RSR, block post-processing, ARSR and Fourier-space
readout with real/imaginary splitting and shifted-reference sign detection.

All readouts take a :class:`~qreadout.gridfn.NormalizedState` (the exact amplitudes
act as the state oracle) and return a :class:`Reconstruction`.  Sampling draws
from the closed-form outcome law of each circuit; the matching gate-level
circuits are built by ``*_circuit`` helpers and used in the test-suite to check
that law.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .gridfn import (FourierCoefficients, GridFunction, GridSpec, NormalizedState, dft_coefficients,
                     l2ns_error, reconstruct_at)
from .statevec import (H, X, Circuit, GateOp, Increment, P, QFT, RegisterLayout, StatePrep, EvenExtension,
                       rng_for, sample_probabilities)

Averaging = Literal["rms", "mean", "harmonic", "fmf"]
HARMONIC_SHIFT = 0.1


@dataclass
class ReadoutConfig:
    """Shared readout settings.

    ``M`` is a per-dimension block size (powers of two) or ``"adaptive"``.
    ``offset`` is added back after readout when the state encodes ``f - offset``;
    ``sign`` flips sign-definite non-positive functions.  ``shots=None`` uses the
    exact outcome probabilities (the infinite-shot limit).  ``boundary`` selects
    the mirror-point rule of the even extension (see :func:`extended_amplitudes`).
    """

    shots: int | None = 10_000
    seed: int | None = 0
    M: Sequence[int] | str | None = None
    sign: int = 1
    offset: float = 0.0
    spline_order: int = 3
    beta: float = 5.0
    tau: float = 4.0
    p_hat: float = 2.0
    boundary: str = "wrap"

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be at least 1 (or None for exact probabilities)")
        if self.spline_order not in (1, 3):
            raise ValueError("spline order must be 1 or 3")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.boundary not in ("wrap", "extrapolate"):
            raise ValueError("boundary must be 'wrap' or 'extrapolate'")


@dataclass
class Reconstruction:
    values: GridFunction
    method: str
    cost: int
    M: tuple[int, ...] | None = None
    diagnostics: dict = field(default_factory=dict)

    def error_vs(self, truth) -> float:
        return l2ns_error(truth, self.values)


def _block_sizes(spec: GridSpec, M: Sequence[int] | int) -> tuple[int, ...]:
    if isinstance(M, (int, np.integer)):
        M = (int(M),) * spec.d
    M = tuple(int(m) for m in M)
    if len(M) != spec.d:
        raise ValueError("one block count per dimension required")
    for m, N in zip(M, spec.shape):
        if m < 1 or m & (m - 1) or m > N:
            raise ValueError(f"block count {m} must be a power of two not exceeding {N}")
    return M


# ---------------------------------------------------------------------------
# real-space readout


def rsr_values(counts: np.ndarray, shots: int, norm: float) -> np.ndarray:
    return norm * np.sqrt(counts / shots)


def rsr_readout(state: NormalizedState, config: ReadoutConfig) -> Reconstruction:
    """Full computational-basis sampling; values A_N sqrt(p~_j)."""
    if config.shots is None:
        counts, shots = state.probabilities(), 1.0
    else:
        rng = rng_for(config.seed, 1)
        counts = sample_probabilities(state.probabilities().ravel(order="F"), config.shots, rng)
        counts, shots = counts.reshape(state.spec.shape, order="F"), config.shots
    vals = config.sign * rsr_values(counts, shots, state.norm) + config.offset
    return Reconstruction(GridFunction(state.spec, vals), "rsr", config.shots or 0,
                          diagnostics={"counts": counts})


def block_view(values: np.ndarray, M: Sequence[int]) -> np.ndarray:
    """Reshape to (M_1, b_1, M_2, b_2, ...) so odd axes run inside a block."""
    shape = []
    for m, N in zip(M, values.shape):
        if N % m:
            raise ValueError("block count must divide the grid count")
        shape += [m, N // m]
    return values.reshape(shape)


def post_process(values: np.ndarray, method: Averaging, M: Sequence[int]) -> np.ndarray:
    """Average fine values over the coarse cells of an ``M`` block partition."""
    v = block_view(np.asarray(values, dtype=float), M)
    inner = tuple(range(1, v.ndim, 2))
    if method == "rms":
        return np.sqrt(np.mean(v**2, axis=inner))
    if method == "mean":
        return np.mean(v, axis=inner)
    if method == "fmf":
        return np.mean(v**4, axis=inner) ** 0.25
    if method == "harmonic":
        na = np.prod([v.shape[i] for i in inner])
        return na / np.sum(1.0 / (v + HARMONIC_SHIFT), axis=inner) - HARMONIC_SHIFT
    raise ValueError(f"unknown averaging {method!r}")


def coarse_centers(M: int, N: int, L: float) -> np.ndarray:
    """Centers of the M coarse cells (mean position of their fine points)."""
    return (np.arange(M) + 0.5 - M / (2 * N)) * L / M


def interpolation_matrix(src: np.ndarray, dst: np.ndarray, order: int = 3) -> np.ndarray:
    """Matrix W with W @ values(src) = spline(dst); linear outside [src[0], src[-1]].

    Cubic (not-a-knot) needs at least four nodes; fewer nodes fall back to linear.
    """
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    m = src.size
    if m == 1:
        return np.ones((dst.size, 1))
    eye = np.eye(m)
    if order == 3 and m >= 4:
        W = CubicSpline(src, eye, axis=0)(dst)
    else:
        W = np.stack([np.interp(dst, src, eye[i]) for i in range(m)], axis=1)
    lo, hi = dst < src[0], dst > src[-1]
    if lo.any():
        t = (dst[lo] - src[0]) / (src[1] - src[0])
        W[lo] = 0.0
        W[lo, 0], W[lo, 1] = 1 - t, t
    if hi.any():
        t = (dst[hi] - src[-2]) / (src[-1] - src[-2])
        W[hi] = 0.0
        W[hi, -2], W[hi, -1] = 1 - t, t
    return W


def interpolate_coarse(coarse: np.ndarray, spec: GridSpec, M: Sequence[int], order: int = 3,
                       axes: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Tensor-product spline from coarse-cell centers to ``axes`` (default: the grid)."""
    axes = spec.axes() if axes is None else axes
    out = np.asarray(coarse, float)
    for l, (m, N, L) in enumerate(zip(M, spec.shape, spec.L)):
        W = interpolation_matrix(coarse_centers(m, N, L), axes[l], order)
        out = np.moveaxis(np.tensordot(W, out, axes=([1], [l])), 0, l)
    return out


def arsr_coarse_values(coarse_counts: np.ndarray, shots: int, norm: float, spec: GridSpec,
                       M: Sequence[int]) -> np.ndarray:
    """A_N sqrt(g~ M/N): the RMS of the fine values inside each coarse cell."""
    ratio = np.prod(M) / spec.size
    return norm * np.sqrt(coarse_counts / shots * ratio)


def _coarse_counts(counts: np.ndarray, M: Sequence[int]) -> np.ndarray:
    v = block_view(counts, M)
    return v.sum(axis=tuple(range(1, v.ndim, 2)))


def arsr_readout(state: NormalizedState, config: ReadoutConfig) -> Reconstruction:
    """Measure the top m_l qubits of each register, then spline the RMS values.

    With ``config.M == "adaptive"`` the block count doubles until successive
    reconstructions stop getting closer (the parameter-free stopping rule).
    """
    spec = state.spec
    if config.M in (None, "adaptive"):
        return _arsr_adaptive(state, config)
    M = _block_sizes(spec, config.M)
    for m, N in zip(M, spec.shape):
        if m > max(N // 2, 1):
            raise ValueError("ARSR block count must not exceed N/2")
    g = _coarse_counts(state.probabilities(), M)
    if config.shots is None:
        counts, shots = g, 1.0
    else:
        rng = rng_for(config.seed, 2)
        counts = sample_probabilities(g.ravel(order="F"), config.shots, rng).reshape(M, order="F")
        shots = config.shots
    coarse = arsr_coarse_values(counts, shots, state.norm, spec, M)
    vals = config.sign * interpolate_coarse(coarse, spec, M, config.spline_order) + config.offset
    return Reconstruction(GridFunction(spec, vals), "arsr", config.shots or 0, M,
                          {"coarse": coarse, "counts": counts})


def _arsr_adaptive(state: NormalizedState, config: ReadoutConfig) -> Reconstruction:
    spec = state.spec
    if config.shots is None:
        fine, shots = state.probabilities(), 1.0
    else:
        rng = rng_for(config.seed, 2)
        fine = sample_probabilities(state.probabilities().ravel(order="F"), config.shots, rng)
        fine, shots = fine.reshape(spec.shape, order="F"), config.shots
    kmax = min(spec.n) - 1
    recons, errs = [], []
    for k in range(1, kmax + 1):
        M = (1 << k,) * spec.d
        coarse = arsr_coarse_values(_coarse_counts(fine, M), shots, state.norm, spec, M)
        recons.append((M, interpolate_coarse(coarse, spec, M, config.spline_order)))
        if len(recons) >= 2:
            errs.append(float(np.linalg.norm(recons[-1][1] - recons[-2][1])))
            if len(errs) >= 2 and errs[-1] > errs[-2]:
                break
    if len(errs) >= 2 and errs[-1] > errs[-2]:
        M, vals = recons[-2]
    else:
        M, vals = recons[-1]
    vals = config.sign * vals + config.offset
    return Reconstruction(GridFunction(spec, vals), "arsr", config.shots or 0, M,
                          {"step_errors": errs, "iterations": len(recons)})


# ---------------------------------------------------------------------------
# Fourier-space readout


def dominant_block(spec: GridSpec, M: Sequence[int]) -> np.ndarray:
    """Mask of k_l in [0,M_l) u [N_l-M_l, N_l) for l < d and k_d in [0, M_d)."""
    masks = []
    for l, (m, N) in enumerate(zip(M, spec.shape)):
        k = np.arange(N)
        if l < spec.d - 1:
            masks.append((k < m) | (k >= N - m))
        else:
            masks.append(k < m)
    out = masks[0]
    for mk in masks[1:]:
        out = np.multiply.outer(out, mk)
    return out


def reference_shift(M: Sequence[int]) -> float:
    """Uniform reference amplitude 1/sqrt(2^d prod M_l) of the sign circuit."""
    return 1.0 / math.sqrt(2 ** len(M) * int(np.prod(M)))


def fsr_magnitude_law(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outcome law (ancilla 0: (Re c)^2, ancilla 1: (Im c)^2) over the full register."""
    return c.real**2, c.imag**2


def fsr_sign_law(c: np.ndarray, block: np.ndarray, shift: float) -> np.ndarray:
    """Outcome law indexed [q, r, k...] of the shifted-reference circuit.

    q selects the real (0) or imaginary (1) part, r the +shift (0) or -shift (1)
    branch: P = (x + s)^2 / 4 on the block, x^2 / 4 elsewhere.
    """
    s = np.where(block, shift, 0.0)
    out = np.empty((2, 2) + c.shape)
    for q, x in enumerate((c.real, c.imag)):
        out[q, 0] = 0.25 * (x + s) ** 2
        out[q, 1] = 0.25 * (x - s) ** 2
    return out


def fsr_magnitudes(state: NormalizedState, M: Sequence[int], shots: int,
                   seed: int | np.random.Generator | None = 0, block: np.ndarray | None = None,
                   coeffs: np.ndarray | None = None):
    """Sampled |Re c| and |Im c| on the dominant block, plus the raw counts."""
    c = dft_coefficients(state).coeffs if coeffs is None else coeffs
    block = dominant_block(state.spec, M) if block is None else block
    pre, pim = fsr_magnitude_law(c)
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, 3)
    cnt = sample_probabilities(np.concatenate([pre.ravel(), pim.ravel()]), shots, rng)
    nre = cnt[: c.size].reshape(c.shape)
    nim = cnt[c.size:].reshape(c.shape)
    are = np.where(block, np.sqrt(nre / shots), 0.0)
    aim = np.where(block, np.sqrt(nim / shots), 0.0)
    return are, aim, (nre, nim)


@dataclass
class SignTable:
    sign_re: np.ndarray
    sign_im: np.ndarray
    tie_re: np.ndarray
    tie_im: np.ndarray

    @property
    def ties(self) -> int:
        return int(self.tie_re.sum() + self.tie_im.sum())


def signs_from_counts(plus: np.ndarray, minus: np.ndarray, block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """sign(e^2 - e~^2) from the two branch counts; exact ties default to +1."""
    diff = plus.astype(np.int64) - minus.astype(np.int64)
    tie = (diff == 0) & block
    sgn = np.where(diff < 0, -1, 1)
    return sgn, tie


def fsr_signs(state: NormalizedState, M: Sequence[int], shots: int,
              seed: int | np.random.Generator | None = 0, coeffs: np.ndarray | None = None) -> SignTable:
    c = dft_coefficients(state).coeffs if coeffs is None else coeffs
    block = dominant_block(state.spec, M)
    law = fsr_sign_law(c, block, reference_shift(M))
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, 4)
    cnt = sample_probabilities(law.ravel(), shots, rng).reshape(law.shape)
    sre, tre = signs_from_counts(cnt[0, 0], cnt[0, 1], block)
    sim, tim = signs_from_counts(cnt[1, 0], cnt[1, 1], block)
    return SignTable(sre, sim, tre, tim)


def adaptive_block(spec: GridSpec, shots: int, p_hat: float = 2.0) -> tuple[int, ...]:
    """M_l = min(N_l/2, 2^ceil(log2(shots) / (2 p_hat - 1 + d)))."""
    e = math.ceil(math.log2(shots) / (2 * p_hat - 1 + spec.d))
    return tuple(max(1, min(N // 2, 1 << e)) for N in spec.shape)


def _split_shots(shots: int) -> tuple[int, int]:
    a = max(1, shots // 2)
    return a, max(1, shots - a)


def fsr_readout(state: NormalizedState, config: ReadoutConfig) -> Reconstruction:
    """Fourier-space readout without extension.

    The shot budget is split evenly between the magnitude and sign circuits.
    With ``shots=None`` the exact block coefficients are used.
    """
    spec = state.spec
    adaptive = config.M in (None, "adaptive")
    coeffs = dft_coefficients(state)
    if config.shots is None:
        if adaptive:
            raise ValueError("the adaptive block rule needs a finite shot count")
        M = _block_sizes(spec, config.M)
        block = dominant_block(spec, M)
        est, keep, signs = np.where(block, coeffs.coeffs, 0.0), block, None
    else:
        s_mag, s_sgn = _split_shots(config.shots)
        M = adaptive_block(spec, s_mag, config.p_hat) if adaptive else _block_sizes(spec, config.M)
        block = dominant_block(spec, M)
        are, aim, (nre, nim) = fsr_magnitudes(state, M, s_mag, rng_for(config.seed, 3), block, coeffs.coeffs)
        signs = fsr_signs(state, M, s_sgn, rng_for(config.seed, 4), coeffs.coeffs)
        est = signs.sign_re * are + 1j * signs.sign_im * aim
        keep = block & ((nre + nim) > config.tau) if adaptive else block
        est = np.where(keep, est, 0.0)
    for m, N in zip(M, spec.shape):
        if m > max(N // 2, 1):
            raise ValueError("FSR block count must not exceed N/2")
    fc = FourierCoefficients(spec, est, state.norm / math.sqrt(spec.size), keep)
    vals = reconstruct_at(fc, M, spec.axes(), check_real=False)
    vals = config.sign * vals + config.offset
    diag = {"coefficients": est, "keep": keep, "signs": signs, "kept": int(keep.sum())}
    return Reconstruction(GridFunction(spec, vals), "fsr", config.shots or 0, M, diag)


# ---------------------------------------------------------------------------
# even extension


def extended_amplitudes(state: NormalizedState, boundary: str = "wrap") -> np.ndarray:
    """Even extension in every dimension: g_J = psi_{(2N-J) mod N} / sqrt2 for J >= N.

    The plain extension gate puts psi_0 at the mirror point J = N.  With
    ``boundary="extrapolate"`` that slice is replaced by the linear extrapolation
    2 psi_{N-1} - psi_{N-2} (the value at x = L), which emulates the boundary
    correction gates needed for non-periodic data.  The result is then not unit
    norm; see :func:`extension_norm`.
    """
    if boundary not in ("wrap", "extrapolate"):
        raise ValueError(f"unknown boundary rule {boundary!r}")
    g = state.amplitudes
    for l, N in enumerate(state.spec.shape):
        J = np.arange(2 * N)
        src = np.where(J < N, J, (2 * N - J) % N)
        g = np.take(g, src, axis=l) / math.sqrt(2)
        if boundary == "extrapolate" and N >= 2:
            idx = [slice(None)] * g.ndim
            idx[l] = N
            g[tuple(idx)] = 2 * np.take(g, N - 1, axis=l) - np.take(g, N - 2, axis=l)
    return g


def extension_norm(state: NormalizedState, boundary: str = "wrap") -> float:
    """Norm of the extended amplitudes (exactly 1 for the plain extension)."""
    if boundary == "wrap":
        return 1.0
    return float(np.linalg.norm(extended_amplitudes(state, boundary)))


def extended_spec(spec: GridSpec) -> GridSpec:
    return GridSpec(tuple(n + 1 for n in spec.n), tuple(2 * L for L in spec.L))


def extension_coefficients(state: NormalizedState, boundary: str = "wrap") -> np.ndarray:
    """Real DFT coefficients of the (unit-normalized) evenly extended amplitudes."""
    g = extended_amplitudes(state, boundary)
    return np.fft.fftn(g / np.linalg.norm(g), norm="ortho").real


def extension_sign_law(c: np.ndarray, M: Sequence[int]) -> np.ndarray:
    """[r, k...] law with a uniform reference over [0, M)^d: (c +- s)^2 / 4."""
    block = np.zeros(c.shape, dtype=bool)
    block[tuple(slice(0, m) for m in M)] = True
    s = np.where(block, 1.0 / math.sqrt(int(np.prod(M))), 0.0)
    return np.stack([0.25 * (c + s) ** 2, 0.25 * (c - s) ** 2])


def reconstruct_extended(cb: np.ndarray, spec: GridSpec, norm: float, axes=None) -> np.ndarray:
    """Evaluate an even cosine-type series from its [0, M)^d block on the original domain.

    ``cb`` holds c_k for 0 <= k_l < M_l of the extended spectrum; c is even in each
    index so c_{-k} = c_k.
    """
    ext = extended_spec(spec)
    axes = spec.axes() if axes is None else axes
    out = np.asarray(cb, float)
    for l, m in enumerate(cb.shape):
        k = np.arange(-(m - 1), m)
        E = np.cos(2 * np.pi * np.outer(axes[l], k) / ext.L[l])
        sel = np.abs(k)
        out = np.moveaxis(np.tensordot(E, np.take(out, sel, axis=l), axes=([1], [l])), 0, l)
    scale = norm * 2 ** (spec.d / 2) / math.sqrt(ext.size)
    return scale * out


def extension_fsr_readout(state: NormalizedState, config: ReadoutConfig) -> Reconstruction:
    """Fourier-space readout of the even extension (real spectrum, block [0,M)^d)."""
    spec = state.spec
    ext = extended_spec(spec)
    adaptive = config.M in (None, "adaptive")
    c = extension_coefficients(state, config.boundary)
    ties = 0
    if config.shots is None:
        if adaptive:
            raise ValueError("the adaptive block rule needs a finite shot count")
        M = _block_sizes(ext, config.M)
        est = c[tuple(slice(0, m) for m in M)]
    else:
        s_mag, s_sgn = _split_shots(config.shots)
        M = adaptive_block(ext, s_mag, config.p_hat) if adaptive else _block_sizes(ext, config.M)
        rng = rng_for(config.seed, 5)
        n_mag = sample_probabilities((c**2).ravel(), s_mag, rng).reshape(c.shape)
        law = extension_sign_law(c, M)
        n_sgn = sample_probabilities(law.ravel(), s_sgn, rng).reshape(law.shape)
        sl = tuple(slice(0, m) for m in M)
        sgn, tie = signs_from_counts(n_sgn[0][sl], n_sgn[1][sl], np.ones(M, bool))
        est = sgn * np.sqrt(n_mag[sl] / s_mag)
        if adaptive:
            est = np.where(n_mag[sl] > config.tau, est, 0.0)
        ties = int(tie.sum())
    for m, N in zip(M, ext.shape):
        if m > N // 2:
            raise ValueError("extension block count must not exceed N_ext/2")
    norm = state.norm * extension_norm(state, config.boundary)
    vals = config.sign * reconstruct_extended(est, spec, norm) + config.offset
    diag = {"coefficients": est, "ties": ties}
    return Reconstruction(GridFunction(spec, vals), "fsr-ext", config.shots or 0, M, diag)


# ---------------------------------------------------------------------------
# gate-level circuits (correctness oracles for the outcome laws)


def fsr_magnitude_circuit(state: NormalizedState) -> tuple[Circuit, RegisterLayout]:
    """Prepare, inverse QFT per register, then fold c_k with c_{-k} = conj(c_k).

    Final layout: data registers, then the real/imaginary selector ancilla.
    """
    lay = RegisterLayout(state.spec.n, ancillas=1)
    q = lay.ancilla(0)
    data = lay.data_qubits()
    c = Circuit(lay.n_total)
    c.append(GateOp(H, q))
    c.append(StatePrep(data, state.flat()))
    for l in range(state.spec.d):
        c.append(QFT(lay.register(l), inverse=True))
    for t in data:
        c.append(GateOp(X, t, controls=(q,)))
    for l in range(state.spec.d):
        c.append(Increment(lay.register(l), controls=(q,)))
    c.append(GateOp(H, q))
    c.append(GateOp(P(-np.pi / 2), q))
    return c, lay


def fsr_sign_circuit(state: NormalizedState, M: Sequence[int]) -> tuple[Circuit, RegisterLayout]:
    """Shifted-reference circuit; ancilla 0 is the selector q, ancilla 1 the branch r."""
    spec = state.spec
    lay = RegisterLayout(spec.n, ancillas=2)
    q, r = lay.ancilla(0), lay.ancilla(1)
    data = lay.data_qubits()
    c = Circuit(lay.n_total)
    c.append(GateOp(H, q))
    c.append(GateOp(H, r))
    c.append(StatePrep(data, state.flat(), controls=(r,)))
    for l in range(spec.d):
        c.append(QFT(lay.register(l), inverse=True, controls=(r,)))
    for t in data:
        c.append(GateOp(X, t, controls=(q, r)))
    for l in range(spec.d):
        c.append(Increment(lay.register(l), controls=(q, r)))
    c.append(GateOp(H, q))
    c.append(GateOp(P(-np.pi / 2), q, controls=(r,)))
    c.append(GateOp(H, q, controls=(r,), ctrl_state=(0,)))
    for l, m in enumerate(M):
        reg = lay.register(l)
        mb = int(m).bit_length() - 1
        for t in reg[:mb]:
            c.append(GateOp(H, t, controls=(r,), ctrl_state=(0,)))
        if l < spec.d - 1:
            c.append(GateOp(H, reg[mb], controls=(r,), ctrl_state=(0,)))
            c.append(Increment(reg[mb:], inverse=True, controls=(r,), ctrl_state=(0,)))
    c.append(GateOp(H, r))
    return c, lay


def extension_magnitude_circuit(state: NormalizedState) -> tuple[Circuit, RegisterLayout]:
    """Prepare, extend each register by one top qubit, inverse QFT per extended register."""
    spec = state.spec
    lay = RegisterLayout(tuple(n + 1 for n in spec.n))
    data = [q for l in range(spec.d) for q in lay.register(l)[:-1]]
    c = Circuit(lay.n_total)
    c.append(StatePrep(tuple(data), state.flat()))
    for l in range(spec.d):
        reg = lay.register(l)
        c.append(EvenExtension(reg[:-1], reg[-1]))
    for l in range(spec.d):
        c.append(QFT(lay.register(l), inverse=True))
    return c, lay


def extension_sign_circuit(state: NormalizedState, M: Sequence[int]) -> tuple[Circuit, RegisterLayout]:
    spec = state.spec
    base, _ = extension_magnitude_circuit(state)
    lay = RegisterLayout(tuple(n + 1 for n in spec.n), ancillas=1)
    r = lay.ancilla(0)
    c = Circuit(lay.n_total)
    c.append(GateOp(H, r))
    c.extend(op.with_controls((r,), (1,)) for op in base.ops)
    for l, m in enumerate(M):
        mb = int(m).bit_length() - 1
        for t in lay.register(l)[:mb]:
            c.append(GateOp(H, t, controls=(r,), ctrl_state=(0,)))
    c.append(GateOp(H, r))
    return c, lay


# ---------------------------------------------------------------------------
# coefficient dump


def write_coefficients_csv(path, recon: Reconstruction) -> None:
    """Rows ``k1,..,kd,re,im,abs_est,sign_re,sign_im`` for the kept coefficients."""
    est = recon.diagnostics["coefficients"]
    keep = recon.diagnostics.get("keep", np.ones(est.shape, bool))
    signs: SignTable | None = recon.diagnostics.get("signs")
    d = est.ndim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"k{l + 1}" for l in range(d)] + ["re", "im", "abs_est", "sign_re", "sign_im"])
        for k in zip(*np.nonzero(keep)):
            v = complex(est[k])
            sr = int(signs.sign_re[k]) if signs is not None else int(np.sign(v.real) or 1)
            si = int(signs.sign_im[k]) if signs is not None else int(np.sign(v.imag) or 1)
            w.writerow([int(i) for i in k] + ["%.17g" % v.real, "%.17g" % v.imag, "%.17g" % abs(v), sr, si])
