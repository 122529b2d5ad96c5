"""Amplitude-estimation readouts.

The engine estimates a real amplitude ``a`` in [-1, 1] through shifted oracles
``A[b]`` whose all-zeros amplitude is ``(a + b)/2``.  Stage 0 runs ``A[+b0]``
and ``A[-b0]`` without amplification, which fixes the sign and gives a first
interval.  Every later stage re-centers the shift at the lower end of the
current interval, chooses a Grover power that keeps the phase monotone on the
interval, and narrows it with a Hoeffding bound on the success frequency.

Query convention: each application of ``A`` or ``A^dagger`` counts as one
query, so a shot at Grover power ``k`` costs ``2k + 1`` queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .gridfn import FourierCoefficients, GridFunction, NormalizedState, dft_coefficients, reconstruct_at
from .readout_sampling import (Reconstruction, dominant_block, extended_spec, extension_coefficients,
                               extension_magnitude_circuit, fsr_magnitude_circuit, reconstruct_extended)
from .statevec import (H, Circuit, GateOp, GlobalPhase, ModularAdd, RegisterLayout, Ry, StatePrep, StateVector,
                       ZeroReflection, rng_for)

OracleKind = Literal["real", "fourier-ext", "fourier-re", "fourier-im"]


class ScheduleExhausted(RuntimeError):
    """The interval did not reach the target width within the stage budget."""


# ---------------------------------------------------------------------------
# oracles


@dataclass
class ShiftOracle:
    """A[b]: all-zeros amplitude (a + b)/2 for the selected target quantity a."""

    kind: OracleKind
    state: NormalizedState
    index: int | tuple[int, ...]
    b: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.b <= 1.0:
            raise ValueError("shift must lie in [-1, 1]")
        if self.kind not in ("real", "fourier-ext", "fourier-re", "fourier-im"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")

    def _index_tuple(self, shape) -> tuple[int, ...]:
        if isinstance(self.index, (int, np.integer)):
            return tuple(int(v) for v in np.unravel_index(int(self.index), shape, order="F"))
        return tuple(int(v) for v in self.index)

    def target(self) -> float:
        """The quantity a being estimated, computed from the exact state."""
        if self.kind == "real":
            return float(self.state.amplitudes[self._index_tuple(self.state.spec.shape)].real)
        if self.kind == "fourier-ext":
            c = extension_coefficients(self.state)
            return float(c[self._index_tuple(c.shape)])
        c = dft_coefficients(self.state).coeffs[self._index_tuple(self.state.spec.shape)]
        return float(c.real if self.kind == "fourier-re" else c.imag)

    def amplitude(self) -> float:
        return 0.5 * (self.target() + self.b)

    def shifted(self, b: float) -> "ShiftOracle":
        return ShiftOracle(self.kind, self.state, self.index, b)

    def circuit(self) -> Circuit:
        """Gate-level A[b]; the shift ancilla is the top qubit."""
        spec = self.state.spec
        if self.kind == "real":
            inner = Circuit(spec.size.bit_length() - 1, [StatePrep(tuple(range(spec.size.bit_length() - 1)),
                                                                   self.state.flat())])
            flat = int(np.ravel_multi_index(self._index_tuple(spec.shape), spec.shape, order="F"))
        elif self.kind == "fourier-ext":
            inner, _ = extension_magnitude_circuit(self.state)
            shape = extended_spec(spec).shape
            flat = int(np.ravel_multi_index(self._index_tuple(shape), shape, order="F"))
        else:
            inner, _ = fsr_magnitude_circuit(self.state)
            part = 0 if self.kind == "fourier-re" else 1
            flat = int(np.ravel_multi_index(self._index_tuple(spec.shape), spec.shape, order="F"))
            flat += part * spec.size
        n = inner.n
        s = n
        reg = tuple(range(n))
        c = Circuit(n + 1)
        c.append(GateOp(H, s))
        c.extend(op.with_controls((s,), (1,)) for op in inner.ops)
        c.append(ModularAdd(reg, flat, inverse=True, controls=(s,)))
        c.append(GateOp(Ry(2 * math.acos(self.b)), 0, controls=(s,), ctrl_state=(0,)))
        c.append(GateOp(H, s))
        return c


def build_shift_oracle(kind: OracleKind, state: NormalizedState, index, b: float) -> ShiftOracle:
    return ShiftOracle(kind, state, index, b)


def grover_circuit(oracle: ShiftOracle, k: int) -> Circuit:
    """A followed by k applications of Q = -A S0 A^dagger S0."""
    if k < 0:
        raise ValueError("Grover power must be non-negative")
    A = oracle.circuit()
    n = A.n
    allq = tuple(range(n))
    Q = [ZeroReflection(allq)] + A.inverse().ops + [ZeroReflection(allq)] + A.ops + [GlobalPhase(math.pi)]
    return Circuit(n, A.ops + Q * k)


def grover_apply(oracle: ShiftOracle, k: int, backend: str = "fast") -> StateVector:
    return grover_circuit(oracle, k).run(backend=backend)


# ---------------------------------------------------------------------------
# engine


@dataclass
class RqaeConfig:
    eps: float
    gamma: float = 0.05
    q: int = 2
    b0: float = 0.5
    stage0_delta: float = 0.125
    stage_delta: float = 0.25

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError("target error must lie in (0, 0.5)")
        if not 0 < self.gamma < 1:
            raise ValueError("confidence parameter must lie in (0, 1)")
        if self.q < 2:
            raise ValueError("amplification ratio must be at least 2")

    @property
    def max_stages(self) -> int:
        return math.ceil(math.log(math.pi / (4 * self.eps)) / math.log(self.q)) + 3


@dataclass
class RqaeResult:
    estimate: float
    halfwidth: float
    queries: int
    max_power: int
    stages: int
    history: list = field(default_factory=list)

    @property
    def interval(self) -> tuple[float, float]:
        return self.estimate - self.halfwidth, self.estimate + self.halfwidth


Sampler = Callable[[float, int, int], int]


def analytic_sampler(a: float, rng: np.random.Generator) -> Sampler:
    """Success counts from the closed-form law sin^2((2k+1) asin((a+b)/2))."""

    def run(b: float, k: int, shots: int) -> int:
        theta = math.asin(max(-1.0, min(1.0, 0.5 * (a + b))))
        p = math.sin((2 * k + 1) * theta) ** 2
        return int(rng.binomial(shots, p))

    return run


def statevector_sampler(oracle: ShiftOracle, rng: np.random.Generator, backend: str = "fast") -> Sampler:
    """Success counts from simulating the Grover circuit and reading |0...0>."""

    def run(b: float, k: int, shots: int) -> int:
        st = grover_apply(oracle.shifted(b), k, backend)
        p = min(1.0, abs(st.amplitudes[0]) ** 2)
        return int(rng.binomial(shots, p))

    return run


def _odd_ceil_power(x: float) -> int:
    """Smallest k with 2k + 1 >= x."""
    return max(0, math.ceil((x - 1) / 2))


def rqae_run(sampler: Sampler, config: RqaeConfig) -> RqaeResult:
    T = config.max_stages
    log_term = math.log(2 * (T + 1) / config.gamma)
    d0, b0 = config.stage0_delta, config.b0
    n0 = math.ceil((log_term + math.log(2)) / (2 * d0 * d0))
    p_plus = sampler(b0, 0, n0) / n0
    p_minus = sampler(-b0, 0, n0) / n0
    queries = 2 * n0
    diff = p_plus - p_minus
    lo = max(-1.0, (diff - 2 * d0) / b0)
    hi = min(1.0, (diff + 2 * d0) / b0)
    history = [(0, 0.0, lo, hi)]
    delta = config.stage_delta
    shots = math.ceil(log_term / (2 * delta * delta))
    k_prev, k_max, stage = 0, 0, 0
    while (hi - lo) / 2 > config.eps:
        stage += 1
        if stage > T:
            raise ScheduleExhausted(f"interval half-width {(hi - lo) / 2:.3g} after {T} stages")
        e = (hi - lo) / 2
        target = max(config.eps, e / config.q)
        k_need = _odd_ceil_power(math.pi / (4 * target))
        k_mono = int(math.floor((math.pi / (2 * math.asin(min(1.0, e))) - 1) / 2 + 1e-9))
        k_cap = max(1, config.q * k_prev)
        k = max(0, min(k_need, k_mono, k_cap))
        K = 2 * k + 1
        b = -lo
        p_hat = sampler(b, k, shots) / shots
        queries += shots * K
        t_lo = math.asin(math.sqrt(max(0.0, p_hat - delta))) / K
        t_hi = math.asin(math.sqrt(min(1.0, p_hat + delta))) / K
        n_lo = lo + 2 * math.sin(t_lo)
        n_hi = lo + 2 * math.sin(t_hi)
        if n_lo > hi or n_hi < lo:
            lo, hi = n_lo, n_hi
        else:
            lo, hi = max(lo, n_lo), min(hi, n_hi)
        history.append((k, b, lo, hi))
        k_prev = k
        k_max = max(k_max, k)
    return RqaeResult(0.5 * (lo + hi), 0.5 * (hi - lo), queries, k_max, stage, history)


def rqae_estimate(target: ShiftOracle | float, config: RqaeConfig, seed: int | np.random.Generator | None = 0,
                  backend: str = "analytic") -> RqaeResult:
    """Estimate an amplitude to half-width ``config.eps`` with confidence 1 - gamma.

    ``backend="analytic"`` samples the closed-form success law; ``"fast"`` and
    ``"gate"`` simulate the Grover circuits of an oracle.
    """
    rng = seed if isinstance(seed, np.random.Generator) else rng_for(seed, 7)
    if backend == "analytic":
        a = target.target() if isinstance(target, ShiftOracle) else float(target)
        if abs(a) > 1:
            raise ValueError("amplitude outside [-1, 1]")
        sampler = analytic_sampler(a, rng)
    else:
        if not isinstance(target, ShiftOracle):
            raise TypeError("circuit backends need an oracle")
        sampler = statevector_sampler(target, rng, backend)
    return rqae_run(sampler, config)


# ---------------------------------------------------------------------------
# readouts


def rsqae_readout(state: NormalizedState, targets: Sequence[int] | None, config: RqaeConfig,
                  seed: int = 0) -> Reconstruction:
    """Per-grid-point amplitude estimation; unmeasured points stay zero."""
    spec = state.spec
    flat = state.flat()
    targets = range(spec.size) if targets is None else targets
    vals = np.zeros(spec.size)
    queries = 0
    depth = 0
    for j in targets:
        res = rqae_estimate(float(flat[j].real), config, rng_for(seed, 11, int(j)))
        vals[j] = state.norm * res.estimate
        queries += res.queries
        depth = max(depth, res.max_power)
    gf = GridFunction(spec, vals.reshape(spec.shape, order="F"))
    return Reconstruction(gf, "rsqae", queries, diagnostics={"max_power": depth, "targets": list(targets)})


def fsqae_readout(state: NormalizedState, M: Sequence[int] | int, config: RqaeConfig, seed: int = 0) -> Reconstruction:
    """Estimate the real extended coefficients c_k, 0 <= k_l < M_l, then sum the series."""
    spec = state.spec
    M = (int(M),) * spec.d if isinstance(M, (int, np.integer)) else tuple(int(m) for m in M)
    ext_shape = extended_spec(spec).shape
    for m, N in zip(M, ext_shape):
        if not 1 <= m <= N // 2:
            raise ValueError("block size outside [1, N_ext/2]")
    c = extension_coefficients(state)
    est = np.zeros(M)
    queries, depth = 0, 0
    for k in np.ndindex(*M):
        flat = int(np.ravel_multi_index(k, ext_shape, order="F"))
        res = rqae_estimate(float(c[k]), config, rng_for(seed, 12, flat))
        est[k] = res.estimate
        queries += res.queries
        depth = max(depth, res.max_power)
    vals = reconstruct_extended(est, spec, state.norm)
    return Reconstruction(GridFunction(spec, vals), "fsqae", queries, M,
                          {"coefficients": est, "max_power": depth})


def fsqae2_readout(state: NormalizedState, M: Sequence[int] | int, config: RqaeConfig, seed: int = 0) -> Reconstruction:
    """Estimate Re c_k and Im c_k separately on the dominant block, no extension."""
    spec = state.spec
    M = (int(M),) * spec.d if isinstance(M, (int, np.integer)) else tuple(int(m) for m in M)
    for m, N in zip(M, spec.shape):
        if not 1 <= m <= max(N // 2, 1):
            raise ValueError("block size outside [1, N/2]")
    c = dft_coefficients(state).coeffs
    block = dominant_block(spec, M)
    est = np.zeros(spec.shape, dtype=complex)
    queries, depth = 0, 0
    for k in zip(*np.nonzero(block)):
        flat = int(np.ravel_multi_index(k, spec.shape, order="F"))
        re = rqae_estimate(float(c[k].real), config, rng_for(seed, 13, flat, 0))
        im = rqae_estimate(float(c[k].imag), config, rng_for(seed, 13, flat, 1))
        est[k] = re.estimate + 1j * im.estimate
        queries += re.queries + im.queries
        depth = max(depth, re.max_power, im.max_power)
    fc = FourierCoefficients(spec, est, state.norm / math.sqrt(spec.size), block)
    vals = reconstruct_at(fc, M, spec.axes(), check_real=False)
    return Reconstruction(GridFunction(spec, vals), "fsqae2", queries, M,
                          {"coefficients": est, "max_power": depth})
