"""Time-stepwise readout (TSR) for the 2D viscous Burgers equation on [0, 2pi]^2.

Each step freezes the velocity gradients of the previous (read-out) solution,
evolves with exp(-dt H) where H = -nu Laplacian + grad(u_prev) (a non-unitary map
emulating a probabilistic imaginary-time step), records the success probability,
reads the new state out with a finite shot budget and re-injects the
reconstruction as the next input.  The reference chain applies the same
linearised update to exact solutions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm
from scipy.sparse.linalg import LinearOperator, expm_multiply

from .gridfn import GridFunction, GridSpec, NormalizedState, l2ns_error, write_grid_csv
from .readout_sampling import ReadoutConfig, fsr_readout, rsr_readout

TWO_PI = 2 * math.pi


@dataclass
class BurgersConfig:
    n: int = 5
    dt: float = 0.04
    steps: int = 25
    nu: float = 0.05
    method: str = "fsr"          # fsr | rsr | exact
    shots: int | None = 100_000  # per readout circuit; None reads out exactly
    kappa: float = 0.51
    seed: int = 0
    M: object = None  # FSR block; None -> N/4 per axis (the field is differentiated next step)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 4 points per axis")
        if self.dt < 0 or self.steps < 1:
            raise ValueError("dt must be non-negative and steps positive")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.method not in ("fsr", "rsr", "exact"):
            raise ValueError(f"unknown readout {self.method!r}")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")

    @property
    def spec(self) -> GridSpec:
        return GridSpec((self.n, self.n), (TWO_PI, TWO_PI))

    @property
    def block(self):
        if self.M is None:
            return (max(1, (1 << self.n) // 4),) * 2
        return self.M

    @property
    def T(self) -> float:
        return self.dt * self.steps


@dataclass
class TsrTrace:
    fields: list[np.ndarray] = field(default_factory=list)   # stacked (2, N1, N2) per step
    reference: list[np.ndarray] = field(default_factory=list)
    p: list[float] = field(default_factory=list)
    errors: list[float] = field(default_factory=list)
    shots: list[float] = field(default_factory=list)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumprod(self.p)

    @property
    def total_shots(self) -> float:
        return float(np.sum(self.shots))

    @property
    def uniformity(self) -> float:
        return float(max(self.p) / min(self.p))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "p_k", "cumulative", "l2ns_error", "shots"])
            for k, (p, c, e, s) in enumerate(zip(self.p, self.cumulative, self.errors, self.shots), 1):
                w.writerow([k, repr(p), repr(float(c)), repr(e), repr(float(s))])

    def dump_fields(self, directory, spec: GridSpec) -> list[Path]:
        out = []
        d = Path(directory)
        for k, u in enumerate(self.fields, 1):
            for c, name in enumerate(("ux", "uy")):
                p = d / f"step{k:03d}_{name}.csv"
                write_grid_csv(p, GridFunction(spec, u[c]))
                out.append(p)
        return out


# ---------------------------------------------------------------------------
# fields and operators


def initial_condition(config: BurgersConfig) -> np.ndarray:
    """u_x = u_y = sin(x + y) / (2 pi), stacked as (2, N1, N2)."""
    X, Y = config.spec.mesh()
    u = np.sin(X + Y) / TWO_PI
    return np.stack([u, u.copy()])


def continuous_norm_sq(u: np.ndarray, spec: GridSpec) -> float:
    """Periodic trapezoid rule for the integral of u_x^2 + u_y^2."""
    h = np.prod([L / N for L, N in zip(spec.L, spec.shape)])
    return float(np.sum(u**2) * h)


def wavenumbers(spec: GridSpec) -> list[np.ndarray]:
    """Integer-scaled wavenumbers 2 pi k / L per axis (the Nyquist mode kept for the Laplacian)."""
    return [np.fft.fftfreq(N, 1.0 / N) * TWO_PI / L for N, L in zip(spec.shape, spec.L)]


def spectral_derivative(f: np.ndarray, spec: GridSpec, axis: int) -> np.ndarray:
    N = spec.shape[axis]
    k = wavenumbers(spec)[axis].copy()
    if N % 2 == 0:
        k[N // 2] = 0.0  # odd derivative of the Nyquist mode is not real
    shape = [1] * f.ndim
    shape[axis] = N
    return np.fft.ifftn(1j * k.reshape(shape) * np.fft.fftn(f)).real


def diffusion_symbol(spec: GridSpec, nu: float) -> np.ndarray:
    k = np.meshgrid(*wavenumbers(spec), indexing="ij")
    return nu * sum(kk**2 for kk in k)


@dataclass
class LinearizedGenerator:
    """H = blockdiag(-nu Lap, -nu Lap) + [[dx ux, dy ux], [dx uy, dy uy]] frozen at u_prev."""

    spec: GridSpec
    nu: float
    grads: np.ndarray  # (2, 2, N1, N2): grads[i, j] = d_j u_i

    @property
    def size(self) -> int:
        return 2 * self.spec.size

    def apply(self, v: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Matrix-free action on a stacked vector (component-major, F-ordered grids)."""
        shape = np.shape(v)
        u = unstack(np.ravel(v), self.spec)
        sym = diffusion_symbol(self.spec, self.nu)
        out = np.empty_like(u)
        for i in range(2):
            out[i] = np.fft.ifftn(sym * np.fft.fftn(u[i])).real
            if transpose:
                out[i] += self.grads[0, i] * u[0] + self.grads[1, i] * u[1]
            else:
                out[i] += self.grads[i, 0] * u[0] + self.grads[i, 1] * u[1]
        return stack(out).reshape(shape)

    def dense(self) -> np.ndarray:
        """Explicit 2N x 2N matrix assembled from the diffusion block and diagonal couplings."""
        N = self.spec.size
        n1, n2 = self.spec.shape
        sym = diffusion_symbol(self.spec, self.nu)
        basis = np.eye(N).reshape(N, n2, n1).transpose(0, 2, 1)  # basis[j] = e_j as an F-ordered grid
        cols = np.fft.ifftn(sym * np.fft.fftn(basis, axes=(1, 2)), axes=(1, 2)).real
        lap = cols.transpose(0, 2, 1).reshape(N, N).T
        H = np.zeros((2 * N, 2 * N))
        H[:N, :N] = lap
        H[N:, N:] = lap
        for i in range(2):
            for j in range(2):
                H[i * N:(i + 1) * N, j * N:(j + 1) * N] += np.diag(self.grads[i, j].ravel(order="F"))
        return H

    def operator(self) -> LinearOperator:
        return LinearOperator((self.size, self.size), matvec=self.apply,
                              rmatvec=lambda v: self.apply(v, transpose=True), dtype=float)


def stack(u: np.ndarray) -> np.ndarray:
    return np.concatenate([u[0].ravel(order="F"), u[1].ravel(order="F")])


def unstack(v: np.ndarray, spec: GridSpec) -> np.ndarray:
    N = spec.size
    return np.stack([v[:N].reshape(spec.shape, order="F"), v[N:].reshape(spec.shape, order="F")])


def build_linearized_generator(u_prev: np.ndarray, spec: GridSpec, nu: float = 0.05) -> LinearizedGenerator:
    grads = np.stack([np.stack([spectral_derivative(u_prev[i], spec, a) for a in range(2)]) for i in range(2)])
    return LinearizedGenerator(spec, nu, grads)


def reference_step(u_prev: np.ndarray, spec: GridSpec, dt: float, nu: float = 0.05,
                   generator: LinearizedGenerator | None = None) -> np.ndarray:
    """u_k = expm(-dt H(u_prev)) u_prev with a dense scaling-and-squaring exponential."""
    gen = generator or build_linearized_generator(u_prev, spec, nu)
    return unstack(expm(-dt * gen.dense()) @ stack(u_prev), spec)


def pite_emulated_step(state: np.ndarray, generator: LinearizedGenerator, dt: float,
                       kappa: float = 0.51) -> tuple[np.ndarray, float]:
    """Apply exp(-dt H) to a unit vector; p = kappa |out|^2, then renormalise."""
    nrm = np.linalg.norm(state)
    if abs(nrm - 1) > 1e-9:
        raise ValueError("input state must be normalised")
    out = expm_multiply(-dt * generator.operator(), state, traceA=-dt * _trace(generator))
    sq = float(out @ out)
    p = kappa * sq
    if p <= 0:
        raise ValueError("success probability vanished")
    return out / math.sqrt(sq), p


def _trace(gen: LinearizedGenerator) -> float:
    return float(2 * diffusion_symbol(gen.spec, gen.nu).sum() + gen.grads[0, 0].sum() + gen.grads[1, 1].sum())


# ---------------------------------------------------------------------------
# TSR loop


def reference_chain(config: BurgersConfig) -> list[np.ndarray]:
    u = initial_condition(config)
    out = []
    for _ in range(config.steps):
        u = reference_step(u, config.spec, config.dt, config.nu)
        out.append(u)
    return out


def _read_component(values: np.ndarray, spec: GridSpec, config: BurgersConfig, shots: int | None,
                    seed: int, bound: float) -> np.ndarray:
    nrm = float(np.linalg.norm(values))
    if config.method == "exact" or nrm == 0.0:
        return values
    if config.method == "fsr":
        cfg = ReadoutConfig(shots=None if shots is None else 2 * shots, seed=seed, M=config.block)
        return fsr_readout(NormalizedState(spec, values / nrm, nrm), cfg).values.values
    # real-space readout of the field shifted by the a-priori bound |u| <= bound
    shifted = values + bound
    snrm = float(np.linalg.norm(shifted))
    cfg = ReadoutConfig(shots=None if shots is None else 2 * shots, seed=seed, offset=-bound)
    return rsr_readout(NormalizedState(spec, shifted / snrm, snrm), cfg).values.values


def tsr_run(config: BurgersConfig, reference: list[np.ndarray] | None = None) -> TsrTrace:
    """Run the PITE-TSR loop and compare every step with the reference chain.

    Per step and direction the readout sees ``shots`` post-selected shots per
    circuit; the submitted count is recorded as circuits * shots / p_k.
    """
    spec = config.spec
    ref = reference if reference is not None else reference_chain(config)
    u = initial_condition(config)
    bound = float(np.max(np.abs(u)))  # maximum principle: |u(t)| <= max |u(0)|
    trace = TsrTrace()
    circuits = 4  # two directions, each read with a budget of 2 * shots
    for k in range(1, config.steps + 1):
        gen = build_linearized_generator(u, spec, config.nu)
        v = stack(u)
        scale = float(np.linalg.norm(v))
        out, p = pite_emulated_step(v / scale, gen, config.dt, config.kappa)
        # the post-PITE norm follows from p_k and kappa
        new = unstack(out * scale * math.sqrt(p / config.kappa), spec)
        shots = config.shots
        try:
            rec = np.stack([_read_component(new[c], spec, config, shots,
                                            int(np.random.SeedSequence([config.seed, k, c]).generate_state(1)[0]),
                                            bound)
                            for c in range(2)])
        except Exception as exc:  # noqa: BLE001 - re-raised with the step index
            raise RuntimeError(f"readout failed at step {k}: {exc}") from exc
        trace.fields.append(rec)
        trace.reference.append(ref[k - 1])
        trace.p.append(p)
        trace.errors.append(l2ns_error(stack(ref[k - 1]), stack(rec)))
        trace.shots.append(0.0 if shots is None else circuits * shots / p)
        u = rec
    return trace
