"""Grid functions, amplitude encoding, Fourier conventions and error metrics.

Arrays are stored with shape ``(N_1, ..., N_d)`` and indexed ``[j_1, ..., j_d]``.
The flat basis index is ``j = j_1 + N_1 j_2 + ...`` (dimension 1 fastest), which
is Fortran order for numpy.

Fourier coefficients follow the inverse QFT: ``c_k`` is the orthonormal forward
DFT ``N^{-1/2} sum_j psi_j exp(-2 pi i j.k/N)``, so that
``f(x) = C_N sum_k c_k prod exp(2 pi i k_l x_l / L_l)`` with ``C_N = A_N/sqrt(N)``
holds exactly at grid points when no truncation is applied.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

NYQUIST_WARN = 1e-8


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid with ``2**n_l`` points and length ``L_l`` per dimension."""

    n: tuple[int, ...]
    L: tuple[float, ...] | None = None

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if not n or any(v < 0 for v in n):
            raise ValueError("qubit counts must be non-negative")
        L = tuple(float(v) for v in (self.L if self.L is not None else (1.0,) * len(n)))
        if len(L) != len(n) or any(v <= 0 for v in L):
            raise ValueError("lengths must be positive, one per dimension")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)

    @classmethod
    def from_counts(cls, counts: Sequence[int], L: Sequence[float] | None = None) -> "GridSpec":
        n = []
        for c in counts:
            c = int(c)
            if c < 1 or c & (c - 1):
                raise ValueError(f"grid count {c} is not a power of two")
            n.append(c.bit_length() - 1)
        return cls(tuple(n), None if L is None else tuple(L))

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(1 << v for v in self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        """Grid coordinates x_{j,l} = j L_l / N_l per dimension."""
        return [np.arange(N) * L / N for N, L in zip(self.shape, self.L)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")


@dataclass
class GridFunction:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            v = v.reshape(self.spec.shape, order="F")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function has non-finite values")
        self.values = v

    @classmethod
    def from_callable(cls, spec: GridSpec, fn) -> "GridFunction":
        return cls(spec, fn(*spec.mesh()))

    def flat(self) -> np.ndarray:
        return self.values.ravel(order="F")


@dataclass
class NormalizedState:
    spec: GridSpec
    amplitudes: np.ndarray
    norm: float

    def flat(self) -> np.ndarray:
        return self.amplitudes.ravel(order="F")

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class FourierCoefficients:
    """Coefficients c_k on the full index box; ``mask`` marks the known ones."""

    spec: GridSpec
    coeffs: np.ndarray
    scale: float
    mask: np.ndarray | None = None

    def lookup(self, k: Sequence[int]) -> complex:
        return negative_index_lookup(self, k)


# ---------------------------------------------------------------------------
# indexing


def index_map(jvec: Sequence[int], spec: GridSpec) -> int:
    j, stride = 0, 1
    for jl, N in zip(jvec, spec.shape):
        if not 0 <= jl < N:
            raise IndexError(f"index {jl} out of range [0, {N})")
        j += int(jl) * stride
        stride *= N
    return j


def index_unmap(j: int, spec: GridSpec) -> tuple[int, ...]:
    if not 0 <= j < spec.size:
        raise IndexError("flat index out of range")
    out = []
    for N in spec.shape:
        out.append(j % N)
        j //= N
    return tuple(out)


# ---------------------------------------------------------------------------
# encoding and transforms


def encode(f: GridFunction) -> NormalizedState:
    a = float(np.linalg.norm(f.values))
    if a == 0.0:
        raise ValueError("cannot encode an all-zero function")
    return NormalizedState(f.spec, f.values / a, a)


def dft_coefficients(state: NormalizedState) -> FourierCoefficients:
    c = np.fft.fftn(state.amplitudes, norm="ortho")
    return FourierCoefficients(state.spec, c, state.norm / np.sqrt(state.spec.size))


def _tilde(k: np.ndarray, N: int) -> np.ndarray:
    return np.where(k < 0, N + k, k)


def negative_index_lookup(coeffs: FourierCoefficients, k: Sequence[int]) -> complex:
    """Signed-index lookup: direct for k_d >= 0, conjugate mirror for k_d < 0."""
    shape = coeffs.spec.shape
    k = [int(v) for v in k]
    if len(k) != len(shape):
        raise ValueError("index dimension mismatch")
    for kl, N in zip(k, shape):
        if not -N <= kl <= N:
            raise IndexError(f"signed index {kl} out of range for N={N}")
    idx = _signed_indices([np.array([v]) for v in k], shape)
    val = coeffs.coeffs[tuple(i[0] for i in idx[0])]
    return complex(np.conj(val) if idx[1] else val)


def _signed_indices(ks: Sequence[np.ndarray], shape: Sequence[int]):
    """Map per-axis signed ranges to (index arrays, conjugate flag) for one k_d sign.

    Used by ``negative_index_lookup`` with single-element axes.
    """
    d = len(shape)
    kd = ks[-1]
    if np.all(kd >= 0):
        idx = [_tilde(ks[l], shape[l]) % shape[l] for l in range(d - 1)] + [kd % shape[-1]]
        return idx, False
    idx = [(shape[l] - _tilde(ks[l], shape[l])) % shape[l] for l in range(d - 1)] + [(-kd) % shape[-1]]
    return idx, True


def gather_signed(coeffs: FourierCoefficients, M: Sequence[int]) -> np.ndarray:
    """Coefficient tensor over k_l in (-M_l, M_l) using the signed-index rule."""
    shape = coeffs.spec.shape
    d = len(shape)
    ks = [np.arange(-(m - 1), m) for m in M]
    grids = np.meshgrid(*ks, indexing="ij")
    kd = grids[-1]
    pos = kd >= 0
    idx_pos = [_tilde(grids[l], shape[l]) % shape[l] for l in range(d - 1)] + [np.where(pos, kd, 0)]
    idx_neg = [(shape[l] - _tilde(grids[l], shape[l])) % shape[l] for l in range(d - 1)] + [np.where(pos, 0, -kd)]
    c = coeffs.coeffs
    return np.where(pos, c[tuple(idx_pos)], np.conj(c[tuple(idx_neg)]))


def reconstruct_at(coeffs: FourierCoefficients, M: Sequence[int], axes: Sequence[np.ndarray],
                   check_real: bool = True) -> np.ndarray:
    """Evaluate the truncated series on the tensor grid spanned by ``axes``."""
    spec = coeffs.spec
    M = [int(m) for m in M]
    if len(M) != spec.d:
        raise ValueError("one truncation per dimension required")
    for m, N in zip(M, spec.shape):
        if not 1 <= m <= max(N // 2, 1):
            raise ValueError(f"truncation {m} outside [1, {max(N // 2, 1)}]")
    for l, (m, N) in enumerate(zip(M, spec.shape)):
        if N > 1 and m == N // 2:
            nyq = np.take(coeffs.coeffs, N // 2, axis=l)
            if np.max(np.abs(nyq)) > NYQUIST_WARN:
                warnings.warn("Nyquist-row coefficients are not negligible; folding error expected",
                              stacklevel=2)
    C = gather_signed(coeffs, M)
    out = C
    for l, (m, x) in enumerate(zip(M, axes)):
        k = np.arange(-(m - 1), m)
        E = np.exp(2j * np.pi * np.outer(np.asarray(x, float), k) / spec.L[l])
        out = np.tensordot(E, out, axes=([1], [l]))
        out = np.moveaxis(out, 0, l)
    out = coeffs.scale * out
    if check_real:
        tol = 1e-9 * max(1.0, float(np.max(np.abs(out.real), initial=0.0)))
        if np.max(np.abs(out.imag), initial=0.0) > tol:
            raise ValueError("reconstruction is not real; coefficients lack conjugate symmetry")
    return out.real


def reconstruct(coeffs: FourierCoefficients, M: Sequence[int], check_real: bool = True) -> GridFunction:
    return GridFunction(coeffs.spec, reconstruct_at(coeffs, M, coeffs.spec.axes(), check_real))


# ---------------------------------------------------------------------------
# errors


def l2ns_error(a, b) -> float:
    """l2 distance between the unit-normalized versions of two grid functions."""
    a = np.asarray(a.values if isinstance(a, GridFunction) else a, dtype=float)
    b = np.asarray(b.values if isinstance(b, GridFunction) else b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("grid shapes differ")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero-norm input")
    return float(np.linalg.norm(a / na - b / nb))


def relative_l2_error(ref, approx) -> float:
    ref = np.asarray(ref.values if isinstance(ref, GridFunction) else ref, dtype=float)
    approx = np.asarray(approx.values if isinstance(approx, GridFunction) else approx, dtype=float)
    return float(np.linalg.norm(approx - ref) / np.linalg.norm(ref))


# ---------------------------------------------------------------------------
# grid CSV


def write_grid_csv(path, f: GridFunction) -> None:
    spec = f.spec
    head = "#qgrid v1 d={} n={} L={}".format(
        spec.d, ",".join(str(v) for v in spec.n), ",".join(repr(v) for v in spec.L)
    )
    lines = [head] + ["%.17g" % v for v in f.flat()]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_grid_csv(path) -> GridFunction:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#qgrid v1"):
        raise ValueError("missing #qgrid v1 header")
    fields = dict(tok.split("=", 1) for tok in text[0].split()[2:])
    try:
        d = int(fields["d"])
        n = tuple(int(v) for v in fields["n"].split(","))
        L = tuple(float(v) for v in fields["L"].split(","))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed header: {text[0]!r}") from exc
    if len(n) != d or len(L) != d:
        raise ValueError("header dimension mismatch")
    spec = GridSpec(n, L)
    vals = np.array([float(v) for v in text[1:] if v.strip()])
    if vals.size != spec.size:
        raise ValueError(f"expected {spec.size} values, found {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("grid file contains non-finite values")
    return GridFunction(spec, vals.reshape(spec.shape, order="F"))
