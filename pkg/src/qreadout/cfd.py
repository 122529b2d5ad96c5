"""Velocity-field ingestion, spline upsampling, derived fields and readout-based
visualisation of 2D flow data.

Fields are stored as ``[i, j]`` arrays with ``i`` along x and ``j`` along y.  Raw
solver output (e.g. 41 x 41 matrices sampled on closed intervals) is kept with its
own node coordinates until it is upsampled onto a power-of-two grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .gridfn import GridFunction, GridSpec, encode, read_grid_csv, relative_l2_error, write_grid_csv
from .readout_sampling import ReadoutConfig, arsr_readout, extension_fsr_readout, fsr_readout, rsr_readout


@dataclass
class VelocityField:
    """Two velocity components sampled at the tensor nodes ``axes``."""

    ux: np.ndarray
    uy: np.ndarray
    axes: tuple[np.ndarray, np.ndarray]
    L: tuple[float, float] = (1.0, 1.0)
    minima: tuple[float, float] | None = None

    def __post_init__(self):
        self.ux = np.asarray(self.ux, dtype=float)
        self.uy = np.asarray(self.uy, dtype=float)
        if self.ux.shape != self.uy.shape or self.ux.ndim != 2:
            raise ValueError("velocity components must be 2D arrays of equal shape")
        if not (np.all(np.isfinite(self.ux)) and np.all(np.isfinite(self.uy))):
            raise ValueError("velocity field has non-finite values")
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if tuple(a.size for a in self.axes) != self.ux.shape:
            raise ValueError("node axes do not match the field shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.ux.shape

    @property
    def power_of_two(self) -> bool:
        return all(n >= 1 and n & (n - 1) == 0 for n in self.shape)

    @property
    def needs_upsampling(self) -> bool:
        return not self.power_of_two

    @property
    def spec(self) -> GridSpec:
        if not self.power_of_two:
            raise ValueError(f"grid {self.shape} is not a power of two; upsample first")
        return GridSpec.from_counts(self.shape, self.L)

    def component(self, name: str) -> GridFunction:
        if name not in ("ux", "uy"):
            raise ValueError("component must be 'ux' or 'uy'")
        return GridFunction(self.spec, getattr(self, name))

    @classmethod
    def on_grid(cls, spec: GridSpec, ux, uy, minima=None) -> "VelocityField":
        return cls(ux, uy, tuple(spec.axes()), spec.L, minima)


# ---------------------------------------------------------------------------
# I/O


def load_field(path, fmt: str = "grid", shape: Sequence[int] | None = None,
               L: Sequence[float] = (1.0, 1.0)) -> VelocityField:
    """Read a velocity field.

    ``fmt="grid"``: ``path`` is a pair of Grid CSV files (u_x, u_y).
    ``fmt="matrix"``: a whitespace/comma separated text file with two columns
    (u_x, u_y), one row per node with x running fastest; ``shape`` defaults to a
    square grid.  Matrix nodes are taken on the closed intervals [0, L].
    """
    if fmt == "grid":
        px, py = path
        gx, gy = read_grid_csv(px), read_grid_csv(py)
        if gx.spec != gy.spec:
            raise ValueError("component grid specs differ")
        if gx.spec.d != 2:
            raise ValueError("velocity fields are two-dimensional")
        return VelocityField.on_grid(gx.spec, gx.values, gy.values)
    if fmt == "matrix":
        text = Path(path).read_text().replace(",", " ")
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        try:
            data = np.array(rows, dtype=float)
        except ValueError as exc:
            raise ValueError("matrix file must hold numeric rows") from exc
        if data.ndim != 2 or data.shape[1] != 2:
            raise ValueError("matrix file must have exactly two columns (u_x, u_y)")
        if not np.all(np.isfinite(data)):
            raise ValueError("matrix file contains non-finite values")
        if shape is None:
            n = math.isqrt(data.shape[0])
            if n * n != data.shape[0]:
                raise ValueError("cannot infer a square shape; pass shape explicitly")
            shape = (n, n)
        shape = tuple(int(v) for v in shape)
        if shape[0] * shape[1] != data.shape[0]:
            raise ValueError("row count does not match the requested shape")
        ux = data[:, 0].reshape(shape, order="F")
        uy = data[:, 1].reshape(shape, order="F")
        axes = tuple(np.linspace(0.0, Lv, n) for Lv, n in zip(L, shape))
        return VelocityField(ux, uy, axes, tuple(float(v) for v in L))
    raise ValueError(f"unknown field format {fmt!r}")


def save_field(field: VelocityField, path, fmt: str = "grid") -> None:
    """Inverse of :func:`load_field` (``path`` is a pair for the grid format)."""
    if fmt == "grid":
        px, py = path
        write_grid_csv(px, field.component("ux"))
        write_grid_csv(py, field.component("uy"))
    elif fmt == "matrix":
        data = np.column_stack([field.ux.ravel(order="F"), field.uy.ravel(order="F")])
        lines = ["%.17g %.17g" % tuple(r) for r in data]
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")
    else:
        raise ValueError(f"unknown field format {fmt!r}")


# ---------------------------------------------------------------------------
# upsampling


def spline_eval(values: np.ndarray, src_axes, dst_axes) -> np.ndarray:
    """Tensor-product cubic spline (not-a-knot) of ``values`` evaluated on ``dst_axes``."""
    out = np.asarray(values, dtype=float)
    for ax, (xs, xd) in enumerate(zip(src_axes, dst_axes)):
        if len(xs) < 2:
            raise ValueError("need at least two nodes per axis")
        out = CubicSpline(xs, out, axis=ax)(xd)
    return out


def spline_upsample(field: VelocityField, target: Sequence[int] | int) -> VelocityField:
    """Resample both components onto a 2^n grid with x_j = j L / N."""
    target = (int(target),) * 2 if np.isscalar(target) else tuple(int(t) for t in target)
    for t, s in zip(target, field.shape):
        if t < 1 or t & (t - 1):
            raise ValueError(f"target count {t} is not a power of two")
        if t < s:
            raise ValueError("target grid is smaller than the source grid")
    spec = GridSpec.from_counts(target, field.L)
    dst = spec.axes()
    ux = spline_eval(field.ux, field.axes, dst)
    uy = spline_eval(field.uy, field.axes, dst)
    return VelocityField.on_grid(spec, ux, uy, field.minima)


# ---------------------------------------------------------------------------
# derived fields


_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
# one-sided fourth-order stencils for the first two nodes (reversed and negated at the far end)
_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def derivative_4th(values: np.ndarray, h: float, axis: int, periodic: bool = True) -> np.ndarray:
    """Fourth-order finite-difference derivative along one axis."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = v.shape[0]
    if n < 5:
        raise ValueError("need at least 5 points per axis")
    if periodic:
        d = sum(w * np.roll(v, -s, axis=0) for w, s in zip(_CENTRAL, range(-2, 3)) if w)
    else:
        d = np.empty_like(v)
        d[2:-2] = sum(w * v[2 + s:n - 2 + s] for w, s in zip(_CENTRAL, range(-2, 3)) if w)
        d[0] = np.tensordot(_EDGE0, v[:5], axes=1)
        d[1] = np.tensordot(_EDGE1, v[:5], axes=1)
        d[-1] = -np.tensordot(_EDGE0, v[::-1][:5], axes=1)
        d[-2] = -np.tensordot(_EDGE1, v[::-1][:5], axes=1)
    return np.moveaxis(d / h, 0, axis)


def _spacing(x: np.ndarray) -> float:
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("finite differences need uniform node spacing")
    return float(h[0])


def curl_9pt(field: VelocityField, periodic: bool = True) -> np.ndarray:
    """w = d(u_y)/dx - d(u_x)/dy with fourth-order central differences."""
    hx, hy = _spacing(field.axes[0]), _spacing(field.axes[1])
    return derivative_4th(field.uy, hx, 0, periodic) - derivative_4th(field.ux, hy, 1, periodic)


def stream_function(field: VelocityField) -> np.ndarray:
    """psi with d(psi)/dy = u_x, integrated by the trapezoid rule from y = 0 (psi(., 0) = 0)."""
    return cumulative_trapezoid(field.ux, field.axes[1], axis=1, initial=0.0)


def shift_field_nonnegative(field: VelocityField, minima: Sequence[float] | None = None) -> VelocityField:
    """Subtract known lower bounds so both components are non-negative."""
    mins = field.minima if minima is None else tuple(float(m) for m in minima)
    if mins is None:
        raise ValueError("minima are required")
    ux, uy = field.ux - mins[0], field.uy - mins[1]
    if ux.min() < 0 or uy.min() < 0:
        raise ValueError("supplied minima exceed the field minima; shifted field is negative")
    return VelocityField(ux, uy, field.axes, field.L, tuple(mins))


def unshift_field(field: VelocityField) -> VelocityField:
    if field.minima is None:
        raise ValueError("field carries no shift")
    mx, my = field.minima
    return VelocityField(field.ux + mx, field.uy + my, field.axes, field.L, None)


# ---------------------------------------------------------------------------
# synthetic fields


def taylor_green(n: int | Sequence[int] = 9) -> VelocityField:
    """Single Taylor-Green cell on [0,1]^2; not periodic on the unit square."""
    spec = GridSpec((n, n) if np.isscalar(n) else tuple(n))
    X, Y = spec.mesh()
    ux = np.sin(np.pi * X) * np.cos(np.pi * Y)
    uy = -np.cos(np.pi * X) * np.sin(np.pi * Y)
    return VelocityField.on_grid(spec, ux, uy, (-1.0, -1.0))


def cavity_analog(n: int | Sequence[int] = 9) -> VelocityField:
    """Divergence-free cavity flow with a smooth ramp-profile lid u_x(x, 1) = 16 x^2 (1-x)^2."""
    spec = GridSpec((n, n) if np.isscalar(n) else tuple(n))
    X, Y = spec.mesh()
    ux = 8 * (X**4 - 2 * X**3 + X**2) * (4 * Y**3 - 2 * Y)
    uy = -8 * (4 * X**3 - 6 * X**2 + 2 * X) * (Y**4 - Y**2)
    return VelocityField.on_grid(spec, ux, uy, (float(ux.min()), float(uy.min())))


def jet_analog(n: int | Sequence[int] = 9) -> VelocityField:
    """Planar jet entering at x = 0 and spreading downstream."""
    spec = GridSpec((n, n) if np.isscalar(n) else tuple(n))
    X, Y = spec.mesh()
    width = 0.05 + 0.1 * X
    ux = 0.05 / width / np.cosh((Y - 0.5) / width) ** 2
    uy = 0.1 * (Y - 0.5) / width * ux * np.tanh((Y - 0.5) / width)
    return VelocityField.on_grid(spec, ux, uy, (0.0, float(uy.min())))


SYNTHETIC_FIELDS = {"taylor-green": taylor_green, "cavity": cavity_analog, "jet": jet_analog}


# ---------------------------------------------------------------------------
# readout of a field component


CFD_METHODS = ("rsr", "arsr", "fsr", "fsr-plain")


def read_component(field: VelocityField, name: str, method: str, shots: int | None,
                   seed: int = 0, M=None) -> GridFunction:
    """Read one velocity component through a quantum readout.

    RSR and ARSR read the minimum-shifted component and add the shift back;
    ``fsr`` reads the even extension with the boundary correction and
    ``fsr-plain`` the unextended modified FSR.
    """
    truth = field.component(name)
    if method in ("rsr", "arsr"):
        if field.minima is None:
            raise ValueError("real-space readout of a signed field needs known minima")
        m = field.minima[0 if name == "ux" else 1]
        shifted = GridFunction(truth.spec, truth.values - m)
        if shifted.values.min() < 0:
            raise ValueError("known minimum exceeds the component minimum")
        cfg = ReadoutConfig(shots=shots, seed=seed, M=M if M is not None else "adaptive", offset=m)
        fn = rsr_readout if method == "rsr" else arsr_readout
        return fn(encode(shifted), cfg).values
    if method == "fsr":
        cfg = ReadoutConfig(shots=shots, seed=seed, M=M if M is not None else "adaptive", boundary="extrapolate")
        return extension_fsr_readout(encode(truth), cfg).values
    if method == "fsr-plain":
        cfg = ReadoutConfig(shots=shots, seed=seed, M=M if M is not None else "adaptive")
        return fsr_readout(encode(truth), cfg).values
    raise ValueError(f"unknown CFD readout {method!r}")


def readout_error(field: VelocityField, name: str, method: str, shots: int, seed: int = 0) -> float:
    return relative_l2_error(field.component(name), read_component(field, name, method, shots, seed))


def run_cfd_scaling(field: VelocityField, name: str, method: str, shots: Sequence[int],
                    repeats: int = 5, seed: int = 0, label: str = ""):
    """Relative l2 error of one component vs shots (median over repeats)."""
    from .bench import ScalingRun, task_seed

    records, med = [], []
    for i, s in enumerate(shots):
        errs = []
        for r in range(repeats):
            sd = task_seed(seed, i, r)
            e = readout_error(field, name, method, int(s), sd)
            errs.append(e)
            records.append({"parameter": s, "abscissa": float(s), "seed": sd, "l2ns_error": e})
        med.append(float(np.median(errs)))
    return ScalingRun(method, "shots", list(shots), np.asarray(shots, float), np.array(med), records,
                      function=label or name)


# ---------------------------------------------------------------------------
# heatmaps


PGM_MAX = 65535


def heatmap_levels(values: np.ndarray) -> np.ndarray:
    """Linear map min -> 0, max -> 65535; a constant grid maps to mid-gray 32768."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("heatmap input must be finite")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.full(v.shape, 32768, dtype=np.int64)
    return np.rint((v - lo) / (hi - lo) * PGM_MAX).astype(np.int64)


def write_pgm(values: np.ndarray, path) -> None:
    """ASCII P2 heatmap of a 2D ``[x, y]`` array; rows run over increasing y."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("heatmaps need a 2D array")
    levels = heatmap_levels(v)
    nx, ny = v.shape
    lines = ["P2", f"# min={float(v.min())!r} max={float(v.max())!r}", f"{nx} {ny}", str(PGM_MAX)]
    lines += [" ".join(str(int(p)) for p in levels[:, j]) for j in range(ny)]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_pgm(path) -> np.ndarray:
    """Parse a P2 file written by :func:`write_pgm` back to an ``[x, y]`` level array."""
    toks = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0]
        toks += ln.split()
    if not toks or toks[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    nx, ny, _ = int(toks[1]), int(toks[2]), int(toks[3])
    px = np.array(toks[4:], dtype=np.int64)
    if px.size != nx * ny:
        raise ValueError("pixel count mismatch")
    return px.reshape(ny, nx).T
