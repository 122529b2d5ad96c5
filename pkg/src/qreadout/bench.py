"""Scaling experiments, log-log slope fits and closed-form shot estimates.

A scaling run sweeps one abscissa (shot budget, amplitude-estimation precision,
block count or grid size), records the L2NS error of every repeat and fits the
slope of the median error on log-log axes.  Every repeat gets its own seed
derived from ``(seed, point, repeat)`` so runs are reproducible bit-for-bit,
including when points are farmed out to worker processes.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import stats

from .gridfn import GridFunction, GridSpec, encode, l2ns_error, read_grid_csv
from .readout_qae import RqaeConfig, fsqae_readout, fsqae2_readout, rsqae_readout
from .readout_sampling import (ReadoutConfig, arsr_readout, extension_fsr_readout, extended_spec,
                               fsr_readout, interpolate_coarse, post_process, rsr_readout,
                               rsr_values)
from .statevec import rng_for, sample_probabilities

AbscissaKind = Literal["shots", "queries", "M0", "N"]

SHOT_METHODS = ("rsr", "arsr", "fsr", "fsr-ext")
QUERY_METHODS = ("fsqae", "fsqae2", "rsqae")
APPROX_METHODS = ("arsr", "fsr", "fsr-ext")
POSTPROC_METHODS = ("rsr", "rms-cubic", "rms", "mean", "harmonic", "fmf")

DEFAULT_SHOTS = tuple(10_000 * 4**i for i in range(7))
DEFAULT_EPS = (0.05, 0.02, 0.01, 0.005, 0.0025, 0.001, 0.0005)
DEFAULT_M0 = tuple(2**i for i in range(1, 8))

# reference orders of the error decay for the two worked examples
EXPECTED_SLOPES = {
    ("gaussian2d", "rsr", "shots"): -1 / 2,
    ("gaussian2d", "arsr", "shots"): -1 / 3,
    ("gaussian2d", "fsr", "shots"): -1 / 4,
    ("gaussian2d", "fsqae", "queries"): -1 / 3,
    ("gaussian2d", "arsr", "M0"): -2.0,
    ("gaussian2d", "fsr", "M0"): -1 / 2,
    ("sine2d", "rsr", "shots"): -1 / 2,
    ("sine2d", "arsr", "shots"): -1 / 3,
    ("sine2d", "fsr", "shots"): -1 / 2,
    ("sine2d", "fsqae", "queries"): -1 / 3,
    ("sine2d", "fsqae2", "queries"): -1.0,
    ("sine2d", "arsr", "M0"): -2.0,
}


# ---------------------------------------------------------------------------
# test functions


def gaussian2d_eval(x, y):
    return (np.exp(-25 * ((x - 0.65) ** 2 + (y - 0.65) ** 2))
            + np.exp(-16 * ((x - 0.35) ** 2 + (y - 0.35) ** 2)))


def sine2d_eval(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) + 1.0


def ramp1d_eval(x):
    return 0.2 + x


EVALUATORS: dict[str, Callable] = {"gaussian2d": gaussian2d_eval, "sine2d": sine2d_eval, "ramp1d": ramp1d_eval}


@dataclass
class TestFunction:
    name: str
    grid: GridFunction
    evaluator: Callable | None = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.evaluator is not None:
            ref = self.evaluator(*self.grid.spec.mesh())
            if np.max(np.abs(ref - self.grid.values)) > 1e-12:
                raise ValueError("evaluator does not match the stored grid")

    @property
    def spec(self) -> GridSpec:
        return self.grid.spec

    @classmethod
    def named(cls, name: str, n: int | Sequence[int] = 9) -> "TestFunction":
        if name not in EVALUATORS:
            raise ValueError(f"unknown test function {name!r}")
        fn = EVALUATORS[name]
        d = 1 if name == "ramp1d" else 2
        n = (int(n),) * d if np.isscalar(n) else tuple(n)
        if len(n) != d:
            raise ValueError(f"{name} is {d}-dimensional")
        return cls(name, GridFunction.from_callable(GridSpec(n), fn), fn)

    @classmethod
    def from_file(cls, path) -> "TestFunction":
        return cls(Path(path).stem, read_grid_csv(path))


def make_test_function(name: str, n: int | Sequence[int] = 9) -> TestFunction:
    if name in EVALUATORS:
        return TestFunction.named(name, n)
    return TestFunction.from_file(name)


# ---------------------------------------------------------------------------
# scaling runs


@dataclass
class ScalingRun:
    """One sweep.  ``abscissa`` holds the fitted x-values (median cost per point)."""

    method: str
    abscissa_kind: AbscissaKind
    parameters: list
    abscissa: np.ndarray
    errors: np.ndarray
    records: list[dict] = field(default_factory=list)
    chosen_M: list = field(default_factory=list)
    function: str = ""
    slope: float = float("nan")
    stderr: float = float("nan")

    def fit(self) -> "ScalingRun":
        self.slope, self.stderr = fit_loglog_slope(self)
        return self

    @property
    def expected_slope(self) -> float:
        return EXPECTED_SLOPES.get((self.function, self.method, self.abscissa_kind), float("nan"))


def fit_loglog_slope(run, errors=None) -> tuple[float, float]:
    """Least squares slope (and its standard error) of log10 error vs log10 abscissa."""
    if isinstance(run, ScalingRun):
        x, y = run.abscissa, run.errors
    else:
        x, y = run, errors
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 4:
        raise ValueError("need at least 4 (abscissa, error) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("abscissa and errors must be positive")
    if np.ptp(np.log10(x)) == 0:
        raise ValueError("degenerate abscissa")
    res = stats.linregress(np.log10(x), np.log10(y))
    return float(res.slope), float(res.stderr)


def task_seed(seed: int, point: int, repeat: int) -> int:
    return int(np.random.SeedSequence([seed, point, repeat]).generate_state(1)[0])


def _block_candidates(limit: int) -> list[int]:
    return [1 << k for k in range(1, limit.bit_length()) if (1 << k) <= limit]


def default_candidates(method: str, spec: GridSpec) -> list[int]:
    if method == "arsr":
        return _block_candidates(min(spec.shape) // 2)
    if method == "fsqae":
        return [1] + _block_candidates(min(extended_spec(spec).shape) // 2)
    return [1] + _block_candidates(min(spec.shape) // 2)


def _one_point(method: str, kind: str, tf: TestFunction, param, M, seed: int):
    """Error and cost of one repeat at one abscissa value with block count M."""
    state = encode(tf.grid)
    if kind == "shots":
        cfg = ReadoutConfig(shots=int(param), seed=seed, M=M)
    elif kind == "M0":
        cfg = ReadoutConfig(shots=None, seed=seed, M=int(param))
    if kind in ("shots", "M0"):
        recon = {"rsr": rsr_readout, "arsr": arsr_readout, "fsr": fsr_readout,
                 "fsr-ext": extension_fsr_readout}[method](state, cfg)
        cost = int(param)
    else:
        qcfg = RqaeConfig(eps=float(param))
        if method == "fsqae":
            recon = fsqae_readout(state, M, qcfg, seed)
        elif method == "fsqae2":
            recon = fsqae2_readout(state, M, qcfg, seed)
        else:
            recon = rsqae_readout(state, None, qcfg, seed)
        cost = recon.cost
    M_used = None if recon.M is None else int(recon.M[0])
    return l2ns_error(tf.grid, recon.values), cost, M_used


def _point_task(args):
    method, kind, tf, param, candidates, seeds = args
    # rows: candidate M, cols: repeats
    errs = np.empty((len(candidates), len(seeds)))
    costs = np.empty_like(errs)
    used = []
    for i, M in enumerate(candidates):
        row = [_one_point(method, kind, tf, param, M, s) for s in seeds]
        errs[i] = [r[0] for r in row]
        costs[i] = [r[1] for r in row]
        used.append(M if isinstance(M, (int, np.integer)) else row[0][2])
    best = int(np.argmin(np.median(errs, axis=1)))
    return errs[best], costs[best], used[best]


def _check_method(method: str, kind: str) -> None:
    allowed = {"shots": SHOT_METHODS, "queries": QUERY_METHODS, "M0": APPROX_METHODS}
    if kind not in allowed:
        raise ValueError(f"unknown abscissa kind {kind!r}")
    if method not in allowed[kind]:
        raise ValueError(f"method {method!r} does not support a {kind} sweep")


def run_scaling_experiment(method: str, tf: TestFunction, abscissa: Sequence, repeats: int = 5,
                           seed: int = 0, kind: AbscissaKind = "shots", M=None,
                           candidates: Sequence[int] | None = None, jobs: int = 1) -> ScalingRun:
    """Median L2NS error over repeats at each abscissa value.

    ``kind="shots"`` sweeps shot budgets, ``"queries"`` sweeps the RQAE precision
    (the fitted abscissa is the median query count) and ``"M0"`` sweeps the block
    count with exact probabilities.  When ``M`` is None for ARSR or the QAE
    methods, the block count is chosen per point from ``candidates`` to minimise
    the median error; FSR falls back to its shot-driven adaptive rule.
    """
    _check_method(method, kind)
    if repeats < 1:
        raise ValueError("repeats must be positive")
    if tf.spec.size > 1 << 24:
        raise ValueError("grid exceeds the memory cap")
    if kind == "M0":
        cand = [None]
        repeats = 1  # exact probabilities: repeats would be identical
    elif M is not None or method in ("rsr", "rsqae"):
        cand = [M]
    elif method in ("fsr", "fsr-ext"):
        cand = ["adaptive"]
    else:
        cand = list(candidates) if candidates is not None else default_candidates(method, tf.spec)
    tasks = []
    for i, p in enumerate(abscissa):
        seeds = [task_seed(seed, i, r) for r in range(repeats)]
        tasks.append((method, kind, tf, p, cand, seeds))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_point_task, tasks))
    else:
        results = [_point_task(t) for t in tasks]
    records, med_err, med_cost, chosen = [], [], [], []
    for (_, _, _, p, _, seeds), (errs, costs, used) in zip(tasks, results):
        for s, e, c in zip(seeds, errs, costs):
            records.append({"parameter": p, "abscissa": float(c), "seed": s, "l2ns_error": float(e)})
        med_err.append(float(np.median(errs)))
        med_cost.append(float(np.median(costs)))
        chosen.append(used)
    return ScalingRun(method, kind, list(abscissa), np.array(med_cost), np.array(med_err), records,
                      chosen, tf.name)


# ---------------------------------------------------------------------------
# post-processing study


def postprocess_reconstruction(values: np.ndarray, spec: GridSpec, method: str, M0: int) -> np.ndarray:
    """Block-average fine RSR values then interpolate back to the full grid."""
    if method == "rsr":
        return values
    M = (M0,) * spec.d
    avg = "rms" if method == "rms-cubic" else method
    order = 3 if method == "rms-cubic" else 1
    return interpolate_coarse(post_process(values, avg, M), spec, M, order)


def run_postprocessing_study(name: str, n_values: Sequence[int], shots: int = 2_560_000,
                             repeats: int = 5, seed: int = 0,
                             methods: Sequence[str] = POSTPROC_METHODS) -> dict[str, ScalingRun]:
    """Error vs total grid number for each post-processing rule.

    For each realisation the block count M0 in {2, ..., N0} with the smallest
    error is kept (M0 = N0 leaves the raw values untouched).
    """
    for m in methods:
        if m not in POSTPROC_METHODS:
            raise ValueError(f"unknown post-processing {m!r}")
    errs = {m: [] for m in methods}
    chosen = {m: [] for m in methods}
    records = {m: [] for m in methods}
    sizes = []
    for i, n in enumerate(n_values):
        tf = TestFunction.named(name, n)
        spec = tf.spec
        sizes.append(spec.size)
        state = encode(tf.grid)
        p = state.probabilities().ravel(order="F")
        per = {m: [] for m in methods}
        best_M = {m: [] for m in methods}
        for r in range(repeats):
            s = task_seed(seed, i, r)
            counts = sample_probabilities(p, shots, rng_for(s, 1)).reshape(spec.shape, order="F")
            vals = rsr_values(counts, shots, state.norm)
            for m in methods:
                Ms = [None] if m == "rsr" else _block_candidates(spec.shape[0])
                trial = [l2ns_error(tf.grid.values, postprocess_reconstruction(vals, spec, m, M0))
                         for M0 in Ms]
                j = int(np.argmin(trial))
                per[m].append(trial[j])
                best_M[m].append(Ms[j])
                records[m].append({"parameter": n, "abscissa": spec.size, "seed": s, "l2ns_error": trial[j]})
        for m in methods:
            errs[m].append(float(np.median(per[m])))
            chosen[m].append(best_M[m])
    return {m: ScalingRun(m, "N", list(n_values), np.array(sizes, float), np.array(errs[m]),
                          records[m], chosen[m], name) for m in methods}


# ---------------------------------------------------------------------------
# shot estimator


def regularity_order(cls: str) -> int:
    key = cls.lower()
    if key not in ("w11", "w21"):
        raise ValueError(f"unsupported regularity class {cls!r}")
    return 1 if key == "w11" else 2


def estimate_required_shots(method: str, d: int, eps: float, cls: str) -> float:
    """Shots needed for error ``eps`` with grid N = eps^-d (constants set to one)."""
    p = regularity_order(cls)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if d not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    method = method.lower()
    if method == "rsr" or (method == "arsr" and p == 1):
        return eps ** -(2 + d)
    if method == "arsr":
        return eps ** -(2 + d / 2)
    if method == "fsr":
        s = 2 / (2 * p - 1)
        c = 1.0 if p == 1 else 0.5
        return eps ** -(2 + s) * math.log(1 / eps) ** (c * (d - 1))
    raise ValueError(f"no shot estimate for method {method!r}")


def round_sig(x: float, sig: int = 2) -> float:
    if x == 0:
        return 0.0
    return float(f"{x:.{sig - 1}e}")


def acceleration(method: str, d: int, eps: float, cls: str) -> float:
    """Ratio of the rounded RSR estimate to the rounded method estimate."""
    return (round_sig(estimate_required_shots("rsr", d, eps, cls))
            / round_sig(estimate_required_shots(method, d, eps, cls)))


def shot_table(cls: str, dims: Sequence[int] = (1, 2, 3), eps_values: Sequence[float] = (0.01, 0.001),
               methods: Sequence[str] = ("rsr", "arsr", "fsr")) -> list[dict]:
    rows = []
    for d in dims:
        for eps in eps_values:
            for m in methods:
                rows.append({"d": d, "eps": eps, "method": m,
                             "shots": round_sig(estimate_required_shots(m, d, eps, cls)),
                             "acceleration": round_sig(acceleration(m, d, eps, cls))})
    return rows


def format_count(x: float) -> str:
    """Compact 2-significant-figure rendering such as 4.6e5 or 1e8."""
    mant, exp = f"{round_sig(x):.1e}".split("e")
    mant = mant.rstrip("0").rstrip(".")
    return f"{mant}e{int(exp)}"


# ---------------------------------------------------------------------------
# CSV output


RESULT_COLUMNS = ("method", "abscissa_kind", "abscissa", "seed", "l2ns_error")
SUMMARY_COLUMNS = ("method", "slope", "stderr", "expected_slope")


def write_results_csv(path, runs: Sequence[ScalingRun]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for run in runs:
            for r in run.records:
                w.writerow([run.method, run.abscissa_kind, repr(float(r["abscissa"])), r["seed"],
                            repr(float(r["l2ns_error"]))])


def write_summary_csv(path, runs: Sequence[ScalingRun]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for run in runs:
            w.writerow([run.method, repr(run.slope), repr(run.stderr), repr(run.expected_slope)])


def read_results_csv(path) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]:
    """Median error per abscissa value, grouped by (method, abscissa kind)."""
    groups: dict[tuple[str, str], dict[float, list[float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            g = groups.setdefault((row["method"], row["abscissa_kind"]), {})
            g.setdefault(float(row["abscissa"]), []).append(float(row["l2ns_error"]))
    out = {}
    for key, g in groups.items():
        xs = np.array(sorted(g))
        out[key] = (xs, np.array([np.median(g[x]) for x in xs]))
    return out
