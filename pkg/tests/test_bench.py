import numpy as np
import pytest
from hypothesis import given, strategies as st

from qreadout.bench import (
    EVALUATORS, ScalingRun, TestFunction, acceleration, estimate_required_shots, fit_loglog_slope, format_count,
    make_test_function, read_results_csv, round_sig, run_postprocessing_study, run_scaling_experiment, shot_table,
    task_seed, write_results_csv, write_summary_csv,
)
from qreadout.gridfn import GridFunction, GridSpec, write_grid_csv


# --- test functions --------------------------------------------------------

@pytest.mark.parametrize("name", sorted(EVALUATORS))
def test_named_functions_match_evaluators(name):
    tf = TestFunction.named(name, 5)
    ref = tf.evaluator(*tf.spec.mesh())
    assert np.max(np.abs(ref - tf.grid.values)) <= 1e-12


def test_evaluator_mismatch_rejected():
    spec = GridSpec((3, 3))
    g = GridFunction(spec, np.zeros(spec.shape))
    with pytest.raises(ValueError):
        TestFunction("x", g, EVALUATORS["sine2d"])
    with pytest.raises(ValueError):
        TestFunction.named("nope", 3)
    with pytest.raises(ValueError):
        TestFunction.named("ramp1d", (3, 3))


def test_function_from_grid_file(tmp_path):
    tf = TestFunction.named("gaussian2d", 4)
    p = tmp_path / "custom.csv"
    write_grid_csv(p, tf.grid)
    loaded = make_test_function(str(p))
    assert loaded.name == "custom"
    assert np.array_equal(loaded.grid.values, tf.grid.values)


# --- slope fitting ---------------------------------------------------------

def test_fit_exact_power_law_and_constant():
    x = np.array([1e4, 4e4, 1.6e5, 6.4e5, 2.56e6])
    s, se = fit_loglog_slope(x, x**-0.5)
    assert abs(s + 0.5) <= 1e-12
    s, _ = fit_loglog_slope(x, np.full(5, 0.3))
    assert abs(s) <= 1e-12


def test_fit_noisy_power_law():
    rng = np.random.default_rng(0)
    x = np.logspace(2, 6, 9)
    y = 3 * x ** (-1 / 3) * (1 + 0.01 * rng.normal(size=x.size))
    s, _ = fit_loglog_slope(x, y)
    assert abs(s + 1 / 3) <= 0.02


@pytest.mark.parametrize("x,y", [([1, 2, 3], [1, 1, 1]), ([1, 2, 3, 4], [1, 0, 1, 1]),
                                 ([5, 5, 5, 5], [1, 2, 3, 4]), ([-1, 2, 3, 4], [1, 1, 1, 1])])
def test_fit_rejects_bad_input(x, y):
    with pytest.raises(ValueError):
        fit_loglog_slope(x, y)


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_fit_recovers_any_power(p, c):
    x = np.logspace(0, 4, 6)
    s, _ = fit_loglog_slope(x, c * x**p)
    assert abs(s - p) < 1e-9


# --- scaling runs ----------------------------------------------------------

def test_rsr_medians_decrease_on_sine():
    tf = TestFunction.named("sine2d", 6)
    run = run_scaling_experiment("rsr", tf, [10_000 * 4**i for i in range(5)], repeats=3, seed=1)
    assert np.all(np.diff(run.errors) < 0)
    assert run.fit().slope < 0 and np.isfinite(run.stderr)


def test_fsr_shot_free_exact_on_sine():
    tf = TestFunction.named("sine2d", 6)
    run = run_scaling_experiment("fsr", tf, [2, 4, 8, 16], kind="M0")
    assert np.all(run.errors < 1e-10)


def test_arsr_approximation_sweep_slope():
    tf = TestFunction.named("gaussian2d", 8)
    run = run_scaling_experiment("arsr", tf, [2, 4, 8, 16, 32, 64], kind="M0").fit()
    assert abs(run.slope + 2) <= 0.15


def test_method_abscissa_mismatch():
    tf = TestFunction.named("sine2d", 4)
    with pytest.raises(ValueError):
        run_scaling_experiment("rsr", tf, [2, 4, 8, 16], kind="M0")
    with pytest.raises(ValueError):
        run_scaling_experiment("fsqae", tf, [1000, 2000], kind="shots")
    with pytest.raises(ValueError):
        run_scaling_experiment("fsr", tf, [1000], kind="time")


def test_scaling_run_is_reproducible():
    tf = TestFunction.named("gaussian2d", 5)
    a = run_scaling_experiment("arsr", tf, [1000, 4000], repeats=2, seed=3)
    b = run_scaling_experiment("arsr", tf, [1000, 4000], repeats=2, seed=3)
    assert np.array_equal(a.errors, b.errors) and a.records == b.records
    c = run_scaling_experiment("arsr", tf, [1000, 4000], repeats=2, seed=4)
    assert not np.array_equal(a.errors, c.errors)


def test_parallel_run_matches_serial():
    tf = TestFunction.named("gaussian2d", 5)
    a = run_scaling_experiment("fsr", tf, [1000, 4000, 16000], repeats=2, seed=3)
    b = run_scaling_experiment("fsr", tf, [1000, 4000, 16000], repeats=2, seed=3, jobs=2)
    assert np.array_equal(a.errors, b.errors)


def test_query_sweep_uses_query_abscissa():
    tf = TestFunction.named("sine2d", 3)
    run = run_scaling_experiment("fsqae", tf, [0.05, 0.02], repeats=1, seed=0, kind="queries")
    assert np.all(run.abscissa > 100)
    assert run.abscissa[1] > run.abscissa[0]


def test_task_seeds_distinct():
    seeds = {task_seed(0, i, r) for i in range(10) for r in range(10)}
    assert len(seeds) == 100


def test_postprocessing_study_shapes():
    runs = run_postprocessing_study("gaussian2d", [3, 4], shots=10_000, repeats=2, seed=0)
    assert set(runs) == {"rsr", "rms-cubic", "rms", "mean", "harmonic", "fmf"}
    for r in runs.values():
        assert r.abscissa_kind == "N" and list(r.abscissa) == [64.0, 256.0]
        assert np.all(r.errors > 0)
    # choosing the best block count never loses against the raw values
    assert np.all(runs["rms"].errors <= runs["rsr"].errors + 1e-12)


# --- shot estimator --------------------------------------------------------

def test_estimator_examples():
    assert round_sig(estimate_required_shots("rsr", 2, 0.01, "W11")) == 1e8
    assert round_sig(estimate_required_shots("arsr", 2, 0.01, "W11")) == 1e8
    assert round_sig(estimate_required_shots("fsr", 2, 0.01, "W11")) == 4.6e8
    assert round_sig(estimate_required_shots("arsr", 3, 0.001, "W21")) == 3.2e10
    assert round_sig(estimate_required_shots("fsr", 3, 0.001, "W21")) == 6.9e8
    assert round_sig(estimate_required_shots("arsr", 1, 0.01, "W21")) == 1e5
    assert round_sig(estimate_required_shots("fsr", 1, 0.01, "W21")) == 2.2e5
    assert format_count(4.6e5) == "4.6e5" and format_count(1e8) == "1e8"
    assert acceleration("fsr", 2, 0.01, "w21") == pytest.approx(1e8 / 4.6e5)


@pytest.mark.parametrize("kw", [dict(method="rsr", d=4, eps=0.01, cls="w21"), dict(method="rsr", d=2, eps=1.0, cls="w21"),
                                dict(method="rsr", d=2, eps=0.01, cls="w31"), dict(method="qae", d=2, eps=0.01, cls="w21")])
def test_estimator_errors(kw):
    with pytest.raises(ValueError):
        estimate_required_shots(**kw)


def test_shot_table_rows():
    rows = shot_table("w21")
    assert len(rows) == 3 * 2 * 3
    assert {r["method"] for r in rows} == {"rsr", "arsr", "fsr"}


@given(st.floats(1e-4, 0.5), st.sampled_from([1, 2, 3]))
def test_fsr_cheaper_for_smoother_class(eps, d):
    assert estimate_required_shots("fsr", d, eps, "w21") <= estimate_required_shots("fsr", d, eps, "w11")


# --- CSV -------------------------------------------------------------------

def test_results_csv_roundtrip_and_fit(tmp_path):
    tf = TestFunction.named("sine2d", 5)
    run = run_scaling_experiment("rsr", tf, [1000, 4000, 16000, 64000], repeats=3, seed=0).fit()
    p, q = tmp_path / "r.csv", tmp_path / "s.csv"
    write_results_csv(p, [run])
    write_summary_csv(q, [run])
    assert p.read_text().splitlines()[0] == "method,abscissa_kind,abscissa,seed,l2ns_error"
    assert q.read_text().splitlines()[0] == "method,slope,stderr,expected_slope"
    xs, med = read_results_csv(p)[("rsr", "shots")]
    assert np.array_equal(med, run.errors)
    assert fit_loglog_slope(xs, med) == pytest.approx((run.slope, run.stderr))


def test_expected_slope_lookup():
    r = ScalingRun("fsr", "shots", [], np.array([]), np.array([]), function="gaussian2d")
    assert r.expected_slope == -0.25
    assert np.isnan(ScalingRun("fsr", "shots", [], np.array([]), np.array([]), function="x").expected_slope)
