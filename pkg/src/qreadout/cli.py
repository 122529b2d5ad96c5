"""Command-line entry point: ``qreadout <command> ...``.

Configuration comes from built-in defaults, then an optional JSON file
(``--config``; a previous run manifest also works), then explicit flags.  Every
command that writes files also writes ``manifest.json`` holding the resolved
configuration and SHA-256 checksums, so ``--config out/manifest.json`` replays a
run.  Exit status: 0 success, 1 runtime failure (error record on stderr and in
``error.json``), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import bench, burgers_tsr, cfd
from .gridfn import GridFunction, encode, l2ns_error, write_grid_csv
from .readout_qae import RqaeConfig, fsqae_readout, fsqae2_readout, rsqae_readout
from .readout_sampling import (ReadoutConfig, arsr_readout, extension_fsr_readout, fsr_readout, rsr_readout,
                               write_coefficients_csv)

OUT_ENV = "QREADOUT_OUT"

DEFAULTS = {
    "bench example1": {"function": "gaussian2d", "methods": ["rsr", "arsr", "fsr", "fsqae"],
                       "shots": list(bench.DEFAULT_SHOTS), "eps": list(bench.DEFAULT_EPS),
                       "m0": list(bench.DEFAULT_M0), "n": 9, "qae_n": 6, "repeats": 5, "seed": 0,
                       "approx": False},
    "bench example2": {"function": "sine2d", "methods": ["rsr", "arsr", "fsr", "fsqae", "fsqae2"],
                       "shots": list(bench.DEFAULT_SHOTS), "eps": list(bench.DEFAULT_EPS[:-1]),
                       "m0": list(bench.DEFAULT_M0), "n": 9, "qae_n": 6, "repeats": 5, "seed": 0,
                       "approx": False},
    "bench postproc": {"function": "gaussian2d", "n_values": list(range(3, 10)), "shots": 2_560_000,
                       "methods": list(bench.POSTPROC_METHODS), "repeats": 5, "seed": 0},
    "bench cfd-scaling": {"field": "cavity", "component": "ux", "methods": ["rsr", "arsr", "fsr"],
                          "shots": [10_000 * 4**i for i in range(5)], "n": 9, "repeats": 5, "seed": 0},
    "readout": {"input": None, "function": "gaussian2d", "n": 6, "method": "fsr", "shots": 100_000,
                "M": None, "eps": 0.01, "gamma": 0.05, "q": 2, "seed": 0, "boundary": "wrap"},
    "cfd visualize": {"field": "cavity", "input": None, "matrix": None, "upsample": None, "method": "fsr",
                      "shots": 160_000, "n": 9, "seed": 0},
    "burgers run": {"n": 5, "dt": 0.04, "steps": 25, "nu": 0.05, "method": "fsr", "shots": 100_000,
                    "kappa": 0.51, "seed": 0, "dump_fields": False},
    "estimate-shots": {"cls": "w21", "dim": 2, "eps": 0.01},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers


def write_series_csv(rows: Sequence[dict] | Sequence[Sequence], path, columns: Sequence[str]) -> Path:
    """CSV with a mandatory header row and LF line endings."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns] if isinstance(r, dict) else list(r))
    return path


def read_series_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_heatmap(grid, path) -> Path:
    values = grid.values if isinstance(grid, GridFunction) else np.asarray(grid)
    cfd.write_pgm(values, path)
    return Path(path)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, artifacts: Sequence[Path]) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "output_dir": str(out),
        "version": __version__,
        "artifacts": {p.name: sha256(p) for p in sorted(artifacts, key=lambda p: p.name)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", newline="\n")
    return path


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(float(t)) for t in text.split(",") if t]


def _words(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    sup = argparse.SUPPRESS
    p = _Parser(prog="qreadout", description="Readout of amplitude-encoded functions.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", default=None, help="JSON file with settings (flags win)")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./qreadout-out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        if seed:
            sp.add_argument("--seed", type=int, default=sup)

    b = sub.add_parser("bench", help="scaling experiments")
    bsub = b.add_subparsers(dest="experiment", parser_class=_Parser)
    for name in ("example1", "example2"):
        e = bsub.add_parser(name, argument_default=sup)
        common(e)
        e.add_argument("--methods", type=_words)
        e.add_argument("--shots", type=_ints)
        e.add_argument("--eps", type=_floats)
        e.add_argument("--m0", type=_ints)
        e.add_argument("--n", type=int)
        e.add_argument("--qae-n", dest="qae_n", type=int)
        e.add_argument("--repeats", type=int)
        e.add_argument("--approx", action="store_true", help="also run the shot-free M0 sweeps")
    e = bsub.add_parser("postproc", argument_default=sup)
    common(e)
    e.add_argument("--function")
    e.add_argument("--n-values", dest="n_values", type=_ints)
    e.add_argument("--shots", type=int)
    e.add_argument("--methods", type=_words)
    e.add_argument("--repeats", type=int)
    e = bsub.add_parser("cfd-scaling", argument_default=sup)
    common(e)
    e.add_argument("--field", choices=sorted(cfd.SYNTHETIC_FIELDS))
    e.add_argument("--component", choices=["ux", "uy"])
    e.add_argument("--methods", type=_words)
    e.add_argument("--shots", type=_ints)
    e.add_argument("--n", type=int)
    e.add_argument("--repeats", type=int)

    r = sub.add_parser("readout", argument_default=sup, help="read out one grid function")
    common(r)
    r.add_argument("--input", help="Grid CSV file")
    r.add_argument("--function", choices=sorted(bench.EVALUATORS))
    r.add_argument("--n", type=int)
    r.add_argument("--method", choices=["rsr", "arsr", "fsr", "fsr-ext", "fsqae", "fsqae2", "rsqae"])
    r.add_argument("--shots", type=int)
    r.add_argument("--M", type=int)
    r.add_argument("--eps", type=float)
    r.add_argument("--gamma", type=float)
    r.add_argument("--q", type=int)
    r.add_argument("--boundary", choices=["wrap", "extrapolate"])

    c = sub.add_parser("cfd", help="flow-field visualisation")
    csub = c.add_subparsers(dest="experiment", parser_class=_Parser)
    v = csub.add_parser("visualize", argument_default=sup)
    common(v)
    v.add_argument("--field", choices=sorted(cfd.SYNTHETIC_FIELDS))
    v.add_argument("--input", nargs=2, metavar=("UX_CSV", "UY_CSV"))
    v.add_argument("--matrix", help="two-column text file")
    v.add_argument("--upsample", type=int)
    v.add_argument("--method", choices=list(cfd.CFD_METHODS))
    v.add_argument("--shots", type=int)
    v.add_argument("--n", type=int)

    g = sub.add_parser("burgers", help="time-stepwise readout for 2D Burgers")
    gsub = g.add_subparsers(dest="experiment", parser_class=_Parser)
    br = gsub.add_parser("run", argument_default=sup)
    common(br)
    br.add_argument("--n", type=int)
    br.add_argument("--dt", type=float)
    br.add_argument("--steps", type=int)
    br.add_argument("--nu", type=float)
    br.add_argument("--method", choices=["fsr", "rsr", "exact"])
    br.add_argument("--shots", type=int)
    br.add_argument("--kappa", type=float)
    br.add_argument("--dump-fields", dest="dump_fields", action="store_true")

    s = sub.add_parser("estimate-shots", argument_default=sup, help="closed-form shot estimates")
    s.add_argument("--class", dest="cls", choices=["w11", "w21", "W11", "W21"])
    s.add_argument("--dim", type=int, choices=[1, 2, 3])
    s.add_argument("--eps", type=float)
    s.add_argument("--config", default=None)
    return p


def resolve(ns: argparse.Namespace) -> tuple[str, dict, dict]:
    """Return (command key, resolved config, runtime options)."""
    if ns.command is None:
        raise UsageError("a command is required\n" + build_parser().format_usage())
    key = ns.command if getattr(ns, "experiment", None) is None else f"{ns.command} {ns.experiment}"
    if key not in DEFAULTS:
        raise UsageError(f"unknown command {key!r}")
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "experiment", "config", "out", "jobs")}
    cfg = dict(DEFAULTS[key])
    if getattr(ns, "config", None):
        data = json.loads(Path(ns.config).read_text())
        data = data.get("config", data)
        unknown = set(data) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    cfg.update(flags)
    opts = {"out": getattr(ns, "out", None), "jobs": getattr(ns, "jobs", 1)}
    return key, cfg, opts


def output_dir(opt: str | None) -> Path:
    out = Path(opt or os.environ.get(OUT_ENV) or "qreadout-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def _bench_example(cfg: dict, out: Path, jobs: int, approx: bool) -> list[Path]:
    runs = []
    for m in cfg["methods"]:
        if m in bench.SHOT_METHODS:
            tf = bench.make_test_function(cfg["function"], cfg["n"])
            runs.append(bench.run_scaling_experiment(m, tf, cfg["shots"], cfg["repeats"], cfg["seed"],
                                                     "shots", jobs=jobs))
        elif m in bench.QUERY_METHODS:
            tf = bench.make_test_function(cfg["function"], cfg["qae_n"])
            runs.append(bench.run_scaling_experiment(m, tf, cfg["eps"], cfg["repeats"], cfg["seed"],
                                                     "queries", jobs=jobs))
        else:
            raise UsageError(f"unknown method {m!r}")
    if approx:
        tf = bench.make_test_function(cfg["function"], cfg["n"])
        for m in ("arsr", "fsr"):
            runs.append(bench.run_scaling_experiment(m, tf, cfg["m0"], kind="M0", jobs=jobs))
    for r in runs:
        if len(r.abscissa) >= 4:
            r.fit()
    res, summ = out / "results.csv", out / "summary.csv"
    bench.write_results_csv(res, runs)
    bench.write_summary_csv(summ, runs)
    for r in runs:
        print(f"{r.method:8s} {r.abscissa_kind:8s} slope {r.slope:+.3f} (expected {r.expected_slope:+.3f})")
    return [res, summ]


def _bench_postproc(cfg: dict, out: Path) -> list[Path]:
    runs = bench.run_postprocessing_study(cfg["function"], cfg["n_values"], cfg["shots"], cfg["repeats"],
                                          cfg["seed"], cfg["methods"])
    runs = [r.fit() if len(r.abscissa) >= 4 else r for r in runs.values()]
    res, summ = out / "results.csv", out / "summary.csv"
    bench.write_results_csv(res, runs)
    bench.write_summary_csv(summ, runs)
    for r in runs:
        print(f"{r.method:10s} slope vs N {r.slope:+.3f}")
    return [res, summ]


def _bench_cfd(cfg: dict, out: Path) -> list[Path]:
    field = cfd.SYNTHETIC_FIELDS[cfg["field"]](cfg["n"])
    runs = [cfd.run_cfd_scaling(field, cfg["component"], m, cfg["shots"], cfg["repeats"], cfg["seed"],
                                label=cfg["field"]) for m in cfg["methods"]]
    runs = [r.fit() if len(r.abscissa) >= 4 else r for r in runs]
    res, summ = out / "results.csv", out / "summary.csv"
    bench.write_results_csv(res, runs)
    bench.write_summary_csv(summ, runs)
    for r in runs:
        print(f"{r.method:8s} slope {r.slope:+.3f}")
    return [res, summ]


def _readout(cfg: dict, out: Path) -> list[Path]:
    if cfg["input"]:
        tf = bench.TestFunction.from_file(cfg["input"])
    else:
        tf = bench.make_test_function(cfg["function"], cfg["n"])
    state = encode(tf.grid)
    method = cfg["method"]
    if method in ("fsqae", "fsqae2", "rsqae"):
        qcfg = RqaeConfig(eps=cfg["eps"], gamma=cfg["gamma"], q=cfg["q"])
        M = cfg["M"] or 4
        if method == "fsqae":
            rec = fsqae_readout(state, M, qcfg, cfg["seed"])
        elif method == "fsqae2":
            rec = fsqae2_readout(state, M, qcfg, cfg["seed"])
        else:
            rec = rsqae_readout(state, None, qcfg, cfg["seed"])
    else:
        M = None if method == "rsr" else (cfg["M"] or "adaptive")
        rcfg = ReadoutConfig(shots=cfg["shots"], seed=cfg["seed"], M=M, boundary=cfg["boundary"])
        fn = {"rsr": rsr_readout, "arsr": arsr_readout, "fsr": fsr_readout, "fsr-ext": extension_fsr_readout}
        rec = fn[method](state, rcfg)
    arts = [out / "reconstruction.csv"]
    write_grid_csv(arts[0], rec.values)
    if method == "fsr":
        arts.append(out / "coefficients.csv")
        write_coefficients_csv(arts[-1], rec)
    if tf.spec.d == 2:
        arts.append(render_heatmap(rec.values, out / "reconstruction.pgm"))
    err = l2ns_error(tf.grid, rec.values)
    print(f"{method}: cost {rec.cost}, block {rec.M}, l2ns error {err:.6g}")
    return arts


def _cfd_visualize(cfg: dict, out: Path) -> list[Path]:
    if cfg["input"]:
        field = cfd.load_field(tuple(cfg["input"]), "grid")
    elif cfg["matrix"]:
        field = cfd.load_field(cfg["matrix"], "matrix")
    else:
        field = cfd.SYNTHETIC_FIELDS[cfg["field"]](cfg["n"])
    if cfg["upsample"] or field.needs_upsampling:
        target = cfg["upsample"] or 1 << int(np.ceil(np.log2(max(field.shape))))
        field = cfd.spline_upsample(field, target)
    if field.minima is None:
        field.minima = (float(field.ux.min()), float(field.uy.min()))
    rec_ux = cfd.read_component(field, "ux", cfg["method"], cfg["shots"], cfg["seed"])
    rec_uy = cfd.read_component(field, "uy", cfg["method"], cfg["shots"], cfg["seed"] + 1)
    rec = cfd.VelocityField(rec_ux.values, rec_uy.values, field.axes, field.L)
    arts = []
    for tag, f in (("true", field), ("readout", rec)):
        for name, grid in (("ux", f.ux), ("uy", f.uy), ("curl", cfd.curl_9pt(f, periodic=False)),
                           ("stream", cfd.stream_function(f))):
            arts.append(render_heatmap(grid, out / f"{tag}_{name}.pgm"))
    for name, a, b in (("ux", field.ux, rec.ux), ("uy", field.uy, rec.uy)):
        print(f"{name}: relative l2 error {np.linalg.norm(a - b) / np.linalg.norm(a):.4g}")
    return arts


def _burgers(cfg: dict, out: Path) -> list[Path]:
    bc = burgers_tsr.BurgersConfig(n=cfg["n"], dt=cfg["dt"], steps=cfg["steps"], nu=cfg["nu"],
                                   method=cfg["method"], shots=cfg["shots"], kappa=cfg["kappa"], seed=cfg["seed"])
    trace = burgers_tsr.tsr_run(bc)
    arts = [out / "trace.csv"]
    trace.write_csv(arts[0])
    if cfg["dump_fields"]:
        arts += trace.dump_fields(out, bc.spec)
    print(f"final l2ns error {trace.errors[-1]:.4g}; p_k in [{min(trace.p):.3f}, {max(trace.p):.3f}]; "
          f"no-TSR cumulative {trace.cumulative[-1]:.3g}; total shots {trace.total_shots:.3g}")
    return arts


def _estimate(cfg: dict) -> None:
    d, eps, cls = cfg["dim"], cfg["eps"], cfg["cls"]
    for m in ("rsr", "arsr", "fsr"):
        n = bench.estimate_required_shots(m, d, eps, cls)
        line = f"{m.upper():5s} {bench.format_count(n)}"
        if m != "rsr":
            line += f"  acceleration {bench.format_count(bench.acceleration(m, d, eps, cls))}"
        print(line)


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
        key, cfg, opts = resolve(ns)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    if key == "estimate-shots":
        try:
            _estimate(cfg)
        except ValueError as exc:
            print(json.dumps({"error": "ValueError", "message": str(exc)}), file=sys.stderr)
            return 1
        return 0
    out = None
    try:
        out = output_dir(opts["out"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            if key in ("bench example1", "bench example2"):
                arts = _bench_example(cfg, out, opts["jobs"], bool(cfg["approx"]))
            elif key == "bench postproc":
                arts = _bench_postproc(cfg, out)
            elif key == "bench cfd-scaling":
                arts = _bench_cfd(cfg, out)
            elif key == "readout":
                arts = _readout(cfg, out)
            elif key == "cfd visualize":
                arts = _cfd_visualize(cfg, out)
            else:
                arts = _burgers(cfg, out)
        write_manifest(out, key, cfg, arts)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable record
        record = {"error": type(exc).__name__, "message": str(exc), "command": key}
        print(json.dumps(record), file=sys.stderr)
        if out is not None:
            try:
                (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
            except OSError:
                pass
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())
