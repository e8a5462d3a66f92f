"""``scqr`` command line: fit, bootstrap, pfit, cv, simulate, bench, replay.

Every command writes its payload atomically to ``--out`` and a sidecar
``<out>.manifest.json`` with the resolved configuration, seed, version and
wall-clock timings.  Payloads never contain timings, so re-running a
manifest (``scqr replay``) reproduces them byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import inspect
import io
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import get_backend
from .bootstrap import CI_TYPES, confidence_intervals, run_bootstrap
from .cv import CvConfig, cv_select_lambda0
from .data import atomic_write_text, load_dataset, make_uniform_grid, process_csv_text
from .exceptions import DataError, NonConvergenceError
from .experiments import EXPERIMENT_RUNNERS, EXPERIMENTS, run_experiment
from .kernels import KernelKind
from .penalized import Penalty, fit_penalized_process
from .simulation import SimDesign, gen_dataset
from .solver import SolverConfig, fit_process, resolve_bandwidth

log = logging.getLogger("scqr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONV = 0, 1, 2, 3
COMMANDS = ("fit", "bootstrap", "pfit", "cv", "simulate", "bench", "replay")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n"


def _finite(obj):
    # strict JSON: failed fits (inf / nan scores) become null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _floats(a):
    return [float(v) for v in np.ravel(a)]


# ---------------------------------------------------------------- parser

def _add_globals(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--quiet", action="store_true", default=d(False), help="only report errors")
    p.add_argument("--threads", type=int, default=d(1), help="worker processes (default 1)")
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--y-col", default="y")
    p.add_argument("--status-col", default="status")


def _add_grid(p, tau_min=0.05, tau_max=0.8, tau_step=0.05):
    p.add_argument("--tau-min", type=float, default=tau_min)
    p.add_argument("--tau-max", type=float, default=tau_max)
    p.add_argument("--tau-step", type=float, default=tau_step)


def _add_smoothing(p, rule):
    p.add_argument("--kernel", default="gaussian", choices=[k.value for k in KernelKind])
    p.add_argument("--bandwidth", default=rule,
                   help="numeric bandwidth, or 'low_dim' / 'high_dim' rule (default %(default)s)")


def _add_penalty(p):
    p.add_argument("--penalty", default="lasso", choices=["lasso", "alasso", "scad", "mcp"])
    p.add_argument("--a", type=float, default=None, help="concavity (scad 3.7, mcp 3.0)")
    p.add_argument("--lla-steps", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scqr", description="Smoothed censored quantile regression.")
    parser.add_argument("--version", action="version", version=f"scqr {__version__}")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the coefficient process over a quantile grid")
    _add_data(p)
    _add_grid(p)
    _add_smoothing(p, "low_dim")
    p.add_argument("--out", required=True, help=".json or .csv")

    p = sub.add_parser("bootstrap", help="multiplier-bootstrap confidence intervals")
    _add_data(p)
    _add_grid(p, tau_max=None)
    _add_smoothing(p, "low_dim")
    p.add_argument("--B", type=int, default=1000)
    p.add_argument("--scheme", default="rademacher",
                   choices=["rademacher", "exponential", "multinomial"])
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--ci", default="all", choices=["all", *CI_TYPES])
    p.add_argument("--out", required=True)

    p = sub.add_parser("pfit", help="penalised fit for high-dimensional covariates")
    _add_data(p)
    _add_grid(p, 0.1, 0.75, 0.05)
    _add_smoothing(p, "high_dim")
    _add_penalty(p)
    p.add_argument("--lambda0", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="cross-validate the base penalty level")
    _add_data(p)
    _add_grid(p, 0.1, 0.75, 0.05)
    _add_smoothing(p, "high_dim")
    _add_penalty(p)
    p.add_argument("--lambda-min", type=float, default=0.01)
    p.add_argument("--lambda-max", type=float, default=0.2)
    p.add_argument("--lambda-count", type=int, default=50)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic censored dataset")
    p.add_argument("--model", default="homo", choices=["homo", "hetero"])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--sparsity", type=int, default=0)
    p.add_argument("--covariates", default="gaussian_ar", choices=["gaussian_ar", "mixed_blocks"])
    p.add_argument("--censoring", default="mixture", choices=["mixture", "none"])
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None)

    p = sub.add_parser("bench", help="run a Monte Carlo experiment, one CSV row per replication")
    p.add_argument("--experiment", required=True, choices=list(EXPERIMENTS))
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--model", default=None, choices=["homo", "hetero"])
    p.add_argument("--B", type=int, default=None, help="coverage only")
    p.add_argument("--lambda-count", type=int, default=None, dest="lambda_count",
                   help="penalized-selection only")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this path instead of the recorded one")

    for name, sp in sub.choices.items():
        _add_globals(sp, suppress=True)
    return parser


# ---------------------------------------------------------------- helpers

def _grid(args, tau_max=None):
    tmax = args.tau_max if tau_max is None else tau_max
    try:
        return make_uniform_grid(args.tau_min, tmax, args.tau_step)
    except ValueError as err:
        raise UsageError(f"bad quantile grid: {err}") from None


def _bandwidth(spec, n, p):
    try:
        h = float(spec)
    except ValueError:
        pass
    else:
        if not (math.isfinite(h) and h > 0):
            raise UsageError("--bandwidth must be a positive number or a rule name")
        return h
    try:
        return resolve_bandwidth(spec, n, p)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _check_spacing(grid, n):
    limit = 5.0 / math.sqrt(n)
    if grid.max_spacing > limit:
        log.warning("grid spacing %.4g exceeds 5/sqrt(n) = %.4g; consider a finer grid",
                    grid.max_spacing, limit)


def _load(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = load_dataset(args.data, args.y_col, args.status_col)
    for w in caught:
        log.warning("%s", w.message)
    log.info("loaded %d observations, %d columns (%.1f%% censored)",
             data.n, data.p, 100 * data.censoring_rate)
    return data


def _penalty(args):
    try:
        return Penalty(args.penalty, args.a, args.lla_steps)
    except ValueError as err:
        raise UsageError(str(err)) from None


class _Timer:
    def __init__(self):
        self.timings = {}

    def __call__(self, name):
        timer = self

        class _Phase:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[name] = time.perf_counter() - self.t0

        return _Phase()


# ---------------------------------------------------------------- commands

def cmd_fit(args, timer):
    with timer("load"):
        data = _load(args)
    grid = _grid(args)
    _check_spacing(grid, data.n)
    h = _bandwidth(args.bandwidth, data.n, data.p)
    with timer("fit"):
        proc = fit_process(data, grid, args.kernel, SolverConfig(), h=h)
    if proc.info["censored_below_base"] > 0:
        log.warning("%.1f%% of observations are censored below the base quantile plane",
                    100 * proc.info["censored_below_base"])
    config = {"kernel": args.kernel, "bandwidth": h, "grid": _floats(grid.taus),
              "solver": SolverConfig().to_dict()}
    if Path(args.out).suffix.lower() == ".json":
        payload = {"columns": list(data.columns), **proc.to_dict(),
                   "kernel": args.kernel, "bandwidth": h,
                   "iterations": [int(i) for i in proc.info["iterations"]]}
        return {args.out: _dump(payload)}, config
    return {args.out: process_csv_text(proc, list(data.columns))}, config


def cmd_bootstrap(args, timer):
    with timer("load"):
        data = _load(args)
    grid = _grid(args, args.tau_max if args.tau_max is not None else args.tau)
    try:
        k = grid.index(args.tau)
    except ValueError as err:
        raise UsageError(str(err)) from None
    if not math.isclose(grid.taus[k], args.tau, abs_tol=1e-9):
        raise UsageError(f"--tau {args.tau} is not a grid point")
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    if args.B < 1:
        raise UsageError("--B must be positive")
    _check_spacing(grid, data.n)
    if grid.max_spacing > 1.0 / math.sqrt(data.n):
        log.warning("grid spacing %.4g exceeds n^-1/2 = %.4g; the grid bias is not covered by "
                    "the intervals, use a finer --tau-step", grid.max_spacing, 1.0 / math.sqrt(data.n))
    h = _bandwidth(args.bandwidth, data.n, data.p)
    cfg = SolverConfig()
    with timer("fit"):
        proc = fit_process(data, grid, args.kernel, cfg, h=h)
    with timer("bootstrap"):
        boot = run_bootstrap(data, grid, args.kernel, cfg, args.scheme, args.B, args.seed,
                             args.threads, h=h)
    log.info("%d of %d replicates failed, %d weight redraws", boot.failures, boot.B, boot.redraws)
    types = CI_TYPES if args.ci == "all" else (args.ci,)
    try:
        ivs = {t: confidence_intervals(proc, boot, args.tau, args.level, t) for t in types}
    except ValueError as err:
        raise NonConvergenceError(str(err)) from None
    sd = boot.successful[:, k, :].std(axis=0, ddof=1)
    coefs = []
    for j, name in enumerate(data.columns):
        row = {"name": name, "estimate": float(proc.betas[k, j]), "sd": float(sd[j])}
        for t in types:
            row[t] = _floats(ivs[t][j])
        coefs.append(row)
    payload = {"tau": float(grid.taus[k]), "level": args.level, "B": args.B, "scheme": args.scheme,
               "seed": args.seed, "failures": boot.failures, "redraws": boot.redraws,
               "coefficients": coefs}
    config = {"kernel": args.kernel, "bandwidth": h, "grid": _floats(grid.taus),
              "solver": cfg.to_dict(), "B": args.B, "scheme": args.scheme, "tau": args.tau,
              "level": args.level, "ci": list(types)}
    return {args.out: _dump(payload)}, config


def cmd_pfit(args, timer):
    with timer("load"):
        data = _load(args)
    grid = _grid(args)
    if not args.lambda0 > 0:
        raise UsageError("--lambda0 must be positive")
    h = _bandwidth(args.bandwidth, data.n, data.p)
    pen = _penalty(args)
    with timer("fit"):
        proc = fit_penalized_process(data, grid, args.kernel, h, pen, args.lambda0)
    names = list(data.columns)
    payload = {"columns": names, **proc.to_dict(),
               "penalty": pen.kind.value, "a": pen.a, "lla_steps": pen.lla_steps,
               "lambda0": args.lambda0, "lambdas": _floats(proc.info["lambdas"]),
               "support": proc.info["support"],
               "support_names": [names[j] for j in proc.info["support"]],
               "supports": proc.info["supports"]}
    config = {"kernel": args.kernel, "bandwidth": h, "grid": _floats(grid.taus),
              "penalty": pen.kind.value, "a": pen.a, "lla_steps": pen.lla_steps,
              "lambda0": args.lambda0}
    return {args.out: _dump(payload)}, config


def cmd_cv(args, timer):
    with timer("load"):
        data = _load(args)
    grid = _grid(args)
    if args.lambda_count < 1 or not 0 < args.lambda_min <= args.lambda_max:
        raise UsageError("need 0 < --lambda-min <= --lambda-max and --lambda-count >= 1")
    cands = np.unique(np.linspace(args.lambda_min, args.lambda_max, args.lambda_count))
    try:
        cfg = CvConfig(args.folds, cands, args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    if args.folds > data.n:
        raise UsageError("more folds than observations")
    h = _bandwidth(args.bandwidth, data.n, data.p)
    pen = _penalty(args)
    with timer("cv"):
        res = cv_select_lambda0(data, grid, args.kernel, h, pen, cfg, threads=args.threads)
    if not np.isfinite(res.mean).any():
        raise NonConvergenceError("every lambda0 candidate failed on some fold")
    payload = {"lambda0": res.lambda0, "folds": args.folds, "seed": args.seed,
               "penalty": pen.kind.value, "candidates": res.table()}
    config = {"kernel": args.kernel, "bandwidth": h, "grid": _floats(grid.taus),
              "penalty": pen.kind.value, "a": pen.a, "lla_steps": pen.lla_steps,
              "candidates": _floats(cands), "folds": args.folds}
    return {args.out: _dump(payload)}, config


def cmd_simulate(args, timer):
    try:
        design = SimDesign(args.model, args.n, args.p, args.covariates, args.sparsity,
                           args.censoring, args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    with timer("simulate"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            data, truth = gen_dataset(design)
    for w in caught:
        log.warning("%s", w.message)
    log.info("censoring rate %.1f%%", 100 * data.censoring_rate)
    names = [f"x{j}" for j in range(1, data.p)]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["y", "status", *names])
    for yi, di, xi in zip(data.y, data.delta, data.X[:, 1:]):
        wr.writerow([repr(float(yi)), int(di), *(repr(float(v)) for v in xi)])
    outputs = {args.out: buf.getvalue()}
    config = {"model": design.model, "n": design.n, "p": design.p,
              "covariates": design.covariate_scheme, "sparsity": design.sparsity,
              "censoring": design.censoring}
    if args.truth_out:
        outputs[args.truth_out] = _dump({**truth.to_dict(), "design": config,
                                         "censoring_rate": data.censoring_rate})
    return outputs, config


def cmd_bench(args, timer):
    if args.reps < 1:
        raise UsageError("--reps must be positive")
    kwargs = {k: getattr(args, k) for k in ("n", "p", "model", "B", "lambda_count")
              if getattr(args, k) is not None}
    accepted = inspect.signature(EXPERIMENT_RUNNERS[args.experiment]).parameters
    unknown = [k for k in kwargs if k not in accepted]
    if unknown:
        raise UsageError(f"{args.experiment} does not take " + ", ".join(f"--{k}" for k in unknown))
    seeds = list(range(args.seed, args.seed + args.reps))
    with timer("experiment"):
        records = run_experiment(args.experiment, seeds, args.threads, **kwargs)
    seconds = [{k: r.pop(k) for k in list(r) if k.endswith("seconds")} for r in records]
    timer.timings["replications"] = seconds
    fields = list(records[0])
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(fields)
    for r in records:
        wr.writerow([repr(v) if isinstance(v, float) else v for v in (r[f] for f in fields)])
    config = {"experiment": args.experiment, "reps": args.reps, "seeds": seeds, **kwargs}
    return {args.out: buf.getvalue()}, config


_COMMANDS = {
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "pfit": cmd_pfit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------- dispatch

def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def _run(args, argv):
    timer = _Timer()
    outputs, config = _COMMANDS[args.command](args, timer)
    for path, text in outputs.items():
        atomic_write_text(path, text)
        log.info("wrote %s", path)
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": {**config, "threads": args.threads, "backend": get_backend()},
        "seed": args.seed,
        "version": __version__,
        "outputs": list(outputs),
        "timings": timer.timings,
    }
    atomic_write_text(manifest_path(args.out), _dump(manifest))


def _replay(args):
    path = Path(args.manifest)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        man = json.loads(path.read_text())
        argv = list(man["argv"])
    except (ValueError, KeyError, TypeError) as err:
        raise DataError(f"malformed manifest {path}: {err}") from None
    if args.out is not None:
        argv = _replace_out(argv, args.out)
    return argv


def _replace_out(argv, out):
    res, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == "--out":
            res += ["--out", out]
            skip = True
        elif a.startswith("--out="):
            res.append(f"--out={out}")
        else:
            res.append(a)
    return res


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("scqr: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(format="scqr: %(levelname)s: %(message)s", stream=sys.stderr,
                        force=True, level=logging.ERROR if args.quiet else logging.INFO)
    try:
        if args.command == "replay":
            return main(_replay(args))
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        _run(args, argv)
    except UsageError as err:
        log.error("%s", err)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as err:
        log.error("data error: %s", err)
        return EXIT_DATA
    except NonConvergenceError as err:
        log.error("did not converge: %s", err)
        return EXIT_NONCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
