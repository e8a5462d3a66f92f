"""Monte Carlo experiments behind ``scqr bench`` and the acceptance suite.

Each experiment maps one seed to one flat record; :func:`run_experiment`
fans seeds out over worker processes and returns records in seed order.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .bootstrap import CI_TYPES, confidence_intervals, run_bootstrap
from .cv import CvConfig, cv_select_lambda0
from .data import make_uniform_grid
from .exceptions import NonConvergenceError
from .penalized import Penalty, fit_penalized_process, refit_on_support
from .simulation import SimDesign, gen_dataset, metrics
from .solver import SolverConfig, bandwidth_high_dim, fit_process

EXPERIMENTS = ("fit-process", "coverage", "penalized-selection")


def fit_process_record(seed, n=500, p=10, model="homoscedastic", covariates="gaussian_ar",
                       tau_min=0.05, tau_max=0.8, tau_step=0.05, kernel="gaussian"):
    design = SimDesign(model, n, p, covariates, 0, "mixture", seed)
    data, truth = gen_dataset(design)
    grid = make_uniform_grid(tau_min, tau_max, tau_step)
    t0 = time.perf_counter()
    proc = fit_process(data, grid, kernel)
    elapsed = time.perf_counter() - t0
    met = metrics(proc, truth)
    rec = {"seed": seed, "n": n, "p": p, "model": design.model,
           "censoring_rate": data.censoring_rate, "bandwidth": proc.info["bandwidth"],
           "l2_avg": met["l2_avg"], "l2_sup": met["l2_sup"], "seconds": elapsed}
    for t, e in zip(grid.taus, met["l2_by_tau"]):
        rec[f"l2_tau_{t:.2f}"] = e
    return rec


def coverage_record(seed, n=800, p=5, model="homoscedastic", tau=0.5, B=200, level=0.95,
                    scheme="rademacher", tau_min=0.05, tau_step=0.01, kernel="gaussian"):
    # the sequential fit carries a discretisation bias of order tau_step that the
    # bootstrap does not see; intervals need tau_step well below n^-1/2
    design = SimDesign(model, n, p, "gaussian_ar", 0, "mixture", seed)
    data, truth = gen_dataset(design)
    # levels above tau never influence the estimate at tau
    grid = make_uniform_grid(tau_min, tau, tau_step)
    t0 = time.perf_counter()
    proc = fit_process(data, grid, kernel)
    boot = run_bootstrap(data, grid, kernel, scheme=scheme, B=B, seed=seed)
    elapsed = time.perf_counter() - t0
    target = truth.beta(tau)
    rec = {"seed": seed, "n": n, "p": p, "tau": tau, "B": B, "failures": boot.failures,
           "censoring_rate": data.censoring_rate, "seconds": elapsed}
    for ci in CI_TYPES:
        iv = confidence_intervals(proc, boot, tau, level, ci)
        for j in range(data.p):
            rec[f"cover_{ci}_{j}"] = int(iv[j, 0] <= target[j] <= iv[j, 1])
            rec[f"width_{ci}_{j}"] = float(iv[j, 1] - iv[j, 0])
    return rec


def selection_record(seed, n=300, p=800, s=5, model="homoscedastic", penalties=("lasso", "scad", "mcp"),
                     tau_min=0.1, tau_max=0.75, tau_step=0.05, lambda_min=0.01, lambda_max=0.2,
                     lambda_count=50, folds=3, kernel="gaussian"):
    design = SimDesign(model, n, p, "gaussian_ar", s, "mixture", seed)
    data, truth = gen_dataset(design)
    grid = make_uniform_grid(tau_min, tau_max, tau_step)
    h = bandwidth_high_dim(data.n, data.p)
    cv_cfg = CvConfig(folds, np.linspace(lambda_min, lambda_max, lambda_count), seed)
    rec = {"seed": seed, "n": n, "p": p, "s": s, "model": design.model,
           "censoring_rate": data.censoring_rate}
    for name in penalties:
        pen = Penalty(name)
        t0 = time.perf_counter()
        cv = cv_select_lambda0(data, grid, kernel, h, pen, cv_cfg)
        fit = fit_penalized_process(data, grid, kernel, h, pen, cv.lambda0)
        S_hat = fit.info["support"]
        try:
            refit = refit_on_support(data, grid, kernel, SolverConfig(), S_hat)
            l2 = metrics(refit, truth)["l2_avg"]
        except (NonConvergenceError, ValueError):
            l2 = float("nan")
        met = metrics(fit, truth, truth.support, S_hat)
        rec.update({f"{name}_lambda0": cv.lambda0, f"{name}_tpr": met["tpr"],
                    f"{name}_fdr": met["fdr"], f"{name}_size": met["size"],
                    f"{name}_l2_pen": met["l2_avg"], f"{name}_l2_refit": l2,
                    f"{name}_seconds": time.perf_counter() - t0})
    return rec


EXPERIMENT_RUNNERS = {
    "fit-process": fit_process_record,
    "coverage": coverage_record,
    "penalized-selection": selection_record,
}


def _call(args):
    name, seed, kwargs = args
    return EXPERIMENT_RUNNERS[name](seed, **kwargs)


def run_experiment(name, seeds, threads=1, **kwargs):
    """Run experiment ``name`` once per seed; records come back in seed order."""
    if name not in EXPERIMENT_RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    tasks = [(name, int(s), kwargs) for s in seeds]
    if threads > 1 and len(tasks) > 1:
        from ._accel import warmup

        warmup()
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_call, tasks))
    return [_call(t) for t in tasks]
