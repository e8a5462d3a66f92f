"""K-fold selection of the base penalty level by deviance residuals."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonConvergenceError, DataError
from .penalized import Penalty, fit_penalized_process

__all__ = [
    "CvConfig",
    "CvResult",
    "martingale_residuals",
    "martingale_residual",
    "deviance",
    "fold_assignment",
    "cv_select_lambda0",
]

_LOG_CLAMP = 1.0 - 1e-10


@dataclass
class CvConfig:
    folds: int = 3
    lambda0_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.01, 0.2, 50))
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        grid = np.asarray(self.lambda0_grid, dtype=float).ravel()
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("lambda0 candidates must be positive")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("lambda0 candidates must be sorted ascending")
        self.lambda0_grid = grid


def martingale_residuals(y, delta, X, betas, grid) -> np.ndarray:
    """Matrix ``M[i, k]`` of martingale residuals along the grid.

    ``M_ik = 1{y_i <= x_i'b_k, Delta_i = 1} - sum_{j<k} 1{y_i >= x_i'b_j} dH_j - tau_0``,
    the hazard integral being exact for the piecewise-constant process.
    """
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=float)
    fitted = np.atleast_2d(X) @ np.asarray(betas).T
    events = ((y[:, None] <= fitted) & (delta[:, None] > 0)).astype(float)
    at_risk = (y[:, None] >= fitted[:, :-1]).astype(float) * grid.deltaH
    cum = np.zeros_like(events)
    if grid.m:
        cum[:, 1:] = np.cumsum(at_risk, axis=1)
    return events - cum - grid.tau_L


def martingale_residual(y, delta, x, proc, k) -> float:
    """Martingale residual of a single observation at grid index ``k``."""
    M = martingale_residuals(np.atleast_1d(y), np.atleast_1d(delta), np.atleast_2d(x),
                             proc.betas, proc.grid)
    return float(M[0, k])


def _deviance_terms(M, delta):
    d = np.broadcast_to(np.asarray(delta, dtype=float)[:, None], M.shape)
    ev = d > 0
    Mc = np.where(ev, np.minimum(M, _LOG_CLAMP), M)
    logterm = np.where(ev, np.log(np.where(ev, 1.0 - Mc, 1.0)), 0.0)
    radicand = -2.0 * (Mc + logterm)
    return np.sqrt(np.maximum(radicand, 0.0))


def deviance(data_fold, proc, grid=None) -> float:
    """Mean deviance residual over observations and grid levels."""
    grid = grid or proc.grid
    M = martingale_residuals(data_fold.y, data_fold.delta, data_fold.X, proc.betas, grid)
    return float(_deviance_terms(M, data_fold.delta).mean())


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label per observation: seeded permutation cut into contiguous blocks."""
    if folds > n:
        raise ValueError("more folds than observations")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    for f, block in enumerate(np.array_split(perm, folds)):
        labels[block] = f
    return labels


@dataclass
class CvResult:
    lambda0: float
    candidates: np.ndarray
    scores: np.ndarray  # (n_candidates, folds)
    fold_ids: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    @property
    def sd(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.scores.std(axis=1, ddof=1)

    def table(self):
        return [{"lambda0": float(l), "mean": float(m), "sd": float(s),
                 "folds": [float(v) for v in row]}
                for l, m, s, row in zip(self.candidates, self.mean, self.sd, self.scores)]


def _fold_scores(args):
    data, grid, kernel, h, penalty, candidates, train, test, lamm_cfg = args
    tr, te = data.subset(train), data.subset(test)
    out = np.full(candidates.size, np.inf)
    warm = None
    # largest lambda first: each solution warm-starts the next, denser one
    for c in range(candidates.size - 1, -1, -1):
        try:
            proc = fit_penalized_process(tr, grid, kernel, h, penalty, candidates[c],
                                         cfg=lamm_cfg, init_betas=warm)
        except (NonConvergenceError, DataError):
            warm = None
            continue
        warm = proc.betas
        out[c] = deviance(te, proc, grid)
    return out


def cv_select_lambda0(data, grid, kernel="gaussian", h=None, penalty=None, cfg=None,
                      fold_ids=None, threads=1, lamm_cfg=None) -> CvResult:
    """Choose ``lambda0`` minimising the mean held-out deviance.

    Ties go to the smaller candidate.  A candidate whose fit fails on any
    fold scores ``+inf``.  ``fold_ids`` overrides the seeded assignment.
    """
    cfg = cfg or CvConfig()
    penalty = penalty if isinstance(penalty, Penalty) else Penalty(penalty or "lasso")
    if h is None:
        from .solver import bandwidth_high_dim

        h = bandwidth_high_dim(data.n, data.p)
    if fold_ids is None:
        fold_ids = fold_assignment(data.n, cfg.folds, cfg.seed)
    fold_ids = np.asarray(fold_ids)
    labels = np.unique(fold_ids)
    tasks = [(data, grid, kernel, h, penalty, cfg.lambda0_grid,
              np.flatnonzero(fold_ids != f), np.flatnonzero(fold_ids == f), lamm_cfg)
             for f in labels]
    if threads > 1 and len(tasks) > 1:
        from ._accel import warmup

        warmup()
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as ex:
            cols = list(ex.map(_fold_scores, tasks))
    else:
        cols = [_fold_scores(t) for t in tasks]
    scores = np.column_stack(cols)
    mean = scores.mean(axis=1)
    best = int(np.argmin(mean))  # first minimum = smallest lambda0
    return CvResult(float(cfg.lambda0_grid[best]), cfg.lambda0_grid.copy(), scores, fold_ids)
