"""Penalised sequential estimation for high-dimensional censored QR.

At each grid level the estimator minimises ``L_k(b) + lambda_k sum_j w_j |b_j|``
with a local adaptive majorize-minimization (LAMM) scheme: isotropic
quadratic majorisation of ``L_k`` followed by soft-thresholding.  Penalty
levels dilate along the grid as ``lambda_k = {1 + log((1-tau_L)/(1-tau_k))} lambda_0``.
Folded-concave penalties are handled by local linear approximation: the
lasso path is the pilot, its coefficients at each level set the weights,
and the reweighted problems are solved along a second sequential path.
The intercept (column 0) is never penalised.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import CoefficientProcess, QuantileGrid
from .exceptions import DataError, NonConvergenceError
from .kernels import KernelKind
from .solver import AccumulatedOffset, SolverConfig, _check_offset, _Problem, weighted_fit

__all__ = [
    "PenaltyKind",
    "Penalty",
    "LambdaSequence",
    "LammConfig",
    "LammResult",
    "lambda_sequence",
    "penalty_weight",
    "soft_threshold",
    "lamm_solve",
    "fit_penalized_process",
    "refit_on_support",
    "kkt_residual",
]

ADAPTIVE_EPS = 1e-6


class PenaltyKind(str, enum.Enum):
    LASSO = "lasso"
    ADAPTIVE_LASSO = "adaptive_lasso"
    SCAD = "scad"
    MCP = "mcp"

    @classmethod
    def parse(cls, value) -> "PenaltyKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v == "alasso":
            return cls.ADAPTIVE_LASSO
        try:
            return cls(v)
        except ValueError:
            raise ValueError(f"unknown penalty {value!r}") from None


_DEFAULT_A = {PenaltyKind.SCAD: 3.7, PenaltyKind.MCP: 3.0}


@dataclass(frozen=True)
class Penalty:
    """Penalty family, concavity ``a`` and number of LLA reweighting passes."""

    kind: PenaltyKind = PenaltyKind.LASSO
    a: float | None = None
    lla_steps: int = 1

    def __post_init__(self):
        kind = PenaltyKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        a = self.a if self.a is not None else _DEFAULT_A.get(kind)
        object.__setattr__(self, "a", a)
        if kind is PenaltyKind.SCAD and not a > 2:
            raise ValueError("SCAD needs a > 2")
        if kind is PenaltyKind.MCP and not a >= 1:
            raise ValueError("MCP needs a >= 1")
        if self.lla_steps < 0:
            raise ValueError("lla_steps must be non-negative")

    @property
    def reweighted(self) -> bool:
        return self.kind is not PenaltyKind.LASSO and self.lla_steps > 0


def penalty_weight(kind, u, a=None):
    """LLA weight ``w(u)`` in ``[0, 1]``, non-increasing in ``u >= 0``."""
    kind = PenaltyKind.parse(kind)
    x = np.asarray(u, dtype=float)
    if kind is PenaltyKind.LASSO:
        res = np.ones_like(x)
    elif kind is PenaltyKind.ADAPTIVE_LASSO:
        res = np.minimum(1.0, 1.0 / (x + ADAPTIVE_EPS))
    elif kind is PenaltyKind.SCAD:
        a = 3.7 if a is None else a
        res = np.where(x <= 1.0, 1.0, np.maximum(a - x, 0.0) / (a - 1.0))
    else:
        a = 3.0 if a is None else a
        res = np.maximum(1.0 - x / a, 0.0)
    return float(res) if np.ndim(u) == 0 else res


@dataclass(frozen=True, eq=False)
class LambdaSequence:
    lambda0: float
    lambdas: np.ndarray


def lambda_sequence(lambda0: float, grid: QuantileGrid) -> LambdaSequence:
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    t = grid.taus
    factor = 1.0 + (np.log1p(-t[0]) - np.log1p(-t))
    factor[0] = 1.0
    return LambdaSequence(float(lambda0), lambda0 * factor)


def soft_threshold(z, theta):
    return np.sign(z) * np.maximum(np.abs(z) - theta, 0.0)


@dataclass
class LammConfig:
    """LAMM schedule: ``phi0 = phi0_scale * max_j ||X_j||^2 / n`` unless given."""

    phi0: float | None = None
    phi0_scale: float = 0.01
    growth: float = 2.0
    shrink: float = 1.1
    tol: float = 1e-5
    max_iter: int = 500


@dataclass
class LammResult:
    beta: np.ndarray
    n_iter: int
    objectives: list = field(default_factory=list)
    grad: np.ndarray | None = None


def _phi0(X, cfg):
    if cfg.phi0 is not None:
        return cfg.phi0
    return cfg.phi0_scale * float(np.max(np.einsum("ij,ij->j", X, X))) / X.shape[0]


def _lamm(prob: _Problem, v, lam, weights, beta, cfg: LammConfig, phi0, tau=None) -> LammResult:
    pen = lam * weights
    beta = beta.copy()
    loss, g = prob.loss_grad(beta, v)
    obj = loss + float(pen @ np.abs(beta))
    objs = [obj]
    phi = phi0
    for it in range(1, cfg.max_iter + 1):
        while True:
            cand = soft_threshold(beta - g / phi, pen / phi)
            step = cand - beta
            new_loss, new_g = prob.loss_grad(cand, v)
            bound = loss + float(g @ step) + 0.5 * phi * float(step @ step)
            if new_loss <= bound + 1e-14 * (1.0 + abs(loss)):
                break
            phi *= cfg.growth
            if phi > 1e20:
                raise NonConvergenceError("LAMM majorisation failed", beta=beta, tau=tau, n_iter=it)
        new_obj = new_loss + float(pen @ np.abs(cand))
        beta, loss, g = cand, new_loss, new_g
        objs.append(new_obj)
        if float(np.max(np.abs(step))) <= cfg.tol:
            return LammResult(beta, it, objs, g)
        phi = max(phi0, phi / cfg.shrink)
    raise NonConvergenceError(
        f"LAMM did not converge within {cfg.max_iter} iterations"
        + (f" at tau={tau:g}" if tau is not None else ""),
        beta=beta, grad_norm=None, tau=tau, n_iter=cfg.max_iter)


def _pen_weights(p, w):
    out = np.ones(p) if w is None else np.array(w, dtype=float)
    if out.shape != (p,):
        raise ValueError(f"penalty weights must have length {p}")
    if np.any(out < 0) or np.any(out > 1):
        raise ValueError("penalty weights must lie in [0, 1]")
    out[0] = 0.0
    return out


def lamm_solve(data, grid, kernel, h, k, offset, lambda_k, weights, beta_init,
               cfg=None, return_info=False):
    """Minimise ``L_k(b) + lambda_k sum_j w_j |b_j|`` by LAMM.

    ``weights=None`` means unit weights; the intercept weight is forced to 0.
    """
    cfg = cfg or LammConfig()
    _check_offset(offset, k)
    prob = _Problem(data, kernel, h, grid.tau_L)
    w = _pen_weights(prob.p, weights)
    b0 = np.ascontiguousarray(beta_init, dtype=float)
    res = _lamm(prob, offset.v, float(lambda_k), w, b0, cfg, _phi0(prob.X, cfg),
                tau=float(grid.taus[k]))
    return res if return_info else res.beta


def kkt_residual(grad, beta, lam, weights) -> float:
    """Largest violation of the lasso optimality conditions.

    Non-zero coordinates need ``g_j + lam w_j sign(b_j) = 0``; zero
    coordinates need ``|g_j| <= lam w_j``.
    """
    pen = lam * weights
    nz = beta != 0
    r_nz = np.abs(grad[nz] + pen[nz] * np.sign(beta[nz]))
    r_z = np.maximum(np.abs(grad[~nz]) - pen[~nz], 0.0)
    return float(max(r_nz.max(initial=0.0), r_z.max(initial=0.0)))


def _start_beta(prob):
    # zero slopes, intercept at the base-level empirical quantile of the responses
    b = np.zeros(prob.p)
    b[0] = float(np.quantile(prob.y, prob.tau0))
    return b


def _penalized_path(prob, grid, kind, h, lams, cfg, phi0, starts=None, weight_fn=None):
    # one sequential pass; weight_fn(k) gives the penalty weights at level k
    p = prob.p
    offset = AccumulatedOffset.zeros(p)
    betas = np.empty((len(grid), p))
    beta = _start_beta(prob)
    weights, iters, traces = [], [], []
    for k in range(len(grid)):
        if k > 0:
            offset.add(prob, grid, kind, h, betas[k - 1])
        w = _pen_weights(p, None if weight_fn is None else weight_fn(k))
        start = beta if starts is None else np.ascontiguousarray(starts[k], dtype=float)
        res = _lamm(prob, offset.v, lams[k], w, start, cfg, phi0, float(grid.taus[k]))
        betas[k] = beta = res.beta
        weights.append(w)
        iters.append([res.n_iter])
        traces.append([res.objectives])
    return {"betas": betas, "weights": weights, "iters": iters, "traces": traces}


def _path_gradients(prob, grid, kind, h, betas):
    offset = AccumulatedOffset.zeros(prob.p)
    out = []
    for k in range(len(grid)):
        if k > 0:
            offset.add(prob, grid, kind, h, betas[k - 1])
        out.append(prob.loss_grad(betas[k], offset.v)[1])
    return out


def fit_penalized_process(data, grid, kernel="gaussian", h=None, penalty=None, lambda0=0.1,
                          cfg=None, init_betas=None):
    """Sequential penalised fit over ``grid``.

    Returns a :class:`CoefficientProcess` whose ``info`` holds the union
    support (non-intercept columns with a non-zero coefficient at some grid
    level), per-level supports, penalty levels and LAMM diagnostics.
    ``init_betas`` (shape ``(m + 1, p)``) warm-starts each level, e.g. from
    a neighbouring ``lambda0`` on a path.

    For reweighted penalties the whole lasso path is computed first; pass
    ``t`` then re-solves every level with weights taken from pass ``t - 1``
    at that level, accumulating the offset from its own solutions.
    """
    cfg = cfg or LammConfig()
    penalty = penalty if isinstance(penalty, Penalty) else Penalty(penalty or PenaltyKind.LASSO)
    kind = KernelKind.parse(kernel)
    if h is None:
        from .solver import bandwidth_high_dim

        h = bandwidth_high_dim(data.n, data.p)
    prob = _Problem(data, kind, h, grid.tau_L)
    lams = lambda_sequence(lambda0, grid).lambdas
    phi0 = _phi0(prob.X, cfg)
    pilot = _penalized_path(prob, grid, kind, h, lams, cfg, phi0, init_betas)
    betas, w_last, iters, traces = pilot["betas"], pilot["weights"], pilot["iters"], pilot["traces"]
    if penalty.reweighted:
        for _ in range(penalty.lla_steps):
            prev = betas
            run = _penalized_path(prob, grid, kind, h, lams, cfg, phi0, prev,
                                  weight_fn=lambda k: penalty_weight(penalty.kind,
                                                                     np.abs(prev[k]) / lams[k],
                                                                     penalty.a))
            betas, w_last = run["betas"], run["weights"]
            iters = [a + b for a, b in zip(iters, run["iters"])]
            traces = [a + b for a, b in zip(traces, run["traces"])]
    grads = _path_gradients(prob, grid, kind, h, betas)
    kkt = [kkt_residual(g, b, lam, w) for g, b, lam, w in zip(grads, betas, lams, w_last)]
    nz = betas[:, 1:] != 0
    support = [int(j) + 1 for j in np.flatnonzero(nz.any(axis=0))]
    info = {
        "kernel": kind.value,
        "bandwidth": h,
        "penalty": penalty.kind.value,
        "a": penalty.a,
        "lla_steps": penalty.lla_steps,
        "lambda0": float(lambda0),
        "lambdas": lams,
        "support": support,
        "supports": [[int(j) + 1 for j in np.flatnonzero(row)] for row in nz],
        "iterations": iters,
        "objective_traces": traces,
        "kkt": kkt,
    }
    return CoefficientProcess(grid, betas, info)


def refit_on_support(data, grid, kernel="gaussian", cfg=None, support=(), h=None):
    """Unpenalised sequential fit on the intercept plus ``support`` columns.

    Returns a full-width process with zeros off the support.
    """
    cols = sorted({0, *(int(j) for j in support)})
    if any(j < 0 or j >= data.p for j in cols):
        raise DataError("support index out of range")
    if len(cols) >= data.n:
        raise DataError(f"support of size {len(cols)} is not smaller than n={data.n}")
    cfg = cfg or SolverConfig()
    sub = data.select(cols)
    proc = weighted_fit(sub, grid, kernel, cfg, h=h)
    betas = np.zeros((len(grid), data.p))
    betas[:, cols] = proc.betas
    info = dict(proc.info)
    info["support"] = [c for c in cols if c != 0]
    return CoefficientProcess(grid, betas, info)
