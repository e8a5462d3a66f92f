"""Sequential smoothed estimating equations for censored quantile regression.

At the base level ``tau_0`` the estimator solves

    Q_0(b) = (1/n) sum_i {Delta_i Kbar_h(x_i'b - y_i) - tau_0} x_i = 0,

and at ``tau_k`` (k >= 1)

    Q_k(b) = Q_0(b) - v_k,
    v_k    = (1/n) sum_i sum_{j<k} Kbar_h(y_i - x_i'b_j) (H(tau_{j+1}) - H(tau_j)) x_i,

with ``H(u) = -log(1 - u)``.  Each ``Q_k`` is the gradient of the convex
loss ``L_k(b) = L_0(b) - <v_k, b>``, and all share the Hessian
``(1/n) sum_i Delta_i K_h(r_i) x_i x_i'``.  Each grid point is solved by a
damped Newton method with Armijo backtracking on ``L_k``.

Observation weights (used by the multiplier bootstrap) multiply every
per-observation contribution, including the offset terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _accel
from .data import CensoredDataset, CoefficientProcess, QuantileGrid
from .exceptions import NoEventsError, NonConvergenceError
from .kernels import KernelKind

__all__ = [
    "SolverConfig",
    "AccumulatedOffset",
    "StepResult",
    "bandwidth_low_dim",
    "bandwidth_high_dim",
    "resolve_bandwidth",
    "loss0",
    "loss_k",
    "gradient_k",
    "hessian",
    "solve_step",
    "fit_process",
    "weighted_fit",
    "initial_beta",
]

_ARMIJO = 1e-4
_MAX_HALVINGS = 60


def bandwidth_low_dim(n: int, p: int) -> float:
    return max(0.05, ((p + math.log(n)) / n) ** 0.4)


def bandwidth_high_dim(n: int, p: int) -> float:
    return max(0.05, 0.5 * (math.log(p) / n) ** 0.25)


def resolve_bandwidth(rule, n: int, p: int) -> float:
    """Bandwidth from an explicit value or one of ``"low_dim"``/``"high_dim"``."""
    if isinstance(rule, str):
        if rule == "low_dim":
            return bandwidth_low_dim(n, p)
        if rule == "high_dim":
            return bandwidth_high_dim(n, p)
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    h = float(rule)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    return h


@dataclass
class SolverConfig:
    """Newton solver settings.

    ``ridge_floor=None`` means ``1e-6 * trace(H) / p`` at every iteration.
    """

    grad_tol: float = 1e-7
    max_iter: int = 500
    ridge_floor: float | None = None
    bandwidth: float | str = "low_dim"

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def to_dict(self):
        return {"grad_tol": self.grad_tol, "max_iter": self.max_iter,
                "ridge_floor": self.ridge_floor, "bandwidth": self.bandwidth}


class _Problem:
    """Contiguous arrays for the compiled passes, shared by all grid steps."""

    __slots__ = ("X", "y", "delta", "w", "n", "p", "kind", "h", "tau0")

    def __init__(self, data: CensoredDataset, kernel, h, tau0, weights=None):
        self.X = data.X
        self.y = data.y
        self.delta = data.delta
        self.n, self.p = data.X.shape
        if weights is None:
            self.w = np.ones(self.n)
        else:
            w = np.ascontiguousarray(weights, dtype=float)
            if w.shape != (self.n,):
                raise ValueError(f"weights must have length {self.n}")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and non-negative")
            self.w = w
        if not np.any(self.w * self.delta > 0):
            raise NoEventsError()
        self.kind = KernelKind.parse(kernel).code
        self.h = float(h)
        self.tau0 = float(tau0)

    def loss_grad(self, beta, v):
        return _accel.loss_grad(self.X, self.y, self.delta, self.w, beta,
                                self.tau0, self.h, self.kind, v)

    def hessian(self, beta):
        return _accel.hessian(self.X, self.y, self.delta, self.w, beta, self.h, self.kind)

    def cdf_moment(self, beta):
        return _accel.cdf_moment(self.X, self.y, self.w, beta, self.h, self.kind)


@dataclass
class AccumulatedOffset:
    """Running sum ``v`` of the past-step terms in ``Q_k``.

    ``steps`` counts the grid terms absorbed so far; the offset is valid for
    solving ``Q_k`` when ``steps == k``.
    """

    v: np.ndarray
    steps: int = 0

    @classmethod
    def zeros(cls, p: int) -> "AccumulatedOffset":
        return cls(np.zeros(p), 0)

    def add(self, data, grid: QuantileGrid, kernel, h, beta_j, weights=None):
        """Absorb the term of grid step ``self.steps`` evaluated at ``beta_j``."""
        j = self.steps
        if j >= grid.m:
            raise ValueError("offset already covers every grid interval")
        prob = data if isinstance(data, _Problem) else _Problem(data, kernel, h, grid.tau_L, weights)
        self.v = self.v + grid.deltaH[j] * prob.cdf_moment(np.ascontiguousarray(beta_j, dtype=float))
        self.steps = j + 1
        return self

    def copy(self):
        return AccumulatedOffset(self.v.copy(), self.steps)


def _as_beta(beta, p):
    b = np.ascontiguousarray(beta, dtype=float).ravel()
    if b.shape != (p,):
        raise ValueError(f"beta must have length {p}, got {b.shape}")
    return b


def loss0(data, tau0, kernel, h, beta, weights=None) -> float:
    """``(1/n) sum_i {Delta_i l_{tau0,h}(y_i - x_i'b) + tau0 (Delta_i - 1) x_i'b}``."""
    prob = _Problem(data, kernel, h, tau0, weights)
    return prob.loss_grad(_as_beta(beta, prob.p), np.zeros(prob.p))[0]


def loss_k(data, grid, kernel, h, k, offset, beta, weights=None) -> float:
    _check_offset(offset, k)
    prob = _Problem(data, kernel, h, grid.tau_L, weights)
    return prob.loss_grad(_as_beta(beta, prob.p), offset.v)[0]


def gradient_k(data, grid, kernel, h, k, offset, beta, weights=None) -> np.ndarray:
    """Smoothed estimating function ``Q_k(beta)``."""
    _check_offset(offset, k)
    prob = _Problem(data, kernel, h, grid.tau_L, weights)
    return prob.loss_grad(_as_beta(beta, prob.p), offset.v)[1]


def hessian(data, kernel, h, beta, weights=None) -> np.ndarray:
    """Common Hessian of every ``L_k``."""
    prob = _Problem(data, kernel, h, 0.5, weights)
    return prob.hessian(_as_beta(beta, prob.p))


def _check_offset(offset, k):
    if offset.steps != k:
        raise ValueError(f"offset holds {offset.steps} grid terms but step k={k} needs {k}")


@dataclass
class StepResult:
    beta: np.ndarray
    n_iter: int
    grad_norm: float
    losses: list = field(default_factory=list)
    newton_steps: int = 0
    gradient_steps: int = 0


def _newton(prob: _Problem, v, beta, cfg: SolverConfig, tau=None) -> StepResult:
    beta = beta.copy()
    loss, g = prob.loss_grad(beta, v)
    losses = [loss]
    gnorm = float(np.max(np.abs(g)))
    n_newton = n_grad = 0
    p = prob.p
    for it in range(cfg.max_iter):
        if gnorm <= cfg.grad_tol:
            return StepResult(beta, it, gnorm, losses, n_newton, n_grad)
        H = prob.hessian(beta)
        tr = float(np.trace(H))
        if cfg.ridge_floor is not None:
            ridge = cfg.ridge_floor
        else:
            ridge = 1e-6 * tr / p
        ridge = max(ridge, 1e-12 * max(tr / p, 1.0))
        direction = None
        try:
            c = cho_factor(H + ridge * np.eye(p), lower=True, check_finite=False)
            d = -cho_solve(c, g, check_finite=False)
            if np.all(np.isfinite(d)) and float(g @ d) < 0.0:
                direction = d
        except (LinAlgError, ValueError):
            pass
        if direction is None:
            # fall back to steepest descent scaled by the curvature floor
            direction = -g / max(tr / p, ridge)
            n_grad += 1
        else:
            n_newton += 1
        slope = float(g @ direction)
        roundoff = 64 * np.finfo(float).eps * (1.0 + abs(loss))
        accepted = False
        if -slope <= roundoff:
            # Predicted decrease is below the loss's round-off, so the Armijo
            # test would only read noise; judge the full step by the gradient.
            cand = beta + direction
            new_loss, new_g = prob.loss_grad(cand, v)
            accepted = new_loss - loss <= roundoff and np.max(np.abs(new_g)) < gnorm
        t = 1.0
        for _ in range(0 if accepted else _MAX_HALVINGS):
            cand = beta + t * direction
            new_loss, new_g = prob.loss_grad(cand, v)
            if new_loss <= loss + _ARMIJO * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # Loss differences below round-off: keep the full Newton step when
            # it still shrinks the gradient, which is the stopping criterion.
            cand = beta + direction
            new_loss, new_g = prob.loss_grad(cand, v)
            if new_loss - loss <= roundoff and np.max(np.abs(new_g)) < gnorm:
                accepted = True
        if not accepted:
            break
        beta, loss, g = cand, new_loss, new_g
        losses.append(loss)
        gnorm = float(np.max(np.abs(g)))
    if gnorm <= cfg.grad_tol:
        return StepResult(beta, len(losses) - 1, gnorm, losses, n_newton, n_grad)
    where = f" at tau={tau:g}" if tau is not None else ""
    raise NonConvergenceError(
        f"Newton solver did not reach |Q|_inf <= {cfg.grad_tol:g}{where} "
        f"(last |Q|_inf = {gnorm:.3e} after {len(losses) - 1} iterations)",
        beta=beta, grad_norm=gnorm, tau=tau, n_iter=len(losses) - 1)


def initial_beta(data: CensoredDataset, weights=None) -> np.ndarray:
    """Weighted least squares on the uncensored rows."""
    w = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    keep = (data.delta > 0) & (w > 0)
    if not np.any(keep):
        raise NoEventsError()
    sw = np.sqrt(w[keep])
    A = data.X[keep] * sw[:, None]
    b = data.y[keep] * sw
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.ascontiguousarray(sol)


def solve_step(data, grid, kernel, h, k, offset, beta_init, cfg=None, weights=None,
               return_info=False):
    """Solve ``Q_k(beta) = 0`` from ``beta_init``.

    Returns the root, or a :class:`StepResult` with iteration history when
    ``return_info`` is true.  Raises :class:`NonConvergenceError` when the
    gradient tolerance is not met within ``cfg.max_iter`` iterations.
    """
    cfg = cfg or SolverConfig()
    _check_offset(offset, k)
    prob = _Problem(data, kernel, h, grid.tau_L, weights)
    res = _newton(prob, offset.v, _as_beta(beta_init, prob.p), cfg, tau=float(grid.taus[k]))
    return res if return_info else res.beta


def weighted_fit(data, grid, kernel, cfg=None, weights=None, h=None, beta_init=None):
    """Sequential fit over the whole grid with optional observation weights.

    This is the single code path behind :func:`fit_process` and the
    bootstrap replicates, so unit weights reproduce the plain fit exactly.
    """
    cfg = cfg or SolverConfig()
    kind = KernelKind.parse(kernel)
    if h is None:
        h = resolve_bandwidth(cfg.bandwidth, data.n, data.p)
    prob = _Problem(data, kind, h, grid.tau_L, weights)
    beta = initial_beta(data, prob.w) if beta_init is None else _as_beta(beta_init, prob.p)
    offset = AccumulatedOffset.zeros(prob.p)
    betas = np.empty((len(grid), prob.p))
    iters, newton_steps, grad_steps, traces = [], [], [], []
    for k in range(len(grid)):
        if k > 0:
            offset.add(prob, grid, kind, h, betas[k - 1])
        try:
            res = _newton(prob, offset.v, beta, cfg, tau=float(grid.taus[k]))
        except NonConvergenceError as err:
            err.args = (f"{err.args[0]} [grid step k={k}]",)
            raise
        betas[k] = res.beta
        beta = res.beta
        iters.append(res.n_iter)
        newton_steps.append(res.newton_steps)
        grad_steps.append(res.gradient_steps)
        traces.append(res.losses)
    below = _censored_below_base(data, betas[0])
    info = {
        "kernel": kind.value,
        "bandwidth": h,
        "iterations": iters,
        "newton_steps": newton_steps,
        "gradient_steps": grad_steps,
        "loss_traces": traces,
        "offset": offset.v.copy(),
        "offset_steps": offset.steps,
        "censored_below_base": below,
    }
    return CoefficientProcess(grid, betas, info)


def _censored_below_base(data, beta0) -> float:
    """Fraction of observations that are censored below the fitted base plane."""
    below = (data.delta == 0) & (data.y <= data.X @ beta0)
    return float(np.mean(below))


def fit_process(data, grid, kernel="gaussian", cfg=None, h=None):
    """Fit the censored quantile coefficient process on ``grid``."""
    return weighted_fit(data, grid, kernel, cfg, weights=None, h=h)
