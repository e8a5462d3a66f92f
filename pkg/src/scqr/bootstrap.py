"""Multiplier bootstrap for the sequential smoothed estimator.

Every replicate re-solves the whole sequence of estimating equations with
observation weights ``W_i`` multiplying each contribution, including the
accumulated past-step terms, which follow the replicate's own path.
"""
from __future__ import annotations

import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import CoefficientProcess
from .exceptions import NoEventsError, NonConvergenceError
from .solver import SolverConfig, resolve_bandwidth, weighted_fit

__all__ = [
    "WeightScheme",
    "BootstrapResult",
    "generate_weights",
    "bootstrap_fit",
    "run_bootstrap",
    "confidence_intervals",
    "CI_TYPES",
]

CI_TYPES = ("percentile", "pivotal", "normal")
MIN_REPLICATES = 20
_MAX_REDRAWS = 1000


class WeightScheme(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    EXPONENTIAL = "exponential"
    RADEMACHER = "rademacher"

    @classmethod
    def parse(cls, value) -> "WeightScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown weight scheme {value!r}") from None


def generate_weights(scheme, n: int, rng: np.random.Generator) -> np.ndarray:
    """Non-negative, mean-one random multipliers.

    multinomial: counts of ``n`` draws over ``n`` cells (Efron's bootstrap);
    exponential: i.i.d. Exp(1); rademacher: ``1 + e_i`` with ``e_i = +-1``.
    """
    scheme = WeightScheme.parse(scheme)
    if n < 1:
        raise ValueError("n must be positive")
    if scheme is WeightScheme.MULTINOMIAL:
        return rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
    if scheme is WeightScheme.EXPONENTIAL:
        return rng.exponential(1.0, n)
    return 2.0 * rng.integers(0, 2, n).astype(float)


def bootstrap_fit(data, grid, kernel, cfg, scheme, weights, h=None) -> CoefficientProcess:
    """One bootstrap replicate of the process for the given weights.

    ``scheme`` is informational; the weights themselves define the
    replicate.  Raises :class:`NonConvergenceError` on solver failure.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (data.n,):
        raise ValueError(f"weights must have length {data.n}")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    proc = weighted_fit(data, grid, kernel, cfg, weights=weights, h=h)
    proc.info["scheme"] = WeightScheme.parse(scheme).value
    return proc


@dataclass
class BootstrapResult:
    """Replicate processes, stacked as ``(B, m + 1, p)``.

    Failed replicates are kept as rows of NaN and flagged in ``failed`` so
    that replicate ``b`` always sits at index ``b``.
    """

    replicates: np.ndarray
    seed: int
    scheme: WeightScheme
    failed: np.ndarray
    redraws: int = 0
    info: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return self.replicates.shape[0]

    @property
    def failures(self) -> int:
        return int(self.failed.sum())

    @property
    def successful(self) -> np.ndarray:
        return self.replicates[~self.failed]


def _replicate_rng(seed: int, b: int) -> np.random.Generator:
    # counter-based stream per replicate: independent of scheduling order
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))


def _draw_weights(scheme, delta, rng):
    redraws = 0
    while True:
        w = generate_weights(scheme, delta.size, rng)
        if np.any(w * delta > 0):
            return w, redraws
        redraws += 1
        if redraws > _MAX_REDRAWS:
            raise NoEventsError("could not draw weights that keep any event")


def _one_replicate(args):
    data, grid, kernel, cfg, scheme, h, seed, b = args
    rng = _replicate_rng(seed, b)
    w, redraws = _draw_weights(scheme, data.delta, rng)
    try:
        proc = weighted_fit(data, grid, kernel, cfg, weights=w, h=h)
    except NonConvergenceError:
        return b, None, redraws
    return b, proc.betas, redraws


def run_bootstrap(data, grid, kernel="gaussian", cfg=None, scheme="rademacher", B=1000,
                  seed=0, threads=1, h=None) -> BootstrapResult:
    """Run ``B`` multiplier-bootstrap replicates of the sequential fit.

    Replicate ``b`` draws its weights from a stream derived from
    ``(seed, b)``, so the result is identical for any ``threads``.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    cfg = cfg or SolverConfig()
    scheme = WeightScheme.parse(scheme)
    if h is None:
        h = resolve_bandwidth(cfg.bandwidth, data.n, data.p)
    reps = np.full((B, len(grid), data.p), np.nan)
    failed = np.zeros(B, dtype=bool)
    redraws = 0
    tasks = [(data, grid, kernel, cfg, scheme, h, int(seed), b) for b in range(B)]
    if threads > 1 and B > 1:
        from ._accel import warmup

        warmup()
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_one_replicate, tasks, chunksize=max(1, B // (4 * threads))))
    else:
        results = map(_one_replicate, tasks)
    for b, betas, r in results:
        redraws += r
        if betas is None:
            failed[b] = True
        else:
            reps[b] = betas
    return BootstrapResult(reps, int(seed), scheme, failed, redraws,
                           {"bandwidth": h, "kernel": str(kernel)})


def _type7(x, q):
    return np.quantile(x, q, axis=0, method="linear")


def confidence_intervals(fit: CoefficientProcess, boot: BootstrapResult, tau: float,
                         level: float = 0.95, ci_type: str = "percentile") -> np.ndarray:
    """Per-coefficient ``(lower, upper)`` bootstrap intervals at ``tau``.

    percentile: ``(q_{a/2}, q_{1-a/2})`` of the replicates;
    pivotal: ``(2 b - q_{1-a/2}, 2 b - q_{a/2})``;
    normal: ``b -/+ z_{1-a/2} * sd``.
    Quantiles use linear interpolation (type 7), ``sd`` has ``ddof=1``.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if ci_type not in CI_TYPES:
        raise ValueError(f"ci_type must be one of {CI_TYPES}")
    reps = boot.successful
    if reps.shape[0] < MIN_REPLICATES:
        raise ValueError(f"too few successful replicates ({reps.shape[0]} < {MIN_REPLICATES})")
    k = fit.grid.index(tau)
    vals = reps[:, k, :]
    est = fit.betas[k]
    alpha = 1.0 - level
    if ci_type == "normal":
        half = norm.ppf(1.0 - alpha / 2) * vals.std(axis=0, ddof=1)
        return np.column_stack([est - half, est + half])
    lo, hi = _type7(vals, alpha / 2), _type7(vals, 1.0 - alpha / 2)
    if ci_type == "percentile":
        return np.column_stack([lo, hi])
    return np.column_stack([2 * est - hi, 2 * est - lo])
