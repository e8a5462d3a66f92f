"""Synthetic censored data from global linear quantile models, and fit metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import CensoredDataset, CoefficientProcess

__all__ = [
    "SimDesign",
    "Truth",
    "t2_quantile",
    "ar_covariates",
    "gen_dataset",
    "metrics",
    "CENSOR_MEANS",
    "CENSOR_SDS",
]

# equal-probability Gaussian mixture N(0, 16) / N(5, 1) / N(10, 0.25)
CENSOR_MEANS = np.array([0.0, 5.0, 10.0])
CENSOR_SDS = np.array([4.0, 1.0, 0.5])
AR_RHO = 0.5
BERNOULLI_P = 0.5


def t2_quantile(tau):
    """Quantile function of Student's t with 2 degrees of freedom."""
    t = np.asarray(tau, dtype=float)
    if np.any((t <= 0) | (t >= 1)):
        raise ValueError("tau must lie in (0, 1)")
    a = 2.0 * t - 1.0
    res = a * np.sqrt(2.0 / (1.0 - a * a))
    return float(res) if np.ndim(tau) == 0 else res


@dataclass(frozen=True)
class SimDesign:
    model: str = "homoscedastic"
    n: int = 500
    p: int = 10
    covariate_scheme: str = "gaussian_ar"
    sparsity: int = 0
    censoring: str = "mixture"
    seed: int = 0

    def __post_init__(self):
        aliases = {"homo": "homoscedastic", "hetero": "heteroscedastic"}
        object.__setattr__(self, "model", aliases.get(self.model, self.model))
        if self.model not in ("homoscedastic", "heteroscedastic"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.covariate_scheme not in ("gaussian_ar", "mixed_blocks"):
            raise ValueError(f"unknown covariate scheme {self.covariate_scheme!r}")
        if self.censoring not in ("mixture", "none"):
            raise ValueError(f"unknown censoring {self.censoring!r}")
        if self.n < 10 or self.p < 2 or not 0 <= self.sparsity <= self.p:
            raise ValueError("need n >= 10, p >= 2 and 0 <= sparsity <= p")


@dataclass(frozen=True, eq=False)
class Truth:
    """Exact coefficient function of a simulated design.

    ``gamma`` holds the covariate effects in design order; column indices in
    ``support`` refer to the design matrix (intercept is column 0).
    """

    model: str
    gamma: np.ndarray

    @property
    def p(self) -> int:
        return self.gamma.size + 1

    def beta(self, tau) -> np.ndarray:
        q = t2_quantile(tau)
        if self.model == "homoscedastic":
            return np.concatenate([[q], self.gamma])
        return np.concatenate([[0.0, q], self.gamma[1:]])

    def betas(self, taus) -> np.ndarray:
        return np.vstack([self.beta(t) for t in taus])

    @property
    def support(self) -> list:
        nz = self.gamma != 0
        if self.model == "heteroscedastic":
            nz = nz.copy()
            nz[0] = True  # |x_1| carries the t2 quantile effect
        return [int(j) + 1 for j in np.flatnonzero(nz)]

    def to_dict(self):
        return {"model": self.model, "gamma": [float(g) for g in self.gamma],
                "support": self.support}


def ar_covariates(rng, n, p, rho=AR_RHO) -> np.ndarray:
    """Rows from ``N(0, Sigma)`` with ``Sigma_jk = rho^|j-k|`` (stationary AR(1))."""
    Z = rng.standard_normal((n, p))
    out = np.empty_like(Z)
    out[:, 0] = Z[:, 0]
    s = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        out[:, j] = rho * out[:, j - 1] + s * Z[:, j]
    return out


def _copula_uniform(rng, n, p, rho=AR_RHO):
    # Pearson correlation r of uniforms from a Gaussian copula with
    # correlation c is (6/pi) asin(c/2); invert to hit the AR target.
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    target = rho ** lags
    latent = 2.0 * np.sin(np.pi * target / 6.0)
    try:
        L = np.linalg.cholesky(latent)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(target)
    G = rng.standard_normal((n, p)) @ L.T
    return 4.0 * norm.cdf(G) - 2.0


def _covariates(rng, design):
    n, p = design.n, design.p
    if design.covariate_scheme == "mixed_blocks":
        if p == 100:
            return np.column_stack([
                ar_covariates(rng, n, 45),
                _copula_uniform(rng, n, 45),
                rng.binomial(1, BERNOULLI_P, (n, 10)).astype(float),
            ])
        warnings.warn(f"mixed_blocks needs p=100 (got p={p}); using gaussian_ar", stacklevel=3)
    return ar_covariates(rng, n, p)


def gen_dataset(design: SimDesign):
    """Draw ``(dataset, truth)`` for a design; fully determined by ``design.seed``."""
    rng = np.random.default_rng(design.seed)
    n, p, s = design.n, design.p, design.sparsity
    Xt = _covariates(rng, design)
    if s == 0:
        gamma = rng.uniform(-2.0, 2.0, p)
    else:
        gamma = np.zeros(p)
        gamma[:s] = rng.uniform(1.0, 1.5, s)
    eps = rng.standard_t(2, n)
    if design.model == "homoscedastic":
        z = Xt @ gamma + eps
        X = np.column_stack([np.ones(n), Xt])
    else:
        gamma[0] = 0.0
        a1 = np.abs(Xt[:, 0])
        z = Xt @ gamma + a1 * eps
        X = np.column_stack([np.ones(n), a1, Xt[:, 1:]])
    if design.censoring == "mixture":
        comp = rng.integers(0, 3, n)
        C = CENSOR_MEANS[comp] + CENSOR_SDS[comp] * rng.standard_normal(n)
        y = np.minimum(z, C)
        delta = (z <= C).astype(float)
    else:
        y, delta = z, np.ones(n)
    return CensoredDataset(y, delta, X), Truth(design.model, gamma)


def metrics(fit: CoefficientProcess, truth, S=None, S_hat=None) -> dict:
    """Selection and estimation accuracy of a fitted process.

    ``truth`` is a :class:`Truth` or any callable ``tau -> beta``.
    """
    betas_true = np.vstack([truth.beta(t) if hasattr(truth, "beta") else truth(t)
                            for t in fit.grid.taus])
    err = np.linalg.norm(fit.betas - betas_true, axis=1)
    out = {"l2_avg": float(err.mean()), "l2_sup": float(err.max()),
           "l2_by_tau": [float(e) for e in err]}
    if S is not None and S_hat is not None:
        S, S_hat = set(S), set(S_hat)
        out["tpr"] = len(S & S_hat) / len(S) if S else 1.0
        out["fdr"] = len(S_hat - S) / len(S_hat) if S_hat else 0.0
        out["size"] = len(S_hat)
    return out
