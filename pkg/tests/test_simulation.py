import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from scqr.data import CoefficientProcess, make_uniform_grid
from scqr.simulation import SimDesign, Truth, ar_covariates, gen_dataset, metrics, t2_quantile


def test_t2_quantile_examples():
    assert t2_quantile(0.5) == 0.0
    assert t2_quantile(0.75) == pytest.approx(0.81650, abs=1e-5)
    assert t2_quantile(0.9) == pytest.approx(1.88562, abs=1e-5)
    with pytest.raises(ValueError):
        t2_quantile(1.0)


@given(tau=st.floats(1e-6, 1 - 1e-6))
@settings(max_examples=300, deadline=None)
def test_t2_quantile_matches_scipy(tau):
    assert t2_quantile(tau) == pytest.approx(stats.t(2).ppf(tau), rel=1e-9, abs=1e-12)


def test_design_validation_and_aliases():
    assert SimDesign("homo").model == "homoscedastic"
    assert SimDesign("hetero").model == "heteroscedastic"
    for bad in (dict(model="lognormal"), dict(n=9), dict(p=1), dict(sparsity=11, p=10),
                dict(covariate_scheme="iid"), dict(censoring="uniform")):
        with pytest.raises(ValueError):
            SimDesign(**bad)


def test_no_censoring_and_determinism():
    d, _ = gen_dataset(SimDesign("homo", 200, 5, censoring="none", seed=1))
    assert np.all(d.delta == 1)
    a, ta = gen_dataset(SimDesign("hetero", 300, 6, seed=4))
    b, tb = gen_dataset(SimDesign("hetero", 300, 6, seed=4))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.X, b.X) and np.array_equal(a.delta, b.delta)
    assert np.array_equal(ta.gamma, tb.gamma)


@pytest.mark.parametrize("scheme", ["gaussian_ar", "mixed_blocks"])
def test_censoring_rate_band(scheme):
    # the band holds for the p = 100 designs; small dense p gives lighter censoring
    rates = [gen_dataset(SimDesign("homo", 5000, 100, scheme, seed=s))[0].censoring_rate
             for s in range(20)]
    assert all(0.25 <= r <= 0.50 for r in rates)
    small = gen_dataset(SimDesign("homo", 5000, 5, seed=0))[0].censoring_rate
    assert 0.1 < small < 0.25


def test_ar_covariance():
    X = ar_covariates(np.random.default_rng(0), 200000, 4)
    lags = np.abs(np.subtract.outer(np.arange(4), np.arange(4)))
    np.testing.assert_allclose(np.cov(X.T), 0.5 ** lags, atol=0.01)


def test_mixed_blocks():
    d, _ = gen_dataset(SimDesign("homo", 4000, 100, "mixed_blocks", seed=2))
    X = d.X[:, 1:]
    assert X.shape == (4000, 100)
    assert np.all(np.abs(X[:, 45:90]) <= 2)
    assert set(np.unique(X[:, 90:])) == {0.0, 1.0}
    # adjacent uniform columns keep the AR lag-one correlation
    r = np.corrcoef(X[:, 50], X[:, 51])[0, 1]
    assert r == pytest.approx(0.5, abs=0.05)
    with pytest.warns(UserWarning, match="mixed_blocks"):
        d, _ = gen_dataset(SimDesign("homo", 50, 7, "mixed_blocks"))
    assert d.X.shape == (50, 8)


def test_sparse_and_dense_effects():
    _, t = gen_dataset(SimDesign("homo", 50, 20, sparsity=4, seed=3))
    assert np.all((t.gamma[:4] >= 1) & (t.gamma[:4] <= 1.5)) and np.all(t.gamma[4:] == 0)
    assert t.support == [1, 2, 3, 4]
    _, t = gen_dataset(SimDesign("homo", 50, 20, seed=3))
    assert np.all(np.abs(t.gamma) <= 2) and len(t.support) == 20


def test_truth_evaluators():
    t = Truth("homoscedastic", np.array([1.0, -0.5]))
    np.testing.assert_allclose(t.beta(0.75), [0.8164966, 1.0, -0.5], atol=1e-7)
    h = Truth("heteroscedastic", np.array([0.0, 0.3, 1.2]))
    np.testing.assert_allclose(h.beta(0.9), [0.0, 1.8856181, 0.3, 1.2], atol=1e-7)
    assert h.support == [1, 2, 3]
    assert t.betas([0.5, 0.75]).shape == (2, 3)


@pytest.mark.parametrize("model", ["homo", "hetero"])
def test_conditional_quantiles_of_latent_response(model):
    # fix one covariate row and redraw only the error
    _, truth = gen_dataset(SimDesign(model, 20, 3, seed=5))
    x = np.array([1.0, 0.7, -0.4, 1.1])
    if model == "hetero":
        x[1] = abs(x[1])
    eps = np.random.default_rng(0).standard_t(2, 10 ** 6)
    scale = x[1] if model == "hetero" else 1.0
    base = x[1:] @ truth.gamma if model == "homo" else x[2:] @ truth.gamma[1:]
    z = base + scale * eps
    for tau in (0.2, 0.5, 0.8):
        # quantile standard error ~ sqrt(tau(1-tau)/N)/f(q) < 3e-3
        assert np.quantile(z, tau) == pytest.approx(x @ truth.beta(tau), abs=6e-3)


def test_latent_model_from_generator():
    # uncensored draws: the fraction below the true quantile hyperplane is tau
    d, truth = gen_dataset(SimDesign("hetero", 200000, 4, censoring="none", seed=6))
    for tau in (0.25, 0.6):
        frac = np.mean(d.y <= d.X @ truth.beta(tau))
        assert frac == pytest.approx(tau, abs=4e-3)


def test_metrics_examples():
    grid = make_uniform_grid(0.2, 0.4, 0.1)
    truth = Truth("homoscedastic", np.zeros(6))
    betas = truth.betas(grid.taus)
    betas[1, 2] += 0.3
    betas[2, :2] += [0.3, 0.4]
    m = metrics(CoefficientProcess(grid, betas), truth, {1, 2, 3, 4, 5}, {1, 2, 3, 6})
    assert m["tpr"] == pytest.approx(0.6) and m["fdr"] == pytest.approx(0.25)
    assert m["l2_avg"] == pytest.approx((0 + 0.3 + 0.5) / 3)
    assert m["l2_sup"] == pytest.approx(0.5)
    empty = metrics(CoefficientProcess(grid, betas), truth.beta, {1}, set())
    assert empty["fdr"] == 0.0 and empty["tpr"] == 0.0


@given(t1=st.floats(0.01, 0.98), dt=st.floats(1e-4, 0.01))
@settings(max_examples=200, deadline=None)
def test_truth_monotone_in_tau(t1, dt):
    t = Truth("homoscedastic", np.array([0.4]))
    assert t.beta(t1 + dt)[0] > t.beta(t1)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert np.all(np.isfinite(t.beta(t1)))
