import numpy as np
import pytest
from scipy.stats import norm

from scqr.bootstrap import (
    BootstrapResult,
    WeightScheme,
    bootstrap_fit,
    confidence_intervals,
    generate_weights,
    run_bootstrap,
)
from scqr.data import CoefficientProcess, QuantileGrid, make_uniform_grid
from scqr.solver import SolverConfig, fit_process

from conftest import make_data


def test_weight_schemes():
    rng = np.random.default_rng(0)
    w = generate_weights("multinomial", 10, rng)
    assert w.sum() == 10 and np.all(w == np.round(w)) and np.all(w >= 0)
    r = generate_weights("rademacher", 100000, rng)
    assert set(np.unique(r)) == {0.0, 2.0}
    assert abs(r.mean() - 1) < 1e-2
    e = generate_weights(WeightScheme.EXPONENTIAL, 100000, np.random.default_rng(1))
    assert abs(e.mean() - 1) < 1e-2 and e.min() > 0
    with pytest.raises(ValueError):
        generate_weights("gamma", 5, rng)


def test_unit_weights_bit_identical_to_fit():
    d = make_data(1, n=80, p=3)
    grid = make_uniform_grid(0.1, 0.5, 0.05)
    a = fit_process(d, grid)
    b = bootstrap_fit(d, grid, "gaussian", SolverConfig(), "rademacher", np.ones(d.n))
    assert np.array_equal(a.betas, b.betas)


def test_zero_weight_equals_deletion():
    d = make_data(2, n=90, p=3)
    grid = make_uniform_grid(0.1, 0.5, 0.1)
    w = generate_weights("rademacher", d.n, np.random.default_rng(4))
    cfg = SolverConfig(grad_tol=1e-12)
    full = bootstrap_fit(d, grid, "gaussian", cfg, "rademacher", w, h=0.4)
    keep = w > 0
    sub = bootstrap_fit(d.subset(np.flatnonzero(keep)), grid, "gaussian", cfg, "rademacher",
                        w[keep], h=0.4)
    np.testing.assert_allclose(full.betas, sub.betas, atol=1e-8)


def test_replicates_follow_their_own_path():
    # the offset uses replicate estimates: changing an early step changes later ones
    d = make_data(3, n=100, p=2)
    grid = make_uniform_grid(0.1, 0.4, 0.1)
    w = generate_weights("exponential", d.n, np.random.default_rng(0))
    rep = bootstrap_fit(d, grid, "gaussian", None, "exponential", w)
    from scqr.solver import AccumulatedOffset, gradient_k
    h = rep.info["bandwidth"]
    off = AccumulatedOffset.zeros(2)
    for k in range(len(grid)):
        if k:
            off.add(d, grid, "gaussian", h, rep.betas[k - 1], weights=w)
        assert np.max(np.abs(gradient_k(d, grid, "gaussian", h, k, off, rep.betas[k], weights=w))) <= 1e-7


def test_bootstrap_deterministic_and_schedule_free():
    d = make_data(4, n=60, p=2)
    grid = make_uniform_grid(0.1, 0.5, 0.1)
    a = run_bootstrap(d, grid, B=12, seed=7)
    b = run_bootstrap(d, grid, B=12, seed=7, threads=3)
    assert np.array_equal(a.replicates, b.replicates)
    c = run_bootstrap(d, grid, B=6, seed=7)
    assert np.array_equal(a.replicates[:6], c.replicates)
    assert not np.array_equal(a.replicates, run_bootstrap(d, grid, B=12, seed=8).replicates)


def test_redraw_when_no_events():
    # one event among many censored rows: rademacher often zeroes it
    d = make_data(5, n=6, p=1, censor=0)
    delta = np.zeros(6)
    delta[0] = 1
    from scqr.data import CensoredDataset
    d = CensoredDataset(d.y, delta, d.X)
    res = run_bootstrap(d, QuantileGrid([0.1]), B=20, seed=0, h=0.5)
    assert res.redraws > 0
    assert res.failures == 0


def _fake(reps, est):
    grid = QuantileGrid([0.5])
    reps = np.asarray(reps, dtype=float).reshape(-1, 1, 1)
    boot = BootstrapResult(reps, 0, WeightScheme.RADEMACHER, np.zeros(len(reps), dtype=bool))
    return CoefficientProcess(grid, np.array([[est]])), boot


def test_ci_formulas():
    fit, boot = _fake(np.arange(1, 101), 50.5)
    lo, hi = confidence_intervals(fit, boot, 0.5, 0.95, "percentile")[0]
    assert (lo, hi) == pytest.approx((3.475, 97.525))
    plo, phi = confidence_intervals(fit, boot, 0.5, 0.95, "pivotal")[0]
    assert (plo, phi) == pytest.approx((2 * 50.5 - 97.525, 2 * 50.5 - 3.475))
    # normal CI with replicate sd = 1 around 0
    z = norm.ppf(0.975)
    fit, boot = _fake(np.r_[np.full(50, -1.0), np.full(50, 1.0)] * np.sqrt(99 / 100), 0.0)
    lo, hi = confidence_intervals(fit, boot, 0.5, 0.95, "normal")[0]
    assert (lo, hi) == pytest.approx((-z, z))
    assert z == pytest.approx(1.95996, abs=1e-5)


def test_degenerate_replicates_and_reflection():
    fit, boot = _fake(np.full(30, 2.0), 2.0)
    for ci in ("percentile", "pivotal", "normal"):
        np.testing.assert_array_equal(confidence_intervals(fit, boot, 0.5, 0.9, ci), [[2.0, 2.0]])
    rng = np.random.default_rng(0)
    fit, boot = _fake(rng.normal(size=200), 0.3)
    per = confidence_intervals(fit, boot, 0.5, 0.9, "percentile")
    piv = confidence_intervals(fit, boot, 0.5, 0.9, "pivotal")
    np.testing.assert_allclose(piv[:, ::-1], 2 * 0.3 - per, atol=1e-15)


def test_failed_replicates_excluded():
    fit, boot = _fake(np.r_[np.arange(25.0), np.full(5, np.nan)], 12.0)
    boot.failed[25:] = True
    assert boot.failures == 5
    iv = confidence_intervals(fit, boot, 0.5, 0.95, "percentile")
    assert np.all(np.isfinite(iv))
    fit, boot = _fake(np.arange(19.0), 9.0)
    with pytest.raises(ValueError, match="too few"):
        confidence_intervals(fit, boot, 0.5, 0.95, "normal")
    with pytest.raises(ValueError):
        confidence_intervals(fit, boot, 0.5, 1.0, "normal")


def test_non_convergence_marks_failure():
    d = make_data(6, n=60, p=2)
    res = run_bootstrap(d, make_uniform_grid(0.1, 0.3, 0.1), cfg=SolverConfig(max_iter=1, grad_tol=1e-15),
                        B=3, seed=0)
    assert res.failures == 3 and np.all(np.isnan(res.replicates))
