import os
import subprocess
import sys

import numpy as np
import pytest

from scqr import _accel
from scqr.data import make_uniform_grid
from scqr.kernels import KernelKind
from scqr.solver import fit_process

from conftest import make_data

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("kernel", list(KernelKind))
def test_passes_agree(kernel):
    rng = np.random.default_rng(kernel.code)
    n, p = 300, 6
    X = np.ascontiguousarray(np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]))
    y = rng.normal(size=n) * 2
    delta = rng.integers(0, 2, n).astype(float)
    w = rng.exponential(size=n)
    b = rng.normal(size=p) * 0.3
    v = rng.normal(size=p) * 0.01
    out = {}
    for name in ("numba", "numpy"):
        with _accel.use_backend(name):
            out[name] = (_accel.loss_grad(X, y, delta, w, b, 0.3, 0.4, kernel.code, v),
                         _accel.hessian(X, y, delta, w, b, 0.4, kernel.code),
                         _accel.cdf_moment(X, y, w, b, 0.4, kernel.code))
    (l1, g1), H1, c1 = out["numba"]
    (l2, g2), H2, c2 = out["numpy"]
    assert l1 == pytest.approx(l2, rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(g1, g2, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(H1, H2, rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(c1, c2, rtol=1e-11, atol=1e-14)


def test_full_fit_agrees():
    d = make_data(3, n=400, p=5)
    grid = make_uniform_grid(0.1, 0.7, 0.05)
    with _accel.use_backend("numba"):
        a = fit_process(d, grid, "logistic")
    with _accel.use_backend("numpy"):
        b = fit_process(d, grid, "logistic")
    np.testing.assert_allclose(a.betas, b.betas, atol=1e-9)


def test_use_backend_restores_and_validates():
    before = _accel.get_backend()
    with _accel.use_backend("numpy"):
        assert _accel.get_backend() == "numpy"
    assert _accel.get_backend() == before
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")


@pytest.mark.parametrize("value,expect", [("numpy", "numpy"), ("NUMBA", "numba")])
def test_environment_selects_backend(value, expect):
    env = {**os.environ, "SCQR_BACKEND": value}
    r = subprocess.run([sys.executable, "-c", "from scqr._accel import get_backend; print(get_backend())"],
                       env=env, capture_output=True, text=True)
    assert r.stdout.strip() == expect


def test_bad_environment_value_fails_loudly():
    env = {**os.environ, "SCQR_BACKEND": "fortran"}
    r = subprocess.run([sys.executable, "-c", "import scqr"], env=env, capture_output=True, text=True)
    assert r.returncode != 0 and "SCQR_BACKEND" in r.stderr
