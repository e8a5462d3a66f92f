"""Hot per-observation passes of the smoothed estimating equations.

Two interchangeable backends compute the same quantities:

* ``numba``: fused, fixed-order loops compiled with ``@njit``.  Reductions
  run in observation order, so results do not depend on BLAS threading.
* ``numpy``: vectorised reference path built on :mod:`scqr.kernels`.

The backend is chosen at import time from the ``SCQR_BACKEND`` environment
variable (``numba`` by default, ``numpy`` to disable compilation) and falls
back to numpy when numba cannot be imported.  :func:`use_backend` switches
it temporarily.

All passes take the weighted problem arrays::

    X      (n, p) C-contiguous design
    y      (n,)   observed outcome
    delta  (n,)   event indicator as float
    w      (n,)   observation weights (ones for the plain fit)

and average over ``n`` (not over the weight total).
"""
from __future__ import annotations

import contextlib
import math
import os

import numpy as np

from .kernels import KernelKind, kernel_cdf, kernel_density, kernel_integrated_cdf

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_KINDS = {k.code: k for k in KernelKind}


def _initial_backend():
    want = os.environ.get("SCQR_BACKEND", "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"SCQR_BACKEND must be 'numba' or 'numpy', got {want!r}")
    if want == "numba" and not HAVE_NUMBA:
        return "numpy"
    return want


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    old = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


# ---------------------------------------------------------------------------
# numpy reference path

def _np_loss_grad(X, y, delta, w, beta, tau0, h, kind, v):
    n = X.shape[0]
    k = _KINDS[kind]
    xb = X @ beta
    r = y - xb
    ev = delta > 0
    # Delta*l(r) + tau0*(Delta-1)*x'b, with l(r) = tau0*r + h*G(-r/h)
    li = np.where(ev, tau0 * r + h * kernel_integrated_cdf(k, -r / h), -tau0 * xb)
    coef = w * (delta * kernel_cdf(k, -r / h) - tau0)
    loss = float(np.dot(w, li)) / n - float(np.dot(v, beta))
    grad = X.T @ coef / n - v
    return loss, grad


def _np_hessian(X, y, delta, w, beta, h, kind):
    n = X.shape[0]
    r = y - X @ beta
    c = w * delta * kernel_density(_KINDS[kind], r / h) / h
    return (X * c[:, None]).T @ X / n


def _np_cdf_moment(X, y, w, beta, h, kind):
    n = X.shape[0]
    r = y - X @ beta
    return X.T @ (w * kernel_cdf(_KINDS[kind], r / h)) / n


# ---------------------------------------------------------------------------
# numba path

if HAVE_NUMBA:
    _SQRT1_2 = 1.0 / math.sqrt(2.0)
    _INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

    @njit(cache=True, inline="always")
    def _pdf(kind, u):
        a = abs(u)
        if kind == 0:
            return _INV_SQRT_2PI * math.exp(-0.5 * u * u)
        if kind == 1:
            e = math.exp(-a)
            return e / ((1.0 + e) * (1.0 + e))
        if a > 1.0:
            return 0.0
        if kind == 2:
            return 0.5
        if kind == 3:
            return 0.75 * (1.0 - u * u)
        return 1.0 - a

    @njit(cache=True, inline="always")
    def _cdf(kind, u):
        if kind == 0:
            return 0.5 * math.erfc(-u * _SQRT1_2)
        if kind == 1:
            e = math.exp(-abs(u))
            lo = e / (1.0 + e)
            return 1.0 - lo if u >= 0.0 else lo
        if u <= -1.0:
            return 0.0
        if u >= 1.0:
            return 1.0
        if kind == 2:
            return 0.5 * (u + 1.0)
        if kind == 3:
            return 0.5 + 0.75 * u - 0.25 * u * u * u
        if u <= 0.0:
            return 0.5 * (1.0 + u) * (1.0 + u)
        return 1.0 - 0.5 * (1.0 - u) * (1.0 - u)

    @njit(cache=True, inline="always")
    def _icdf(kind, c):
        if kind == 0:
            return c * 0.5 * math.erfc(-c * _SQRT1_2) + _INV_SQRT_2PI * math.exp(-0.5 * c * c)
        if kind == 1:
            return max(c, 0.0) + math.log1p(math.exp(-abs(c)))
        if c <= -1.0:
            return 0.0
        if c >= 1.0:
            return c
        if kind == 2:
            return 0.25 * (c + 1.0) * (c + 1.0)
        if kind == 3:
            c2 = c * c
            return 0.1875 + 0.5 * c + 0.375 * c2 - 0.0625 * c2 * c2
        if c <= 0.0:
            return (1.0 + c) ** 3 / 6.0
        return c + (1.0 - c) ** 3 / 6.0

    @njit(cache=True)
    def _linear_predictor(X, beta):
        n, p = X.shape
        nz = np.flatnonzero(beta)
        xb = np.zeros(n)
        if nz.size * 4 < p:
            # sparse coefficient vectors (penalised fits) skip zero columns
            for i in range(n):
                s = 0.0
                for t in range(nz.size):
                    j = nz[t]
                    s += X[i, j] * beta[j]
                xb[i] = s
        else:
            for i in range(n):
                s = 0.0
                for j in range(p):
                    s += X[i, j] * beta[j]
                xb[i] = s
        return xb

    @njit(cache=True)
    def _nb_loss_grad(X, y, delta, w, beta, tau0, h, kind, v):
        n, p = X.shape
        xb = _linear_predictor(X, beta)
        loss = 0.0
        grad = np.zeros(p)
        for i in range(n):
            wi = w[i]
            if wi == 0.0:
                continue
            r = y[i] - xb[i]
            if delta[i] > 0.0:
                loss += wi * (tau0 * r + h * _icdf(kind, -r / h))
                c = wi * (_cdf(kind, -r / h) - tau0)
            else:
                loss -= wi * tau0 * xb[i]
                c = -wi * tau0
            for j in range(p):
                grad[j] += c * X[i, j]
        lin = 0.0
        for j in range(p):
            lin += v[j] * beta[j]
            grad[j] = grad[j] / n - v[j]
        return loss / n - lin, grad

    @njit(cache=True)
    def _nb_hessian(X, y, delta, w, beta, h, kind):
        n, p = X.shape
        xb = _linear_predictor(X, beta)
        H = np.zeros((p, p))
        for i in range(n):
            if delta[i] <= 0.0 or w[i] == 0.0:
                continue
            c = w[i] * _pdf(kind, (y[i] - xb[i]) / h) / h
            if c == 0.0:
                continue
            for j in range(p):
                cx = c * X[i, j]
                for l in range(j + 1):
                    H[j, l] += cx * X[i, l]
        for j in range(p):
            for l in range(j + 1):
                H[j, l] /= n
                H[l, j] = H[j, l]
        return H

    @njit(cache=True)
    def _nb_cdf_moment(X, y, w, beta, h, kind):
        n, p = X.shape
        xb = _linear_predictor(X, beta)
        out = np.zeros(p)
        for i in range(n):
            if w[i] == 0.0:
                continue
            c = w[i] * _cdf(kind, (y[i] - xb[i]) / h)
            if c == 0.0:
                continue
            for j in range(p):
                out[j] += c * X[i, j]
        for j in range(p):
            out[j] /= n
        return out


# ---------------------------------------------------------------------------
# public dispatch

def loss_grad(X, y, delta, w, beta, tau0, h, kind, v):
    """Smoothed loss ``L_k(beta)`` and its gradient ``Q_k(beta)``.

    ``v`` is the accumulated offset vector; ``kind`` the integer kernel code.
    """
    if _backend == "numba":
        loss, grad = _nb_loss_grad(X, y, delta, w, beta, float(tau0), float(h), int(kind), v)
        return float(loss), grad
    return _np_loss_grad(X, y, delta, w, beta, tau0, h, kind, v)


def hessian(X, y, delta, w, beta, h, kind):
    """``(1/n) sum_i w_i Delta_i K_h(r_i) x_i x_i^T``."""
    if _backend == "numba":
        return _nb_hessian(X, y, delta, w, beta, float(h), int(kind))
    return _np_hessian(X, y, delta, w, beta, h, kind)


def cdf_moment(X, y, w, beta, h, kind):
    """``(1/n) sum_i w_i Kbar_h(y_i - x_i^T beta) x_i`` (one offset term)."""
    if _backend == "numba":
        return _nb_cdf_moment(X, y, w, beta, float(h), int(kind))
    return _np_cdf_moment(X, y, w, beta, h, kind)


def warmup() -> None:
    """Compile every numba specialisation once (no-op for numpy)."""
    if _backend != "numba":
        return
    X = np.ones((2, 2))
    y = np.zeros(2)
    d = np.ones(2)
    b = np.zeros(2)
    for kind in range(5):
        loss_grad(X, y, d, d, b, 0.5, 1.0, kind, b)
        hessian(X, y, d, d, b, 1.0, kind)
        cdf_moment(X, y, d, b, 1.0, kind)
