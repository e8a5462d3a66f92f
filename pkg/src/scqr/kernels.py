"""Smoothing kernels and the convolution-smoothed check loss.

Every kernel K is symmetric, non-negative and integrates to one.  Three
closed forms are carried per kernel:

* ``K(u)``                  -- :func:`kernel_density`
* ``Kbar(u) = int_{-inf}^u K`` -- :func:`kernel_cdf`
* ``G(c) = int_{-inf}^c Kbar`` -- :func:`kernel_integrated_cdf`

``G`` is what makes the smoothed check loss cheap: with ``Z ~ K``,

    l_{tau,h}(u) = E rho_tau(u + h Z) = tau * u + h * G(-u / h),

whose derivative is ``tau - Kbar(-u / h)``.
"""
from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import ndtr

__all__ = [
    "KernelKind",
    "DEFAULT_KERNEL",
    "kernel_density",
    "kernel_cdf",
    "kernel_integrated_cdf",
    "smoothed_check_loss",
    "smoothed_check_loss_derivative",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    LOGISTIC = "logistic"
    EPANECHNIKOV = "epanechnikov"
    TRIANGULAR = "triangular"

    @property
    def code(self) -> int:
        # integer tag consumed by the compiled kernels in ``_accel``
        return _CODES[self]

    @classmethod
    def parse(cls, value) -> "KernelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {value!r}; choose one of {choices}") from None

    @property
    def compact(self) -> bool:
        return self in (KernelKind.UNIFORM, KernelKind.EPANECHNIKOV, KernelKind.TRIANGULAR)


_CODES = {
    KernelKind.GAUSSIAN: 0,
    KernelKind.LOGISTIC: 1,
    KernelKind.UNIFORM: 2,
    KernelKind.EPANECHNIKOV: 3,
    KernelKind.TRIANGULAR: 4,
}

DEFAULT_KERNEL = KernelKind.GAUSSIAN


def _out(u, res):
    return float(res) if np.ndim(u) == 0 else res


def kernel_density(kind, u):
    """Kernel density ``K(u)``; accepts scalars or arrays."""
    kind = KernelKind.parse(kind)
    x = np.asarray(u, dtype=float)
    a = np.abs(x)
    if kind is KernelKind.GAUSSIAN:
        res = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    elif kind is KernelKind.LOGISTIC:
        e = np.exp(-a)
        res = e / (1.0 + e) ** 2
    elif kind is KernelKind.UNIFORM:
        res = np.where(a <= 1.0, 0.5, 0.0)
    elif kind is KernelKind.EPANECHNIKOV:
        res = np.where(a <= 1.0, 0.75 * (1.0 - x * x), 0.0)
    else:
        res = np.where(a <= 1.0, 1.0 - a, 0.0)
    return _out(u, res)


def kernel_cdf(kind, u):
    """Integrated kernel ``Kbar(u)``.

    Compact kernels are clamped to exactly 0 and 1 outside ``[-1, 1]``.
    """
    kind = KernelKind.parse(kind)
    x = np.asarray(u, dtype=float)
    if kind is KernelKind.GAUSSIAN:
        res = ndtr(x)
    elif kind is KernelKind.LOGISTIC:
        # symmetric form keeps full relative precision in both tails
        e = np.exp(-np.abs(x))
        lo = e / (1.0 + e)
        res = np.where(x >= 0, 1.0 - lo, lo)
    else:
        c = np.clip(x, -1.0, 1.0)
        if kind is KernelKind.UNIFORM:
            mid = 0.5 * (c + 1.0)
        elif kind is KernelKind.EPANECHNIKOV:
            mid = 0.5 + 0.75 * c - 0.25 * c ** 3
        else:
            mid = np.where(c <= 0.0, 0.5 * (1.0 + c) ** 2, 1.0 - 0.5 * (1.0 - c) ** 2)
        res = np.where(x <= -1.0, 0.0, np.where(x >= 1.0, 1.0, mid))
    return _out(u, res)


def kernel_integrated_cdf(kind, c):
    """``G(c) = int_{-inf}^c Kbar(t) dt = E (c - Z)_+`` for ``Z ~ K``."""
    kind = KernelKind.parse(kind)
    x = np.asarray(c, dtype=float)
    if kind is KernelKind.GAUSSIAN:
        res = x * ndtr(x) + _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    elif kind is KernelKind.LOGISTIC:
        res = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    else:
        t = np.clip(x, -1.0, 1.0)
        if kind is KernelKind.UNIFORM:
            mid = 0.25 * (t + 1.0) ** 2
        elif kind is KernelKind.EPANECHNIKOV:
            mid = 0.1875 + 0.5 * t + 0.375 * t ** 2 - 0.0625 * t ** 4
        else:
            mid = np.where(t <= 0.0, (1.0 + t) ** 3 / 6.0, t + (1.0 - t) ** 3 / 6.0)
        res = np.where(x <= -1.0, 0.0, np.where(x >= 1.0, x, mid))
    return _out(c, res)


def smoothed_check_loss(kind, tau, h, u):
    """Convolution ``(rho_tau * K_h)(u)`` of the check loss with ``K_h``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    x = np.asarray(u, dtype=float)
    res = tau * x + h * kernel_integrated_cdf(kind, -x / h)
    return _out(u, res)


def smoothed_check_loss_derivative(kind, tau, h, u):
    x = np.asarray(u, dtype=float)
    return _out(u, tau - kernel_cdf(kind, -x / h))
