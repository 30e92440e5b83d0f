"""Closed-form kernels: heat kernel, backward Gaussian weight, the nonlocal
history kernel of the fractional caloric operator, and the half-space
extension (Poisson) kernel.

Every kernel is assembled as a log first and exponentiated once; the
Gaussian weights on a grid routinely span several hundred decades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import DomainError

LOG_4PI = math.log(4.0 * math.pi)


@dataclass(frozen=True)
class KernelParams:
    m: int = 1
    s: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise DomainError(f"s must lie in (0, 1), got {self.s}")
        if self.m < 1:
            raise DomainError("m must be >= 1")


def _sq(z):
    z = np.asarray(z, dtype=float)
    return np.sum(z * z, axis=-1)


def log_heat_kernel(z, t):
    """log of (4 pi t)^(-d/2) exp(-|z|^2 / 4t), d = z.shape[-1]; -inf for t <= 0."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    out = -0.5 * d * (LOG_4PI + np.log(tt)) - _sq(z) / (4.0 * tt)
    return np.where(t > 0, out, -np.inf)


def heat_kernel(z, t):
    """Heat kernel on R^d (d = len of the last axis of z); zero for t <= 0."""
    return np.exp(log_heat_kernel(z, t))


def heat_kernel_dlast(z, t):
    """Derivative of the heat kernel along the last coordinate."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    return -z[..., -1] / (2.0 * tt) * heat_kernel(z, t)


def log_backward_kernel(X, t, X0, t0, s):
    X = np.asarray(X, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    m = X0.shape[-1] - 1
    tau = t0 - np.asarray(t, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("backward kernel needs t < t0")
    return (-math.lgamma(s) - 0.5 * m * LOG_4PI
            - (0.5 * m + 1.0 - s) * np.log(tau) - _sq(X - X0) / (4.0 * tau))


def backward_kernel(X, t, X0, t0, s):
    """Backward weight G^s_{X0,t0}(X, t) for t < t0 (X0 on the boundary)."""
    return np.exp(log_backward_kernel(X, t, X0, t0, s))


def backward_kernel_direct(X, t, X0, t0, s):
    """Same weight evaluated straight from the formula (no logs); for cross-checks."""
    X = np.asarray(X, dtype=float)
    X0 = np.asarray(X0, dtype=float)
    m = X0.shape[-1] - 1
    tau = t0 - np.asarray(t, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("backward kernel needs t < t0")
    pref = 1.0 / (math.gamma(s) * (4.0 * math.pi) ** (0.5 * m) * tau ** (0.5 * m + 1.0 - s))
    return pref * np.exp(-_sq(X - X0) / (4.0 * tau))


def abs_gamma_neg(s: float) -> float:
    return abs(math.gamma(-s))


def log_nonlocal_kernel(z, tau, params: KernelParams):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("nonlocal kernel needs tau > 0")
    m, s = params.m, params.s
    return (-0.5 * m * LOG_4PI - math.log(abs_gamma_neg(s))
            - _sq(z) / (4.0 * tau) - (0.5 * m + 1.0 + s) * np.log(tau))


def nonlocal_kernel(z, tau, params: KernelParams):
    """History kernel K_s(z, tau) of the fractional caloric operator (tau > 0)."""
    return np.exp(log_nonlocal_kernel(z, tau, params))


def nonlocal_kernel_direct(z, tau, params: KernelParams):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("nonlocal kernel needs tau > 0")
    m, s = params.m, params.s
    pref = 1.0 / ((4.0 * math.pi) ** (0.5 * m) * abs_gamma_neg(s))
    return pref * np.exp(-_sq(z) / (4.0 * tau)) / tau ** (0.5 * m + 1.0 + s)


def nonlocal_kernel_mass(tau, s: float):
    """Spatial integral of K_s(., tau): tau^(-1-s) / |Gamma(-s)|."""
    tau = np.asarray(tau, dtype=float)
    return tau ** (-1.0 - s) / abs_gamma_neg(s)


@lru_cache(maxsize=None)
def poisson_normalization(m: int, s: float) -> float:
    """B(m, s) with int p_s(x, y) dx = 1, from a radial quadrature."""
    expo = 0.5 * (m + 2.0 * s)

    def radial(r):
        return r ** (m - 1) * (1.0 + r * r) ** (-expo)

    # split at r = 1 so the algebraic tail is handled by the infinite-range rule
    head, _ = integrate.quad(radial, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    tail, _ = integrate.quad(radial, 1.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    sphere_area = 2.0 * math.pi ** (0.5 * m) / math.gamma(0.5 * m)
    return 1.0 / (sphere_area * (head + tail))


def _sq_horizontal(x, m):
    x = np.asarray(x, dtype=float)
    if m == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x * x
    return _sq(x)


def log_cs_poisson_kernel(x, y, params: KernelParams):
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("Poisson kernel needs y > 0")
    m, s = params.m, params.s
    B = poisson_normalization(m, s)
    return math.log(B) + 2.0 * s * np.log(y) - 0.5 * (m + 2.0 * s) * np.log(_sq_horizontal(x, m) + y * y)


def cs_poisson_kernel(x, y, params: KernelParams):
    """Extension kernel p_s(x, y) = B y^2s / (|x|^2 + y^2)^((m+2s)/2).

    For m = 1 a bare array of abscissae is accepted in place of shape (..., 1).
    """
    return np.exp(log_cs_poisson_kernel(x, y, params))
