import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from halfflow.errors import DomainError
from halfflow.kernels import (KernelParams, backward_kernel, backward_kernel_direct, cs_poisson_kernel,
                              heat_kernel, log_backward_kernel, nonlocal_kernel,
                              nonlocal_kernel_direct, nonlocal_kernel_mass, poisson_normalization)


def test_heat_kernel_examples():
    assert heat_kernel(np.array([0.3, 0.2]), -1.0) == 0.0
    assert heat_kernel(np.zeros(2), 1 / (4 * math.pi)) == pytest.approx(1.0, rel=1e-14)


def test_heat_kernel_mass():
    x = np.linspace(-12, 12, 1201)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vals = heat_kernel(np.stack([X - 0.1, Y + 0.2], -1), 0.7)
    mass = integrate.trapezoid(integrate.trapezoid(vals, x, axis=1), x)
    assert abs(mass - 1) < 1e-6


def test_heat_kernel_residual():
    z = np.array([0.7, -0.4])
    t, h, dt = 0.5, 1e-3, 1e-4
    errs = []
    for hh in (h, h / 2):
        gt = (heat_kernel(z, t + dt) - heat_kernel(z, t - dt)) / (2 * dt)
        lap = sum((heat_kernel(z + e, t) - 2 * heat_kernel(z, t) + heat_kernel(z - e, t)) / hh ** 2
                  for e in (np.array([hh, 0]), np.array([0, hh])))
        errs.append(abs(gt - lap))
    assert errs[0] < 1e-5


def test_backward_kernel_value():
    val = backward_kernel(np.zeros(2), 0.0, np.zeros(2), 1 / (4 * math.pi), 0.5)
    assert val == pytest.approx(2.0, rel=1e-13)
    with pytest.raises(DomainError):
        backward_kernel(np.zeros(2), 1.0, np.zeros(2), 1.0, 0.5)


@settings(max_examples=30)
@given(st.floats(-2, 2), st.floats(0, 2), st.floats(-3, -0.01), st.floats(0.1, 0.9))
def test_backward_kernel_scaling(x, y, t, s):
    X = np.array([x, y])
    lhs = backward_kernel(2 * X, 4 * t, np.zeros(2), 0.0, s)
    rhs = 2.0 ** (-1 - 2 + 2 * s) * backward_kernel(X, t, np.zeros(2), 0.0, s)
    if rhs > 1e-250:
        assert abs(lhs / rhs - 1) < 1e-12


def test_backward_kernel_gradient_identity():
    X = np.array([0.4, 0.3])
    t, s, h = -0.8, 0.3, 1e-6
    G = backward_kernel(X, t, np.zeros(2), 0.0, s)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (backward_kernel(X + e, t, np.zeros(2), 0.0, s) - backward_kernel(X - e, t, np.zeros(2), 0.0, s)) / (2 * h)
        exact = -X[i] / (2 * abs(t)) * G
        assert abs(fd / exact - 1) < 1e-6


def test_backward_kernel_caloric_half():
    """At s = 1/2 the weight solves the backward heat equation away from t0."""
    X0, t0 = np.zeros(2), 1.0
    X, t, h, dt = np.array([0.3, 0.4]), 0.5, 1e-3, 1e-4
    f = lambda XX, tt: backward_kernel(XX, tt, X0, t0, 0.5)
    gt = (f(X, t + dt) - f(X, t - dt)) / (2 * dt)
    lap = sum((f(X + e, t) - 2 * f(X, t) + f(X - e, t)) / h ** 2
              for e in (np.array([h, 0]), np.array([0, h])))
    assert abs(gt + lap) < 1e-5 * abs(f(X, t))


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_log_and_direct_paths_agree(s, rng):
    X = rng.uniform(-3, 3, (100, 2))
    t = rng.uniform(-2, 0.9, 100)
    a = backward_kernel(X, t, np.zeros(2), 1.0, s)
    b = backward_kernel_direct(X, t, np.zeros(2), 1.0, s)
    ok = (a > 0) & (b > 0)
    assert np.max(np.abs(a[ok] / b[ok] - 1)) < 1e-13
    p = KernelParams(1, s)
    z, tau = rng.uniform(-3, 3, (100, 1)), rng.uniform(0.05, 4, 100)
    a, b = nonlocal_kernel(z, tau, p), nonlocal_kernel_direct(z, tau, p)
    assert np.max(np.abs(a / b - 1)) < 1e-13


def test_log_path_survives_underflow():
    lg = log_backward_kernel(np.array([60.0, 0.0]), 0.99, np.zeros(2), 1.0, 0.5)
    assert np.isfinite(lg) and lg < -700


def test_nonlocal_kernel_examples():
    p = KernelParams(1, 0.5)
    assert nonlocal_kernel(np.zeros(1), 1.0, p) == pytest.approx(1 / (4 * math.pi), rel=1e-14)
    with pytest.raises(DomainError):
        nonlocal_kernel(np.zeros(1), 0.0, p)
    for tau in (0.3, 1.0, 2.5):
        mass, _ = integrate.quad(lambda z: float(nonlocal_kernel(np.array([z]), tau, p)), -np.inf, np.inf)
        assert abs(mass / nonlocal_kernel_mass(tau, 0.5) - 1) < 1e-6


def test_poisson_kernel():
    p = KernelParams(1, 0.5)
    assert cs_poisson_kernel(0.0, 1.0, p) == pytest.approx(1 / math.pi, rel=1e-10)
    assert poisson_normalization(1, 0.5) == pytest.approx(1 / math.pi, rel=1e-10)
    assert cs_poisson_kernel(0.7, 0.3, p) == cs_poisson_kernel(-0.7, 0.3, p)
    with pytest.raises(DomainError):
        cs_poisson_kernel(0.0, 0.0, p)
    for s in (0.25, 0.5):
        for y in (0.1, 1.0):
            mass, _ = integrate.quad(lambda x: float(cs_poisson_kernel(x, y, KernelParams(1, s))),
                                     -np.inf, np.inf, limit=400, epsabs=1e-12)
            assert abs(mass - 1) < 1e-6


def test_poisson_kernel_m2_mass():
    p = KernelParams(2, 0.5)
    mass, _ = integrate.quad(lambda r: 2 * math.pi * r * float(cs_poisson_kernel(np.array([r, 0.0]), 0.5, p)),
                             0, np.inf, limit=400)
    assert abs(mass - 1) < 1e-6
