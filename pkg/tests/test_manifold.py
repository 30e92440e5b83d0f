import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from halfflow.errors import DomainError, PreconditionError, TubeViolation
from halfflow.manifold import (PenaltyParams, c_s, chi_cutoff, flat_torus, gl_boundary_force,
                               gl_potential_density, project, tangent_project, unit_sphere)

S1 = unit_sphere(2)
finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_c_s_closed_form():
    assert c_s(0.5) == 1.0
    for s in (0.1, 0.25, 0.75, 0.9):
        ref = math.exp(math.lgamma(1 - s) - (2 * s - 1) * math.log(2) - math.lgamma(s))
        assert abs(c_s(s) / ref - 1) < 1e-12
    assert PenaltyParams(0.3, 0.25).c_s == c_s(0.25)


@pytest.mark.parametrize("eps,s", [(0.0, 0.5), (-1.0, 0.5), (0.1, 0.0), (0.1, 1.0)])
def test_penalty_params_validation(eps, s):
    with pytest.raises(DomainError):
        PenaltyParams(eps, s)


@pytest.mark.parametrize("p,q,d", [((0, 2), (0, 1), 1.0), ((0.6, 0.8), (0.6, 0.8), 0.0),
                                   ((3, 4), (0.6, 0.8), 4.0)])
def test_sphere_projection_examples(p, q, d):
    qq, dd = project(S1, np.array(p, float))
    assert np.allclose(qq, q, atol=1e-15)
    assert abs(dd - d) < 1e-15


def test_sphere_projection_rejects_origin():
    with pytest.raises(DomainError):
        project(S1, np.zeros(2))


@given(arrays(float, 3, elements=finite))
def test_sphere_projection_idempotent(p):
    if np.linalg.norm(p) < 1e-3:
        return
    S2 = unit_sphere(3)
    q, _ = project(S2, p)
    assert abs(np.linalg.norm(q) - 1) < 1e-15
    q2, d2 = project(S2, q)
    assert np.max(np.abs(q2 - q)) < 1e-12
    assert d2 < 1e-12


def test_torus_projection_and_tube(rng):
    T = flat_torus()
    ang = rng.uniform(0, 2 * np.pi, (50, 2))
    base = np.stack([np.cos(ang[:, 0]), np.sin(ang[:, 0]), np.cos(ang[:, 1]), np.sin(ang[:, 1])], -1)
    p = base + 0.05 * rng.standard_normal(base.shape)
    q, d = project(T, p)
    assert np.allclose(d, np.linalg.norm(p - q, axis=-1))
    q2, _ = project(T, q)
    assert np.max(np.abs(q2 - q)) < 1e-12
    with pytest.raises(TubeViolation):
        project(T, np.array([0.1, 0.0, 1.0, 0.0]))


def test_chi_cutoff_examples():
    dn = 0.3
    d2 = dn * dn
    v, dv = chi_cutoff(d2 / 2, dn)
    assert abs(v - d2 / 2) < 1e-15 and dv == 1.0
    v, dv = chi_cutoff(5 * d2, dn)
    assert dv == 0.0
    v, dv = chi_cutoff(0.0, dn)
    assert v == 0.0 and dv == 1.0
    with pytest.raises(DomainError):
        chi_cutoff(-1.0, dn)


def test_chi_cutoff_plateau_and_monotone():
    dn = 0.5
    t = np.linspace(0, 6 * dn * dn, 2001)
    v, dv = chi_cutoff(t, dn)
    assert np.all(np.diff(v) >= -1e-15)
    assert np.all((dv >= 0) & (dv <= 1))
    plateau = v[t >= 4 * dn * dn]
    assert np.ptp(plateau) < 1e-15
    assert abs(plateau[0] - 2 * dn * dn) < 1e-14


def test_chi_cutoff_derivative_matches_fd(rng):
    dn = 0.4
    t = rng.uniform(0.0, 5 * dn * dn, 100)
    h = 1e-6
    vp, _ = chi_cutoff(t + h, dn)
    vm, _ = chi_cutoff(np.maximum(t - h, 0.0), dn)
    _, dv = chi_cutoff(t, dn)
    fd = (vp - vm) / (t + h - np.maximum(t - h, 0.0))
    assert np.max(np.abs(fd - dv)) < 1e-8


def test_potential_examples():
    assert gl_potential_density(np.array([0.6, 0.8]), PenaltyParams(0.1), S1) == pytest.approx(0, abs=1e-28)
    assert gl_potential_density(np.zeros(2), PenaltyParams(0.5), S1) == pytest.approx(1.0, rel=1e-15)
    assert gl_potential_density(np.array([0.5, 0]), PenaltyParams(1.0), S1) == pytest.approx(0.140625, rel=1e-15)


def test_force_examples():
    p = PenaltyParams(1.0)
    assert np.allclose(gl_boundary_force(np.array([0.6, 0.8]), p, S1), 0, atol=1e-15)
    assert np.all(gl_boundary_force(np.zeros(2), p, S1) == 0)
    assert np.allclose(gl_boundary_force(np.array([0.5, 0.0]), p, S1), [0.375, 0.0], atol=1e-15)


@settings(max_examples=50)
@given(arrays(float, 2, elements=finite), arrays(float, 2, elements=finite))
def test_force_is_radial(u, w):
    if np.linalg.norm(u) < 1e-3:
        return
    f = gl_boundary_force(u, PenaltyParams(0.3), S1)
    tang = w - np.dot(w, u) / np.dot(u, u) * u
    assert abs(np.dot(f, tang)) <= 1e-10 * (1 + np.linalg.norm(f) * np.linalg.norm(w))


@pytest.mark.parametrize("target", [unit_sphere(2), flat_torus()])
def test_force_is_minus_gradient(target, rng):
    p = PenaltyParams(0.7, 0.3)
    if target.ambient_dim == 2:
        u = rng.uniform(-1.2, 1.2, (20, 2))
    else:
        ang = rng.uniform(0, 2 * np.pi, (20, 2))
        u = np.stack([np.cos(ang[:, 0]), np.sin(ang[:, 0]), np.cos(ang[:, 1]), np.sin(ang[:, 1])], -1)
        u = u * rng.uniform(0.7, 1.3, (20, 1))
    h = 1e-6
    f = gl_boundary_force(u, p, target)
    grad = np.zeros_like(u)
    for k in range(u.shape[-1]):
        e = np.zeros(u.shape[-1])
        e[k] = h
        grad[:, k] = (gl_potential_density(u + e, p, target) - gl_potential_density(u - e, p, target)) / (2 * h)
    scale = np.max(np.abs(f)) + 1e-12
    assert np.max(np.abs(grad + f)) / scale < 1e-6


@pytest.mark.parametrize("u,v,out", [((1, 0), (0, 3), (0, 3)), ((1, 0), (2, 0), (0, 0)),
                                     ((0.6, 0.8), (1, 0), (0.64, -0.48))])
def test_tangent_project_examples(u, v, out):
    assert np.allclose(tangent_project(np.array(u, float), np.array(v, float)), out, atol=1e-15)


@given(st.floats(0, 2 * np.pi), arrays(float, 2, elements=finite))
def test_tangent_project_orthogonal(phi, v):
    u = np.array([np.cos(phi), np.sin(phi)])
    t = tangent_project(u, v)
    assert abs(np.dot(t, u)) <= 1e-12 * max(1.0, np.linalg.norm(v))


def test_tangent_project_precondition():
    with pytest.raises(PreconditionError):
        tangent_project(np.array([2.0, 0.0]), np.array([0.0, 1.0]))
