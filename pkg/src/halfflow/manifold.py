"""Target constraint sets and the Ginzburg-Landau boundary penalty.

Points are arrays whose last axis has length ``ambient_dim``; every function
broadcasts over the leading axes so the same code serves single vectors and
whole boundary traces.

Sign convention: ``gl_boundary_force`` is minus the gradient of the potential
density, and the flow imposes ``lim y^a dU/dy = -force`` with ``y`` pointing
into the half-space.  With the outward normal ``nu = -e_y`` this reads
``dU/dnu = force``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, PreconditionError, TubeViolation


SPHERE = "sphere"
GENERIC = "generic"


@dataclass(frozen=True)
class PenaltyParams:
    epsilon: float
    s: float = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.s < 1.0:
            raise DomainError(f"s must lie in (0, 1), got {self.s}")

    @property
    def c_s(self) -> float:
        return c_s(self.s)


def c_s(s: float) -> float:
    """Normalization constant Gamma(1-s) / (2^(2s-1) Gamma(s)); equals 1 at s=1/2."""
    if s == 0.5:
        return 1.0
    return math.gamma(1.0 - s) / (2.0 ** (2.0 * s - 1.0) * math.gamma(s))


@dataclass(frozen=True)
class TargetManifold:
    ambient_dim: int
    kind: str = SPHERE
    projection_oracle: Optional[Callable[[np.ndarray], np.ndarray]] = field(
        default=None, compare=False)
    tube_radius: float = 0.5
    name: str = "sphere"

    def __post_init__(self):
        if self.ambient_dim < 2:
            raise DomainError("ambient dimension must be at least 2")
        if self.kind not in (SPHERE, GENERIC):
            raise DomainError(f"unknown manifold kind {self.kind!r}")
        if self.kind == GENERIC and self.projection_oracle is None:
            raise DomainError("generic targets need a projection oracle")
        if not self.tube_radius > 0:
            raise DomainError("tube radius must be positive")


def unit_sphere(ell: int = 2) -> TargetManifold:
    return TargetManifold(ambient_dim=ell, kind=SPHERE, tube_radius=1.0,
                          name=f"S^{ell - 1}")


def _torus_projection(p):
    p = np.asarray(p, dtype=float)
    q = np.empty_like(p)
    for sl in (slice(0, 2), slice(2, 4)):
        block = p[..., sl]
        r = np.linalg.norm(block, axis=-1, keepdims=True)
        q[..., sl] = block / r
    return q


def flat_torus() -> TargetManifold:
    """S^1 x S^1 inside R^4, projected one circle at a time.

    Each factor is a unit circle, so the projection is smooth as long as
    neither planar block vanishes; ``tube_radius`` 0.5 keeps us well inside.
    """
    return TargetManifold(ambient_dim=4, kind=GENERIC,
                          projection_oracle=_torus_projection,
                          tube_radius=0.5, name="T^2")


def make_target(name: str, ell: int = 2) -> TargetManifold:
    if name in ("sphere", SPHERE):
        return unit_sphere(ell)
    if name in ("torus", "flat_torus"):
        return flat_torus()
    raise DomainError(f"unknown target manifold {name!r}")


def _check_dim(target, p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != target.ambient_dim:
        raise DomainError(
            f"expected vectors in R^{target.ambient_dim}, got trailing axis {p.shape[-1]}")
    if not np.all(np.isfinite(p)):
        raise DomainError("non-finite input")
    return p


def project(target: TargetManifold, p):
    """Nearest-point projection onto the target; returns ``(q, d)`` with d = |p - q|."""
    p = _check_dim(target, p)
    if target.kind == SPHERE:
        r = np.linalg.norm(p, axis=-1)
        if np.any(r == 0.0):
            raise DomainError("projection onto the sphere is undefined at the origin")
        q = p / r[..., None]
        return q, np.abs(r - 1.0)
    q = np.asarray(target.projection_oracle(p), dtype=float)
    d = np.linalg.norm(p - q, axis=-1)
    if np.any(d >= target.tube_radius):
        raise TubeViolation(
            f"point at distance {float(np.max(d)):.6g} lies outside the tube "
            f"of radius {target.tube_radius}")
    return q, d


def chi_cutoff(t, delta_n: float):
    """Cutoff applied to the squared distance; returns ``(value, derivative)``.

    Identity on [0, delta^2], constant 2 delta^2 beyond (2 delta)^2, and a
    C^2 bridge in between whose slope g(xi) = (1-xi)^4 (1+4xi) decreases
    monotonically from 1 to 0.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("chi_cutoff needs t >= 0")
    if not delta_n > 0:
        raise DomainError("delta_n must be positive")
    d2 = delta_n * delta_n
    width = 3.0 * d2
    xi = np.clip((t - d2) / width, 0.0, 1.0)
    # antiderivative of (1-u)^4 (1+4u) = 1 - 10u^2 + 20u^3 - 15u^4 + 4u^5
    G = xi * (1.0 + xi * xi * (-10.0 / 3.0 + xi * (5.0 + xi * (-3.0 + xi * (2.0 / 3.0)))))
    g = (1.0 - xi) ** 4 * (1.0 + 4.0 * xi)
    value = np.where(t <= d2, t, d2 + width * G)
    deriv = np.where(t <= d2, 1.0, g)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def gl_potential_density(u, params: PenaltyParams, target: TargetManifold):
    """Boundary potential density: (c_s/4eps^2)(1-|u|^2)^2, or (c_s/eps^2) chi(d^2) for generic N."""
    u = _check_dim(target, u)
    eps2 = params.epsilon ** 2
    if target.kind == SPHERE:
        w = 1.0 - np.sum(u * u, axis=-1)
        return params.c_s / (4.0 * eps2) * w * w
    _, d = project(target, u)
    value, _ = chi_cutoff(d * d, target.tube_radius)
    return params.c_s / eps2 * value


def gl_boundary_force(u, params: PenaltyParams, target: TargetManifold):
    """Minus the u-gradient of ``gl_potential_density``."""
    u = _check_dim(target, u)
    eps2 = params.epsilon ** 2
    if target.kind == SPHERE:
        w = 1.0 - np.sum(u * u, axis=-1)
        return (params.c_s / eps2) * w[..., None] * u
    q, d = project(target, u)
    _, dchi = chi_cutoff(d * d, target.tube_radius)
    return -(params.c_s / eps2) * np.asarray(dchi)[..., None] * 2.0 * (u - q)


def tangent_project(u, v, tol: float = 1e-6):
    """Remove the component of ``v`` along ``u``; ``u`` must be (nearly) unit."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    r2 = np.sum(u * u, axis=-1)
    if np.any(np.abs(np.sqrt(r2) - 1.0) > tol):
        raise PreconditionError("tangent_project expects |u| = 1")
    return v - (np.sum(v * u, axis=-1) / r2)[..., None] * u
