"""Truncated half-space grid [-Lx, Lx]^m x [0, Ly] with the weight y^a, a = 1 - 2s.

Fields are plain arrays of shape ``grid.shape + (ell,)`` (horizontal axes
first, y last, components innermost); traces are ``field[..., 0, :]``.

Quadrature: every node owns a dual cell.  Horizontally this gives the
trapezoid weights; vertically the weight is the exact moment of y^a over the
dual cell, so the degenerate weight is integrated exactly near y = 0.
Vertical edges carry the harmonic-mean coefficient 1 / int y^-a dy over the
cell, which is exact for the profile y^(1-a) that the extension produces
near the boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, PreconditionError

SNAPSHOT_MAGIC = b"HFLW"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIddd")


def _moment(y1, y2, p):
    """Integral of y^p over [y1, y2] for p > -1."""
    return (y2 ** (1.0 + p) - y1 ** (1.0 + p)) / (1.0 + p)


@dataclass(eq=False)
class HalfSpaceGrid:
    m: int
    nx: int
    ny: int
    Lx: float
    Ly: float
    s: float
    grading: float = 1.0

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ConfigError("grid.m", "only m = 1 or m = 2 is supported")
        if self.nx < 4 or self.ny < 4:
            raise ConfigError("grid.nx" if self.nx < 4 else "grid.ny", "need at least 4 points")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ConfigError("grid.Lx" if not self.Lx > 0 else "grid.Ly", "extent must be positive")
        if not 0.0 < self.s < 1.0:
            raise ConfigError("penalty.s", f"s must lie in (0, 1), got {self.s}")
        if not self.grading >= 1.0:
            raise ConfigError("grid.grading", "grading exponent must be >= 1")

        self.a = 1.0 - 2.0 * self.s
        self.x = np.linspace(-self.Lx, self.Lx, self.nx)
        self.dx = 2.0 * self.Lx / (self.nx - 1)
        j = np.arange(self.ny) / (self.ny - 1)
        self.y = self.Ly * j ** self.grading
        self.y[0] = 0.0
        self.hy = np.diff(self.y)
        if np.any(self.hy <= 0):
            raise DomainError("y nodes must be strictly increasing")

        wx = np.full(self.nx, self.dx)
        wx[0] = wx[-1] = 0.5 * self.dx
        self.wx = wx
        edges = np.concatenate(([0.0], 0.5 * (self.y[1:] + self.y[:-1]), [self.Ly]))
        self.wy = _moment(edges[:-1], edges[1:], self.a)
        self.ky = 1.0 / _moment(self.y[:-1], self.y[1:], -self.a)

        self.shape = (self.nx,) * self.m + (self.ny,)
        self.trace_shape = (self.nx,) * self.m
        self.wb = self._outer([wx] * self.m)
        self.mass = self._outer([wx] * self.m + [self.wy])
        self.cx = []
        for d in range(self.m):
            factors = [wx] * self.m + [self.wy]
            factors[d] = np.full(self.nx - 1, 1.0 / self.dx)
            self.cx.append(self._outer(factors))
        self.cy = self._outer([wx] * self.m + [self.ky])

    @staticmethod
    def _outer(factors):
        out = np.asarray(factors[0], dtype=float)
        for f in factors[1:]:
            out = np.multiply.outer(out, f)
        return out

    @property
    def hy_min(self) -> float:
        return float(self.hy[0])

    def coords(self):
        """Open mesh of node coordinates, one array per axis (x axes, then y)."""
        axes = [self.x] * self.m + [self.y]
        return np.meshgrid(*axes, indexing="ij")

    def trace_coords(self):
        return np.meshgrid(*([self.x] * self.m), indexing="ij")

    def params(self) -> dict:
        return {"m": self.m, "nx": self.nx, "ny": self.ny, "Lx": self.Lx,
                "Ly": self.Ly, "s": self.s, "grading": self.grading}


def default_grading(s: float) -> float:
    a = 1.0 - 2.0 * s
    return max(1.0, 2.0 / (1.0 + a))


def build_grid(m=1, nx=65, ny=33, Lx=4.0, Ly=4.0, s=0.5, grading="auto") -> HalfSpaceGrid:
    if grading in ("auto", None):
        gamma = 1.0 if s == 0.5 else default_grading(s)
    elif grading == "none":
        gamma = 1.0
    else:
        gamma = float(grading)
    return HalfSpaceGrid(m=int(m), nx=int(nx), ny=int(ny), Lx=float(Lx),
                         Ly=float(Ly), s=float(s), grading=gamma)


def _check_bulk(f, g):
    f = np.asarray(f, dtype=float)
    if f.shape != g.shape:
        raise DomainError(f"bulk samples have shape {f.shape}, grid expects {g.shape}")
    return f


def integrate_bulk(f, g: HalfSpaceGrid) -> float:
    """Quadrature of int y^a f dX over the truncated box."""
    f = _check_bulk(f, g)
    return float(np.sum(g.mass * f))


def integrate_boundary(f, g: HalfSpaceGrid) -> float:
    """Trapezoid quadrature of int f dx over the y = 0 slice (unweighted)."""
    f = np.asarray(f, dtype=float)
    if f.shape != g.trace_shape:
        raise DomainError(f"boundary samples have shape {f.shape}, grid expects {g.trace_shape}")
    return float(np.sum(g.wb * f))


def check_field(U, g: HalfSpaceGrid):
    U = np.asarray(U, dtype=float)
    if U.shape[:-1] != g.shape:
        raise DomainError(f"field shape {U.shape} does not match grid {g.shape} + (ell,)")
    if not np.all(np.isfinite(U)):
        raise DomainError("field contains non-finite values")
    return U


def trace(U):
    return np.asarray(U)[..., 0, :]


def gradient(U, g: HalfSpaceGrid):
    """Node gradient, shape ``grid.shape + (m+1, ell)``.

    Second-order central differences inside, second-order one-sided stencils
    on every face; exact for affine fields.
    """
    U = check_field(U, g)
    parts = [np.gradient(U, g.dx, axis=d, edge_order=2) for d in range(g.m)]
    parts.append(np.gradient(U, g.y, axis=g.m, edge_order=2))
    return np.stack(parts, axis=-2)


def trace_gradient(u, g: HalfSpaceGrid):
    """Horizontal gradient of a trace, shape ``trace_shape + (m, ell)``."""
    u = np.asarray(u, dtype=float)
    parts = [np.gradient(u, g.dx, axis=d, edge_order=2) for d in range(g.m)]
    return np.stack(parts, axis=-2)


def write_snapshot(path, U, g: HalfSpaceGrid, t: float, epsilon: float):
    U = check_field(U, g)
    ell = U.shape[-1]
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.m, ell, g.nx, g.ny,
                          float(g.s), float(t), float(epsilon))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(U, dtype="<f8").tobytes())


def read_snapshot(path):
    """Return ``(header, values)``; values have shape ``(nx,)*m + (ny, ell)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DomainError("truncated snapshot header")
    magic, version, m, ell, nx, ny, s, t, eps = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise DomainError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise DomainError(f"unsupported snapshot version {version}")
    shape = (nx,) * m + (ny, ell)
    count = int(np.prod(shape))
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise DomainError("snapshot body length does not match header")
    values = np.frombuffer(body, dtype="<f8").reshape(shape).astype(float)
    header = {"m": m, "ell": ell, "nx": nx, "ny": ny, "s": s, "t": t, "epsilon": eps,
              "version": version}
    return header, values


def require_ny(g: HalfSpaceGrid, minimum: int):
    if g.ny < minimum:
        raise PreconditionError(f"need ny >= {minimum}, grid has ny = {g.ny}")
