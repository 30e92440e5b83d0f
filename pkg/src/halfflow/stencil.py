"""Weighted stiffness operator of the discrete Dirichlet energy.

The discrete energy is ``1/2 sum_e C_e |U_p - U_q|^2`` over the grid edges
e = (p, q) with the coefficients ``grid.cx`` / ``grid.cy``.  Its gradient is
``K U`` (a weighted, divergence-form Laplacian with natural Neumann faces).

Two interchangeable backends: numba loop kernels for m = 1 and m = 2, and a
vectorized numpy path for any m.  Set ``HALFFLOW_DISABLE_NUMBA=1`` to force
numpy (or call :func:`set_backend`).
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("HALFFLOW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


_backend = "numba" if (_HAVE_NUMBA and not _env_disabled()) else "numpy"


def get_backend() -> str:
    return _backend


def set_backend(name: str):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


# -- numpy path ---------------------------------------------------------------

def _action_numpy(U, cx, cy):
    m = U.ndim - 2
    KU = np.zeros_like(U)
    energy = 0.0
    coeffs = list(cx) + [cy]
    for axis, C in enumerate(coeffs):
        D = np.diff(U, axis=axis)
        flux = C[..., None] * D
        energy += 0.5 * float(np.sum(flux * D))
        lo = [slice(None)] * (m + 2)
        hi = [slice(None)] * (m + 2)
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        KU[tuple(lo)] -= flux
        KU[tuple(hi)] += flux
    return KU, energy


# -- numba path ---------------------------------------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _action_m1(U, cx, cy):
        nx, ny, ell = U.shape
        KU = np.zeros_like(U)
        energy = 0.0
        for i in range(nx - 1):
            for j in range(ny):
                c = cx[i, j]
                for k in range(ell):
                    d = U[i + 1, j, k] - U[i, j, k]
                    f = c * d
                    energy += 0.5 * f * d
                    KU[i, j, k] -= f
                    KU[i + 1, j, k] += f
        for i in range(nx):
            for j in range(ny - 1):
                c = cy[i, j]
                for k in range(ell):
                    d = U[i, j + 1, k] - U[i, j, k]
                    f = c * d
                    energy += 0.5 * f * d
                    KU[i, j, k] -= f
                    KU[i, j + 1, k] += f
        return KU, energy

    @numba.njit(cache=True)
    def _action_m2(U, cx0, cx1, cy):
        n0, n1, ny, ell = U.shape
        KU = np.zeros_like(U)
        energy = 0.0
        for i in range(n0 - 1):
            for p in range(n1):
                for j in range(ny):
                    c = cx0[i, p, j]
                    for k in range(ell):
                        d = U[i + 1, p, j, k] - U[i, p, j, k]
                        f = c * d
                        energy += 0.5 * f * d
                        KU[i, p, j, k] -= f
                        KU[i + 1, p, j, k] += f
        for i in range(n0):
            for p in range(n1 - 1):
                for j in range(ny):
                    c = cx1[i, p, j]
                    for k in range(ell):
                        d = U[i, p + 1, j, k] - U[i, p, j, k]
                        f = c * d
                        energy += 0.5 * f * d
                        KU[i, p, j, k] -= f
                        KU[i, p + 1, j, k] += f
        for i in range(n0):
            for p in range(n1):
                for j in range(ny - 1):
                    c = cy[i, p, j]
                    for k in range(ell):
                        d = U[i, p, j + 1, k] - U[i, p, j, k]
                        f = c * d
                        energy += 0.5 * f * d
                        KU[i, p, j, k] -= f
                        KU[i, p, j + 1, k] += f
        return KU, energy


def stiffness_action(U, grid, backend=None):
    """Return ``(K U, 1/2 U.K U)`` for a field on ``grid``."""
    U = np.ascontiguousarray(U, dtype=float)
    backend = backend or _backend
    if backend == "numba":
        if grid.m == 1:
            return _action_m1(U, grid.cx[0], grid.cy)
        if grid.m == 2:
            return _action_m2(U, grid.cx[0], grid.cx[1], grid.cy)
    return _action_numpy(U, grid.cx, grid.cy)


def dirichlet_half(U, grid, backend=None) -> float:
    """Discrete 1/2 int y^a |grad U|^2."""
    return stiffness_action(U, grid, backend)[1]


def stiffness_diagonal(grid):
    """Diagonal of K (same for every component), shape ``grid.shape``."""
    diag = np.zeros(grid.shape)
    for axis, C in enumerate(list(grid.cx) + [grid.cy]):
        lo = [slice(None)] * (grid.m + 1)
        hi = [slice(None)] * (grid.m + 1)
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        diag[tuple(lo)] += C
        diag[tuple(hi)] += C
    return diag


def stiffness_matrix(grid):
    """Sparse scalar K (CSR) over the flattened node index ``np.ravel_multi_index``."""
    import scipy.sparse as sp

    n = int(np.prod(grid.shape))
    idx = np.arange(n).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for axis, C in enumerate(list(grid.cx) + [grid.cy]):
        lo = [slice(None)] * (grid.m + 1)
        hi = [slice(None)] * (grid.m + 1)
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        p = idx[tuple(lo)].ravel()
        q = idx[tuple(hi)].ravel()
        c = C.ravel()
        rows += [p, q, p, q]
        cols += [p, q, q, p]
        vals += [c, c, -c, -c]
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return K.tocsr()
