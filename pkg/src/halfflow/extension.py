"""Degenerate-elliptic extension of boundary data and the two routes to the
fractional caloric operator (weighted normal flux, and the history-kernel
integral).

Conventions: ``u0`` is a trace of shape ``grid.trace_shape + (ell,)``; fields
have shape ``grid.shape + (ell,)``.  The fractional operator is normalized so
that a pure cosine ``cos(k x)`` is mapped to ``|k|^(2s) cos(k x)``.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft, special

from . import stencil
from .errors import DomainError, PreconditionError, SolverError
from .grid import HalfSpaceGrid, integrate_boundary, require_ny
from .kernels import abs_gamma_neg, poisson_normalization
from .manifold import c_s, tangent_project


def _check_trace(u0, g: HalfSpaceGrid):
    u0 = np.asarray(u0, dtype=float)
    if u0.shape[:-1] != g.trace_shape:
        raise DomainError(f"trace shape {u0.shape} does not match grid {g.trace_shape} + (ell,)")
    if not np.all(np.isfinite(u0)):
        raise DomainError("trace contains non-finite values")
    return u0


# -- finite-difference extension ----------------------------------------------

def _extend_fd(u0, g, tol, maxiter):
    K = stencil.stiffness_matrix(g)
    n = K.shape[0]
    idx = np.arange(n).reshape(g.shape)
    bnd = idx[..., 0].ravel()
    inner = idx[..., 1:].ravel()
    K_II = K[inner][:, inner].tocsc()
    K_IB = K[inner][:, bnd].tocsr()
    # graded meshes make the coefficients span many decades; symmetric diagonal
    # scaling before the factorization keeps the refinement loop well behaved
    d = 1.0 / np.sqrt(K_II.diagonal())
    D = sp.diags(d)
    lu = spla.splu((D @ K_II @ D).tocsc())

    ell = u0.shape[-1]
    U = np.empty(g.shape + (ell,))
    U[..., 0, :] = u0
    for k in range(ell):
        # constants are discrete-harmonic, so solve for the deviation from the mean;
        # constant data then extends exactly
        c = float(np.mean(u0[..., k]))
        rhs = -(K_IB @ (u0[..., k] - c).ravel())
        scale = np.linalg.norm(rhs)
        sol = np.zeros_like(rhs)
        res = 0.0
        if scale > 0:
            r = rhs.copy()
            for _ in range(maxiter):
                sol += d * lu.solve(d * r)
                r = rhs - K_II @ sol
                res = np.linalg.norm(r) / scale
                if res < tol:
                    break
            else:
                raise SolverError("extension solve did not converge", residual=res)
        U[..., 1:, k] = c + sol.reshape(g.shape[:-1] + (g.ny - 1,))
    return U


# -- kernel (Poisson convolution) extension -----------------------------------

def _F0(z, y, s):
    """int_0^z p_s(w, y) dw for m = 1 (odd in z)."""
    B = poisson_normalization(1, s)
    r = z * z / (z * z + y * y)
    return B * np.sign(z) * 0.5 * special.beta(0.5, s) * special.betainc(0.5, s, r)


def _F1(z, y, s):
    """int_0^z w p_s(w, y) dw for m = 1 (even in z)."""
    B = poisson_normalization(1, s)
    if s == 0.5:
        return B * y * 0.5 * np.log1p((z / y) ** 2)
    e = 1.0 - 2.0 * s
    return B * y ** (2.0 * s) * ((z * z + y * y) ** (0.5 * e) - y ** e) / e


def _hat_weights_1d(k, h, y, s):
    """Integral of p_s(. , y) against the hat function centred at offset k*h."""
    z = k * h
    f0 = {d: _F0(z + d * h, y, s) for d in (-1, 0, 1)}
    f1 = {d: _F1(z + d * h, y, s) for d in (-1, 0, 1)}
    left = (f1[0] - f1[-1] - (z - h) * (f0[0] - f0[-1])) / h
    right = ((z + h) * (f0[1] - f0[0]) - (f1[1] - f1[0])) / h
    return left + right


def _extend_kernel_1d(u0, g, images):
    nx, ell = u0.shape
    pad = images * (nx - 1)
    ext = np.pad(u0, ((pad, pad), (0, 0)), mode="reflect")
    ne = ext.shape[0]
    K = ne - 1
    offsets = np.arange(-K, K + 1, dtype=float)
    mean = (g.wx @ u0) / (2.0 * g.Lx)
    U = np.empty(g.shape + (ell,))
    U[:, 0, :] = u0
    for j in range(1, g.ny):
        w = _hat_weights_1d(offsets, g.dx, g.y[j], g.s)
        rows = pad + np.arange(nx)
        # out[p] = sum_q w[(p + pad - q) + K] ext[q]
        sel = rows[:, None] - np.arange(ne)[None, :] + K
        W = w[sel]
        missing = 1.0 - W.sum(axis=1)
        U[:, j, :] = W @ ext + missing[:, None] * mean[None, :]
    return U


def _extend_kernel_2d(u0, g, images):
    from scipy.signal import fftconvolve

    from .kernels import KernelParams, cs_poisson_kernel

    nx = g.nx
    ell = u0.shape[-1]
    pad = images * (nx - 1)
    ext = np.pad(u0, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    ne = ext.shape[0]
    off = np.arange(-(ne - 1), ne) * g.dx
    Z = np.stack(np.meshgrid(off, off, indexing="ij"), axis=-1)
    wb = np.outer(g.wx, g.wx)
    mean = np.einsum("ij,ijk->k", wb, u0) / (2.0 * g.Lx) ** 2
    params = KernelParams(m=2, s=g.s)
    U = np.empty(g.shape + (ell,))
    U[..., 0, :] = u0
    sl = slice(ne - 1 + pad, ne - 1 + pad + nx)
    for j in range(1, g.ny):
        w = cs_poisson_kernel(Z, g.y[j], params) * g.dx * g.dx
        mass = fftconvolve(np.ones((ne, ne)), w, mode="full")[sl, sl]
        missing = 1.0 - mass
        for k in range(ell):
            conv = fftconvolve(ext[..., k], w, mode="full")[sl, sl]
            U[..., j, k] = conv + missing * mean[k]
    return U


def harmonic_extend(u0, g: HalfSpaceGrid, method: str = "fd", tol: float = 1e-10,
                    maxiter: int = 50, images: int = 4):
    """Extension of the trace ``u0`` solving div(y^a grad U) = 0.

    ``fd`` solves the discrete weighted problem (Dirichlet at y = 0, Neumann on
    the artificial faces): sparse LU of the diagonally scaled system followed
    by iterative refinement until the relative residual is below ``tol``.
    ``kernel`` convolves with the Poisson-type extension kernel level by level:
    exact product integration of the piecewise-linear trace for m = 1, nodal
    sums for m = 2.  The data are continued by even reflection across the
    faces (matching the Neumann truncation) over ``images`` copies per side;
    the kernel mass that falls outside is charged to the mean of ``u0``.
    """
    u0 = _check_trace(u0, g)
    if method == "fd":
        return _extend_fd(u0, g, tol, maxiter)
    if method == "kernel":
        if g.m == 1:
            return _extend_kernel_1d(u0, g, images)
        return _extend_kernel_2d(u0, g, images)
    raise DomainError(f"unknown extension method {method!r}")


def dirichlet_energy(U, g: HalfSpaceGrid) -> float:
    """int y^a |grad U|^2, summed edge by edge with the stiffness coefficients.

    This is twice the Dirichlet part of the discrete energy that the flow
    dissipates, so energy bookkeeping is exact at the discrete level.
    """
    return 2.0 * stencil.dirichlet_half(U, g)


def _flux_y0(U, g):
    """Weighted normal flux lim y^a dU/dy, extrapolated from the first two cells.

    Each cell flux ``ky (U_{j+1} - U_j)`` is exact for profiles c0 + c1 y^(1-a);
    the two cell values are extrapolated linearly in y^(1+a), the variable in
    which the next term of the flux expansion is linear.
    """
    y = g.y
    F1 = g.ky[0] * (U[..., 1, :] - U[..., 0, :])
    F2 = g.ky[1] * (U[..., 2, :] - U[..., 1, :])
    p = 1.0 + g.a
    z1 = (0.5 * (y[0] + y[1])) ** p
    z2 = (0.5 * (y[1] + y[2])) ** p
    return F1 - z1 * (F2 - F1) / (z2 - z1)


def frac_op_via_extension(U, g: HalfSpaceGrid):
    """Fractional operator of the trace from an extension field: -(1/c_s) y^a dU/dy at y = 0."""
    require_ny(g, 8)
    U = np.asarray(U, dtype=float)
    if U.shape[:-1] != g.shape:
        raise DomainError(f"field shape {U.shape} does not match grid {g.shape}")
    return -_flux_y0(U, g) / c_s(g.s)


# -- history-kernel route -----------------------------------------------------

class _NeumannHeat:
    """Heat semigroup on the box with Neumann faces, diagonalized by DCT-I.

    The cosine series is the even-reflected periodic continuation of the data,
    i.e. exactly the convolution of that continuation with the Gaussian kernel.
    """

    def __init__(self, g: HalfSpaceGrid):
        self.m = g.m
        k = np.arange(g.nx) * math.pi / (2.0 * g.Lx)
        grids = np.meshgrid(*([k] * g.m), indexing="ij")
        self.k2 = sum(q * q for q in grids)
        self.axes = tuple(range(g.m))

    def forward(self, v):
        return fft.dctn(v, type=1, axes=self.axes)

    def inverse(self, vh):
        return fft.idctn(vh, type=1, axes=self.axes)

    def apply(self, v, tau):
        vh = self.forward(v)
        return self.inverse(vh * np.exp(-self.k2 * tau)[..., None])

    def laplacian(self, v):
        return self.inverse(-self.k2[..., None] * self.forward(v))


def _upper_gamma_neg(s, x):
    """Gamma(-s, x) for x > 0 via Gamma(-s, x) = (x^-s e^-x - Gamma(1-s, x)) / s."""
    x = np.asarray(x, dtype=float)
    return (x ** (-s) * np.exp(-x) - special.gammaincc(1.0 - s, x) * math.gamma(1.0 - s)) / s


def _tail(heat, v, u_now, T, s):
    """int_T^inf (u_now - H_tau v) tau^(-1-s) dtau / |Gamma(-s)| for a frozen v."""
    vh = heat.forward(v)
    k2 = heat.k2
    weight = np.empty_like(k2)
    pos = k2 > 0
    weight[pos] = k2[pos] ** s * _upper_gamma_neg(s, k2[pos] * T)
    weight[~pos] = T ** (-s) / s
    Hv = heat.inverse(vh * weight[..., None])
    return (u_now * T ** (-s) / s - Hv) / abs_gamma_neg(s)


def frac_op_via_kernel(times, traces, t, g: HalfSpaceGrid, tau_min=None, n_tau: int = 400):
    """Fractional caloric operator of a trace history through its history-kernel integral.

    ``times`` (increasing) and ``traces`` (shape ``(nt,) + trace_shape + (ell,)``)
    sample u on [times[0], t]; before times[0] the trace is frozen at
    ``traces[0]``.  The spatial convolution with the kernel is the Neumann
    heat semigroup H_tau, so the operator becomes the tau-integral of
    (u(t) - H_tau u(t - tau)) tau^(-1-s) / |Gamma(-s)|, split as

    * (0, tau_min): first-order Taylor term (d_t - Delta) u(t) tau_min^(1-s) / (1-s);
    * [tau_min, T_hist]: trapezoid rule on a logarithmic tau grid, history
      linearly interpolated in time;
    * (T_hist, inf): closed form per cosine mode for the frozen initial trace.

    ``tau_min`` defaults to the square of the last sampling interval.
    """
    times = np.asarray(times, dtype=float)
    traces = np.asarray(traces, dtype=float)
    if times.ndim != 1 or traces.shape[0] != times.size or times.size == 0:
        raise PreconditionError("history times and traces disagree in length")
    if traces.shape[1:-1] != g.trace_shape:
        raise DomainError("history traces do not match the grid")
    if np.any(np.diff(times) <= 0):
        raise PreconditionError("history times must be strictly increasing")
    if not times[0] <= t <= times[-1] + 1e-12 * max(1.0, abs(t)):
        raise PreconditionError(f"history [{times[0]}, {times[-1]}] does not cover t = {t}")
    s = g.s
    heat = _NeumannHeat(g)

    def u_at(tq):
        if tq <= times[0]:
            return traces[0]
        i = int(np.searchsorted(times, tq)) - 1
        i = min(max(i, 0), times.size - 2)
        lam = (tq - times[i]) / (times[i + 1] - times[i])
        return (1.0 - lam) * traces[i] + lam * traces[i + 1]

    u_now = u_at(t)
    if times.size > 1:
        i = min(max(int(np.searchsorted(times, t)) - 1, 0), times.size - 2)
        dt_sample = times[i + 1] - times[i]
        dudt = (traces[i + 1] - traces[i]) / dt_sample
    else:
        dt_sample = 1e-2
        dudt = np.zeros_like(u_now)
    if tau_min is None:
        tau_min = dt_sample ** 2
    if not tau_min > 0:
        raise PreconditionError("tau_min must be positive")

    gam = abs_gamma_neg(s)
    out = (dudt - heat.laplacian(u_now)) * tau_min ** (1.0 - s) / ((1.0 - s) * gam)

    T_hist = t - times[0]
    if T_hist > tau_min:
        sig = np.linspace(math.log(tau_min), math.log(T_hist), n_tau)
        w = np.full(n_tau, sig[1] - sig[0])
        w[0] = w[-1] = 0.5 * (sig[1] - sig[0])
        for sk, wk in zip(sig, w):
            tau = math.exp(sk)
            diff = u_now - heat.apply(u_at(t - tau), tau)
            out = out + (wk * math.exp(-s * sk) / gam) * diff
        T_tail = T_hist
    else:
        T_tail = tau_min
    out = out + _tail(heat, traces[0], u_now, T_tail, s)
    return out


# -- flow-equation defect ------------------------------------------------------

def orthogonality_residual(u, w, g: HalfSpaceGrid) -> float:
    """L^2 norm over the trace of the tangential part of ``w`` along u/|u|."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    if np.any(np.abs(r - 1.0) > 0.1):
        raise PreconditionError("orthogonality residual needs |u| within 0.1 of 1")
    tang = tangent_project(u / r[..., None], w)
    return math.sqrt(integrate_boundary(np.sum(tang * tang, axis=-1), g))
