"""Oblique-boundary Green function of the heat equation on the half-space,
used as an independent oracle for the finite-difference core.

G(x, y, t) = Gamma(x - y) - Gamma(x - y*) - 2 int_0^inf e^(-k tau) D_last Gamma(x - y* + tau e) dtau

with k = 3 / (4 eps^2), Gamma the heat kernel on R^(m+1) and y* the mirror
image of y.  G satisfies dG/dx_last = k G on the boundary.  Integrating the
tau-integral in closed form gives

G = Gamma(x - y) + Gamma(x - y*) (1 - 2 k sqrt(pi t) erfcx(q)),  q = (h + 2 k t) / (2 sqrt t),

where h = x_last + y_last; both evaluations are provided and cross-checked.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate, special

from . import stencil
from .errors import DomainError, OracleError, PreconditionError
from .grid import build_grid
from .kernels import heat_kernel, heat_kernel_dlast


@dataclass(frozen=True)
class ObliqueParams:
    epsilon: float
    m: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.m < 1:
            raise DomainError("m must be >= 1")

    @property
    def robin(self) -> float:
        return 3.0 / (4.0 * self.epsilon ** 2)


def _points(x, y, params):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = params.m + 1
    if x.shape[-1] != d or y.shape[-1] != d:
        raise DomainError(f"points must have {d} coordinates")
    if np.any(x[..., -1] < 0):
        raise DomainError("evaluation point must lie in the closed half-space")
    if np.any(y[..., -1] <= 0):
        raise DomainError("source point must lie strictly inside the half-space")
    ystar = y.copy()
    ystar[..., -1] = -ystar[..., -1]
    return x, y, ystar


def _tau_cap(h, t):
    """Distance along the ray beyond which the Gaussian factor is below e^-46."""
    return max(math.sqrt(184.0 * t) - h, 0.0) + math.sqrt(t)


def _ray_integral(fun, h, t, params, tol_abs):
    """int_0^inf e^(-k tau) fun(tau) dtau with tau = eps^2 sigma."""
    eps2 = params.epsilon ** 2
    upper = min(60.0, _tau_cap(h, t) / eps2)
    kappa_sigma = params.robin * eps2     # = 3/4

    def integrand(sig):
        return math.exp(-kappa_sigma * sig) * fun(eps2 * sig) * eps2

    val, err = integrate.quad(integrand, 0.0, upper, epsabs=tol_abs, epsrel=1e-13, limit=400)
    if not err <= 10.0 * tol_abs + 1e-12 * abs(val):
        raise OracleError("tau quadrature did not reach its tolerance", achieved=err)
    return val


def green_oblique(x, y, t: float, params: ObliqueParams, tol_scale: float = 1e-10) -> float:
    """G(x, y, t) with the ray integral done by adaptive quadrature (single points)."""
    if not t > 0:
        raise DomainError("green_oblique needs t > 0")
    x, y, ystar = _points(x, y, params)
    z = x - ystar
    h = float(z[-1])
    e = np.zeros_like(z)
    e[-1] = 1.0
    scale = float(heat_kernel(np.zeros(params.m + 1), t))
    ray = _ray_integral(lambda tau: float(heat_kernel_dlast(z + tau * e, t)), h, t, params,
                        tol_scale * scale)
    return float(heat_kernel(x - y, t) - heat_kernel(z, t) - 2.0 * ray)


def green_oblique_closed(x, y, t, params: ObliqueParams):
    """Closed form of G; broadcasts over leading axes of x, y and t."""
    x, y, ystar = _points(x, y, params)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("green_oblique needs t > 0")
    k = params.robin
    h = x[..., -1] + y[..., -1]
    q = (h + 2.0 * k * t) / (2.0 * np.sqrt(t))
    corr = 1.0 - 2.0 * k * np.sqrt(math.pi * t) * special.erfcx(q)
    return heat_kernel(x - y, t) + heat_kernel(x - ystar, t) * corr


def dirichlet_image(x, y, t, m=1):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ys = y.copy()
    ys[..., -1] *= -1
    return heat_kernel(x - y, t) - heat_kernel(x - ys, t)


def neumann_image(x, y, t, m=1):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ys = y.copy()
    ys[..., -1] *= -1
    return heat_kernel(x - y, t) + heat_kernel(x - ys, t)


def _dlast2_heat(z, t):
    """Second derivative of the heat kernel along the last coordinate."""
    zl = z[..., -1]
    return (zl * zl / (4.0 * t * t) - 1.0 / (2.0 * t)) * heat_kernel(z, t)


def oblique_bc_residual(params: ObliqueParams, samples, tol_scale: float = 1e-12,
                        floor: float = 1e-300) -> float:
    """Max relative defect of dG/dx_last - k G = 0 over boundary samples.

    ``samples`` is an iterable of (x on the boundary, source y, t).  The normal
    derivative differentiates each term of the defining formula; the ray
    term's derivative, int e^(-k tau) D_last^2 Gamma dtau, is integrated by a
    separate quadrature rather than rewritten through the identity it is
    supposed to satisfy.
    """
    worst = 0.0
    for x, y, t in samples:
        x, y, ystar = _points(x, y, params)
        if abs(x[-1]) > 0:
            raise PreconditionError("boundary samples need x_last = 0")
        z = x - ystar
        h = float(z[-1])
        e = np.zeros_like(z)
        e[-1] = 1.0
        scale = float(heat_kernel(np.zeros(params.m + 1), t))
        G = green_oblique(x, y, t, params)
        ray2 = _ray_integral(lambda tau: float(_dlast2_heat(z + tau * e, t)), h, t, params,
                             tol_scale * scale / max(t, 1e-300))
        dG = float(heat_kernel_dlast(x - y, t) - heat_kernel_dlast(z, t) - 2.0 * ray2)
        kG = params.robin * G
        worst = max(worst, abs(dG - kG) / (abs(dG) + abs(kG) + floor))
    return worst


def heat_residual(params: ObliqueParams, x, y, t, h: float = 1e-3, dt: float = 1e-4) -> float:
    """Finite-difference value of (d_t - Lap_x) G at (x, t), away from the source."""
    x = np.asarray(x, dtype=float)
    d = params.m + 1

    def G(xx, tt):
        return float(green_oblique_closed(xx, y, tt, params))

    gt = (G(x, t + dt) - G(x, t - dt)) / (2 * dt)
    lap = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        lap += (G(x + e, t) - 2 * G(x, t) + G(x - e, t)) / (h * h)
    return gt - lap


# -- Duhamel solutions ---------------------------------------------------------------

def _gl_nodes(a, b, panels, order=4):
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1, None] + half[:, None] * (xg[None, :] + 1.0)).ravel()
    weights = (half[:, None] * wg[None, :]).ravel()
    return nodes, weights


@dataclass
class DuhamelQuadrature:
    """Resolution knobs of :func:`duhamel_solve`.

    The source is integrated over the box ``[-Lx, Lx]^m x [0, Ly]`` (it must be
    negligible outside).  ``h`` is the target node spacing of the composite
    Gauss-Legendre rules, ``band`` the width of the near-singular time band
    replaced by the local source value, ``n_time`` the number of
    Gauss-Legendre nodes in v = sqrt(t - s) over the rest of [0, t].
    """
    Lx: float = 3.0
    Ly: float = 3.0
    h: float = 0.005
    band: float = 1e-5
    n_time: int = 48

    def tightened(self, factor: float = 10.0) -> "DuhamelQuadrature":
        """Band and time rule tightened by ``factor``; the spatial rule is kept."""
        return DuhamelQuadrature(self.Lx, self.Ly, self.h, self.band / factor,
                                 int(self.n_time * math.sqrt(factor)) + 1)


def _axis_kernel_free(xe, yq, tau):
    d = xe[:, None] - yq[None, :]
    return np.exp(-d * d / (4 * tau)) / math.sqrt(4 * math.pi * tau)


def _axis_kernel_normal(xe, yq, tau, k):
    d = xe[:, None] - yq[None, :]
    hsum = xe[:, None] + yq[None, :]
    g = np.exp(-d * d / (4 * tau)) / math.sqrt(4 * math.pi * tau)
    gs = np.exp(-hsum * hsum / (4 * tau)) / math.sqrt(4 * math.pi * tau)
    q = (hsum + 2 * k * tau) / (2 * math.sqrt(tau))
    return g + gs * (1.0 - 2.0 * k * math.sqrt(math.pi * tau) * special.erfcx(q))


def duhamel_solve(f, params: ObliqueParams, x_eval, y_eval, times, quad: DuhamelQuadrature = None):
    """u(x, t) = int_0^t int G(x, y, t - s) f(y, s) dy ds on a tensor evaluation grid.

    ``f(Y, s)`` takes coordinate arrays (one per axis, broadcastable) and a
    time.  The kernel factorizes into horizontal Gaussians times a normal
    factor, so every time node costs a few small matrix products.  Returns an
    array of shape ``(len(times),) + (len(x_eval),)*m + (len(y_eval),)``.
    """
    quad = quad or DuhamelQuadrature()
    m = params.m
    k = params.robin
    xe = np.asarray(x_eval, dtype=float)
    ye = np.asarray(y_eval, dtype=float)
    if np.any(ye < 0):
        raise DomainError("evaluation points must lie in the closed half-space")
    nx_p = max(int(math.ceil(2 * quad.Lx / (4 * quad.h))), 1)
    ny_p = max(int(math.ceil(quad.Ly / (4 * quad.h))), 1)
    xq, wxq = _gl_nodes(-quad.Lx, quad.Lx, nx_p)
    yq, wyq = _gl_nodes(0.0, quad.Ly, ny_p)
    Yq = np.meshgrid(*([xq] * m + [yq]), indexing="ij")
    Xe = np.meshgrid(*([xe] * m + [ye]), indexing="ij")
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        if t <= 0:
            out.append(np.zeros(Xe[0].shape))
            continue
        band = min(quad.band, t)
        acc = np.zeros(Xe[0].shape)
        if t > band:
            v, wv = np.polynomial.legendre.leggauss(quad.n_time)
            va, vb = math.sqrt(band), math.sqrt(t)
            vv = 0.5 * (vb - va) * (v + 1.0) + va
            wv = 0.5 * (vb - va) * wv
            for vk, wk in zip(vv, wv):
                tau = vk * vk
                F = f(Yq, t - tau)
                A = _axis_kernel_free(xe, xq, tau) * wxq[None, :]
                B = _axis_kernel_normal(ye, yq, tau, k) * wyq[None, :]
                if m == 1:
                    inner = A @ F @ B.T
                else:
                    inner = np.einsum("ai,bj,cl,ijl->abc", A, A, B, F, optimize=True)
                acc += (2.0 * vk * wk) * inner
        # near-singular band: the kernel acts as the identity on the smooth source
        acc += band * f(Xe, t - 0.5 * band)
        out.append(acc)
    return np.array(out)


def _fd_robin(f, params, nx, ny, Lx, Ly, dt, times):
    """Crank-Nicolson solution of the Robin problem on the flow grid (s = 1/2)."""
    g = build_grid(m=params.m, nx=nx, ny=ny, Lx=Lx, Ly=Ly, s=0.5)
    K = stencil.stiffness_matrix(g)
    n = K.shape[0]
    Mv = g.mass.ravel()
    bnd = np.zeros(g.shape)
    bnd[..., 0] = g.wb * params.robin       # potential (k/2)|u|^2 on y = 0
    A = K + sp.diags(bnd.ravel())
    M = sp.diags(Mv)
    lhs = spla.splu((M / dt + 0.5 * A).tocsc())
    rhs_op = (M / dt - 0.5 * A).tocsr()
    X = g.coords()
    u = np.zeros(n)
    out = {}
    targets = sorted(float(t) for t in times)
    if any(abs(t / dt - round(t / dt)) > 1e-9 for t in targets):
        raise PreconditionError("output times must be multiples of the time step")
    nsteps = int(round(targets[-1] / dt))
    fk = f(X, 0.0).ravel()
    for step in range(1, nsteps + 1):
        t = step * dt
        fn = f(X, t).ravel()
        u = lhs.solve(rhs_op @ u + 0.5 * Mv * (fk + fn))
        fk = fn
        for tt in targets:
            if abs(tt - t) < 1e-9 * max(1.0, tt):
                out[tt] = u.reshape(g.shape).copy()
    return g, [out[t] for t in targets]


def duhamel_vs_fd(f, params: ObliqueParams, ladder=(0.1, 0.05, 0.025), L: float = 3.0,
                  times=(0.1, 0.2, 0.3, 0.4, 0.5), window: float = 1.5,
                  quad: DuhamelQuadrature = None) -> dict:
    """Space-time L^2 error of the finite-difference Robin solve against the Duhamel oracle.

    Errors are measured on the coarsest grid's nodes inside [-window, window]^m x [0, window]
    at the given times; the time step follows the mesh (dt = h).
    """
    if params.m != 1:
        raise PreconditionError("duhamel_vs_fd is implemented for m = 1")
    quad = quad or DuhamelQuadrature(Lx=L, Ly=L)
    h0 = ladder[0]
    xe = np.arange(-window, window + 1e-9, h0)
    ye = np.arange(0.0, window + 1e-9, h0)
    ref = duhamel_solve(f, params, xe, ye, times, quad)
    errors = []
    for h in ladder:
        nx = int(round(2 * L / h)) + 1
        ny = int(round(L / h)) + 1
        g, sols = _fd_robin(f, params, nx, ny, L, L, h, times)
        ix = np.round((xe + L) / h).astype(int)
        iy = np.round(ye / h).astype(int)
        diff = np.array([s[np.ix_(ix, iy)] for s in sols]) - ref
        errors.append(math.sqrt(float(np.sum(diff ** 2)) * h0 * h0 * (times[1] - times[0])))
    orders = [math.log(errors[i] / errors[i + 1]) / math.log(ladder[i] / ladder[i + 1])
              if errors[i] > 0 and errors[i + 1] > 0 else math.nan
              for i in range(len(ladder) - 1)]
    scale = math.sqrt(float(np.sum(ref ** 2)) * h0 * h0 * (times[1] - times[0]))
    return {"ladder": list(ladder), "errors": errors, "orders": orders,
            "reference_norm": scale, "quadrature": quad.__dict__}


# -- verification report ------------------------------------------------------------

def default_bc_samples(n: int = 50, seed: int = 0):
    """Reproducible (boundary point, source, time, epsilon) tuples for m = 1."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = np.array([rng.uniform(-1.0, 1.0), 0.0])
        y = np.array([rng.uniform(-1.0, 1.0), rng.uniform(0.05, 1.0)])
        t = float(rng.uniform(0.05, 2.0))
        eps = float(10 ** rng.uniform(-1.0, 1.0))
        out.append((x, y, t, eps))
    return out


def _limit_samples():
    """Boundary-adjacent points for the image-kernel limits (t in [1, 4])."""
    return [(np.array([0.3, 0.02]), np.array([-0.1, 0.05]), 2.0),
            (np.array([-0.5, 0.0]), np.array([0.2, 0.1]), 4.0),
            (np.array([0.0, 0.05]), np.array([0.4, 0.08]), 3.0),
            (np.array([1.0, 0.01]), np.array([0.5, 0.03]), 1.0)]


def _gaussian_source(x0=0.0, y0=0.6, width=0.15, T=0.5):
    def f(X, s):
        r2 = (X[0] - x0) ** 2 + (X[-1] - y0) ** 2
        return np.exp(-r2 / width) * math.sin(math.pi * s / T) if s > 0 else 0.0 * r2
    return f


def verification_report(n_samples: int = 50, seed: int = 0, eps_ref: float = 0.5,
                        run_duhamel: bool = True) -> list:
    """Checks run by ``green-verify``: list of {name, measured, tolerance, pass}."""
    checks = []

    def add(name, measured, tol, ok=None):
        ok = (measured <= tol) if ok is None else ok
        checks.append({"name": name, "measured": float(measured), "tolerance": float(tol),
                       "pass": bool(ok)})

    worst = 0.0
    for x, y, t, eps in default_bc_samples(n_samples, seed):
        worst = max(worst, oblique_bc_residual(ObliqueParams(eps), [(x, y, t)]))
    add("oblique_bc_residual", worst, 1e-6)

    dev_d = max(abs(green_oblique(x, y, t, ObliqueParams(1e-3)) - float(dirichlet_image(x, y, t)))
                for x, y, t in _limit_samples())
    add("dirichlet_limit_eps_1e-3", dev_d, 1e-8)
    dev_n = max(abs(green_oblique(x, y, t, ObliqueParams(1e3)) - float(neumann_image(x, y, t)))
                for x, y, t in _limit_samples())
    add("neumann_limit_eps_1e3", dev_n, 1e-6)

    cf = max(abs(green_oblique(x, y, t, ObliqueParams(e)) - float(green_oblique_closed(x, y, t, ObliqueParams(e))))
             for x, y, t, e in default_bc_samples(10, seed + 1))
    add("closed_form_agreement", cf, 1e-9)

    mono_ok = True
    for x, y, t in _limit_samples():
        vals = [float(green_oblique_closed(x, y, t, ObliqueParams(e))) for e in (1e-3, 0.1, 1.0, 10.0, 1e3)]
        mono_ok &= all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    add("monotone_in_epsilon", 0.0 if mono_ok else 1.0, 0.0, mono_ok)

    res = max(abs(heat_residual(ObliqueParams(eps_ref), np.array([0.4, 0.7]), np.array([-0.2, 0.3]), t))
              for t in (0.2, 0.5, 1.0))
    add("interior_heat_residual", res, 1e-4)

    if run_duhamel:
        rep = duhamel_vs_fd(_gaussian_source(), ObliqueParams(eps_ref))
        add("duhamel_vs_fd_min_order", min(rep["orders"]), 1.5, min(rep["orders"]) >= 1.5)
    return checks


def write_report(checks, path):
    with open(path, "w") as fh:
        json.dump({"checks": checks, "all_pass": all(c["pass"] for c in checks)}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
