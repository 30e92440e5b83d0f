"""A priori theory of the penalized flow as runtime diagnostics.

Everything here is read-only over a :class:`~halfflow.flow.Trajectory`.
Space-time points are written ``Z0 = (x0, t0)`` with ``x0`` a length-m
sequence (a bare float is accepted for m = 1); ``X0 = (x0, 0)`` sits on the
boundary.

Time integrals use a composite Gauss-Legendre rule broken at the stored
snapshot times, with the energy densities interpolated linearly in time
between snapshots; the backward Gaussian weight is evaluated exactly at every
quadrature point.  Bulk densities come from the stored full fields, boundary
densities from the traces (which are stored at every step).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import HypothesisViolation, PreconditionError
from .flow import Trajectory, discrete_energy, FlowState
from .grid import build_grid, gradient, trace_gradient
from .kernels import log_backward_kernel
from .manifold import gl_potential_density

TRUNCATION = 1e-14


# -- small helpers ------------------------------------------------------------------

def _split_z0(Z0, m):
    x0, t0 = Z0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (m,):
        raise PreconditionError(f"x0 must have {m} components")
    return x0, float(t0)


def energy(state: FlowState, g, target):
    """(dirichlet, potential, total) of a single state."""
    return discrete_energy(state.U, state.params, target, g)


def _gauss_rule(times, a, b, npts):
    """Composite Gauss-Legendre nodes/weights on [a, b], broken at ``times``."""
    if b <= a:
        return np.zeros(0), np.zeros(0)
    cuts = [a] + [t for t in times if a < t < b] + [b]
    xg, wg = np.polynomial.legendre.leggauss(npts)
    nodes, weights = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (xg + 1.0))
        weights.append(half * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def _interp_series(series, times, t):
    """Linear interpolation of a stacked series (axis 0 = time) at time t."""
    if t <= times[0]:
        return series[0]
    if t >= times[-1]:
        return series[-1]
    i = int(np.searchsorted(times, t)) - 1
    lam = (t - times[i]) / (times[i + 1] - times[i])
    return (1.0 - lam) * series[i] + lam * series[i + 1]


def _check_coverage(traj, a, b, what):
    tol = 1e-12 * max(1.0, abs(b))
    if a < traj.times[0] - tol or b > traj.times[-1] + tol:
        raise PreconditionError(
            f"{what} needs the trajectory on [{a:.6g}, {b:.6g}], stored [{traj.times[0]:.6g}, {traj.times[-1]:.6g}]")


class _Densities:
    """Energy densities of a trajectory, optionally resampled on a 2x finer grid."""

    def __init__(self, traj: Trajectory, refine: bool = False):
        g = traj.grid
        self.traj = traj
        self.snap_times = traj.snap_times
        bulk = np.array([0.5 * np.sum(gradient(U, g) ** 2, axis=(-2, -1)) for U in traj.snapshots])
        bnd = gl_potential_density(traj.traces, traj.params, traj.target)
        if refine:
            fine = build_grid(m=g.m, nx=2 * g.nx - 1, ny=2 * g.ny - 1, Lx=g.Lx, Ly=g.Ly,
                              s=g.s, grading=g.grading)
            axes = [g.x] * g.m + [g.y]
            pts = np.stack([c.ravel() for c in fine.coords()], axis=-1)
            bulk = np.array([RegularGridInterpolator(axes, b, method="cubic")(pts).reshape(fine.shape)
                             for b in bulk])
            taxes = [g.x] * g.m
            tpts = np.stack([c.ravel() for c in fine.trace_coords()], axis=-1)
            bnd = np.array([RegularGridInterpolator(taxes, b, method="cubic")(tpts).reshape(fine.trace_shape)
                            for b in bnd])
            g = fine
        self.grid = g
        self.bulk = bulk
        self.bnd = bnd.reshape((bnd.shape[0],) + g.trace_shape)
        self.X = np.stack(g.coords(), axis=-1)
        xb = np.stack(g.trace_coords(), axis=-1)
        self.Xb = np.concatenate([xb, np.zeros(xb.shape[:-1] + (1,))], axis=-1)

    def bulk_at(self, t):
        return _interp_series(self.bulk, self.snap_times, t)

    def bnd_at(self, t):
        return _interp_series(self.bnd, self.traj.times, t)

    def weighted(self, X0, t0, t):
        """(bulk, boundary) integrals of the densities against the backward weight at time t."""
        g = self.grid
        s = g.s
        lb = log_backward_kernel(self.X, t, X0, t0, s)
        lbb = log_backward_kernel(self.Xb, t, X0, t0, s)
        top = max(float(lb.max()), float(lbb.max()))
        cut = top + math.log(TRUNCATION)
        G = np.where(lb >= cut, np.exp(lb), 0.0)
        Gb = np.where(lbb >= cut, np.exp(lbb), 0.0)
        return (float(np.sum(g.mass * G * self.bulk_at(t))),
                float(np.sum(g.wb * Gb * self.bnd_at(t))))


# -- renormalized energies -----------------------------------------------------------

@dataclass
class RenormEnergyCurve:
    Z0: tuple
    R_values: np.ndarray
    D_values: np.ndarray
    E_values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.R_values) == len(self.D_values) == len(self.E_values)):
            raise PreconditionError("curve arrays must have equal length")


def _renorm_single(dens: _Densities, X0, t0, R, npts):
    t_slice = t0 - R * R
    b, p = dens.weighted(X0, t0, t_slice)
    D = R * R * (b + p)
    # bulk densities are piecewise linear between snapshots: break the rule there
    nodes, weights = _gauss_rule(dens.snap_times, t0 - 4 * R * R, t0 - R * R, npts)
    E = 0.0
    for t, w in zip(nodes, weights):
        b, p = dens.weighted(X0, t0, t)
        E += w * (b + p)
    return D, E


def renormalized_energies(traj: Trajectory, Z0, R_list, refine: bool = False,
                          npts: int = 4, densities=None) -> RenormEnergyCurve:
    """Sample D(R) and E(R) (the Gaussian-weighted, parabolically scaled energies).

    D is evaluated on the slice t0 - R^2, E over the slab t0 - 4R^2 < t < t0 - R^2.
    Requires R < sqrt(t0)/2 for every R so both are covered by the run.
    ``refine=True`` recomputes with the densities resampled (cubic) on a
    2x finer grid and twice as many time nodes, the self-refinement oracle.
    """
    g = traj.grid
    x0, t0 = _split_z0(Z0, g.m)
    R = np.asarray(sorted(float(r) for r in R_list))
    if R.size == 0 or R[0] <= 0:
        raise PreconditionError("radii must be positive")
    if R[-1] >= 0.5 * math.sqrt(t0):
        raise PreconditionError(f"need R < sqrt(t0)/2 = {0.5 * math.sqrt(t0):.6g}")
    _check_coverage(traj, t0 - 4 * R[-1] ** 2, t0 - R[0] ** 2, "renormalized energy")
    dens = densities or _Densities(traj, refine=refine)
    X0 = np.concatenate([x0, [0.0]])
    n = 2 * npts if refine else npts
    D, E = [], []
    for r in R:
        d, e = _renorm_single(dens, X0, t0, r, n)
        D.append(d)
        E.append(e)
    meta = {"truncation": TRUNCATION, "time_nodes_per_interval": n, "refined": refine,
            "grid": dens.grid.params(), "epsilon": traj.params.epsilon}
    return RenormEnergyCurve((tuple(x0), t0), R, np.array(D), np.array(E), meta)


def slice_energies(traj: Trajectory, Z0, R_list, refine: bool = False, densities=None):
    """D(R) alone, which only needs the slice t0 - R^2 and so allows R < sqrt(t0)."""
    g = traj.grid
    x0, t0 = _split_z0(Z0, g.m)
    R = np.asarray(sorted(float(r) for r in R_list))
    if R.size == 0 or R[0] <= 0:
        raise PreconditionError("radii must be positive")
    if R[-1] >= math.sqrt(t0):
        raise PreconditionError(f"need R < sqrt(t0) = {math.sqrt(t0):.6g}")
    _check_coverage(traj, t0 - R[-1] ** 2, t0 - R[0] ** 2, "slice energy")
    dens = densities or _Densities(traj, refine=refine)
    X0 = np.concatenate([x0, [0.0]])
    return R, np.array([r * r * sum(dens.weighted(X0, t0, t0 - r * r)) for r in R])


def monotonicity_violations(curve: RenormEnergyCurve, allowance: float = 0.05, floor: float = 0.0):
    """Pairs (r, R) with r < R where E(r) > (1 + allowance) E(R) + floor (same for D)."""
    bad = []
    for name, vals in (("D", curve.D_values), ("E", curve.E_values)):
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                if vals[i] > (1.0 + allowance) * vals[j] + floor:
                    bad.append((name, curve.R_values[i], curve.R_values[j], vals[i], vals[j]))
    return bad


def write_monotonicity_csv(curves, path):
    curves = list(curves)
    m = len(curves[0].Z0[0]) if curves else 1
    xcols = ["x0"] if m == 1 else [f"x0_{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t0"] + xcols + ["R", "D", "E"])
        for c in curves:
            x0, t0 = c.Z0
            for r, d, e in zip(c.R_values, c.D_values, c.E_values):
                w.writerow([format(t0, ".17g")] + [format(v, ".17g") for v in x0]
                           + [format(r, ".17g"), format(d, ".17g"), format(e, ".17g")])


# -- local energy inequality ------------------------------------------------------

def _time_derivative(traj):
    return np.gradient(traj.snapshots, traj.snap_times, axis=0)


def _ball(g, X0, R):
    X = np.stack(g.coords(), axis=-1)
    return np.sum((X - X0) ** 2, axis=-1) <= R * R * (1.0 + 1e-12)


def _series_integral(values, times, a, b, npts=2):
    nodes, weights = _gauss_rule(times, a, b, npts)
    return float(sum(w * _interp_series(values, times, t) for t, w in zip(nodes, weights)))


def local_energy_inequality_check(traj: Trajectory, Z0, R: float) -> dict:
    """lhs = int_{P_R^+} y^a |dU/dt|^2, rhs = R^-2 (bulk energy on P_2R^+ + potential on its base).

    The reported ``C = lhs / rhs`` is the empirical constant of the inequality.
    """
    g = traj.grid
    x0, t0 = _split_z0(Z0, g.m)
    if not 0 < R < 0.5 * math.sqrt(t0):
        raise PreconditionError("need 0 < R < sqrt(t0)/2")
    _check_coverage(traj, t0 - 4 * R * R, t0 + 4 * R * R, "local energy inequality")
    X0 = np.concatenate([x0, [0.0]])
    ball1 = _ball(g, X0, R)
    ball2 = _ball(g, X0, 2 * R)
    bball2 = ball2[..., 0]
    dU = _time_derivative(traj)
    st = traj.snap_times
    lhs_t = np.array([np.sum(g.mass * ball1 * np.sum(d * d, axis=-1)) for d in dU])
    grad_t = np.array([np.sum(g.mass * ball2 * np.sum(gradient(U, g) ** 2, axis=(-2, -1)))
                       for U in traj.snapshots])
    pot = gl_potential_density(traj.traces, traj.params, traj.target)
    pot_t = np.array([np.sum(g.wb * bball2 * p) for p in pot])
    lhs = _series_integral(lhs_t, st, t0 - R * R, t0 + R * R)
    bulk = _series_integral(grad_t, st, t0 - 4 * R * R, t0 + 4 * R * R)
    bnd = _series_integral(pot_t, traj.times, t0 - 4 * R * R, t0 + 4 * R * R)
    rhs = (bulk + bnd) / (R * R)
    C = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return {"Z0": (tuple(x0), t0), "R": R, "lhs": lhs, "rhs": rhs, "C": C,
            "bulk": bulk, "boundary": bnd}


# -- maximum principle, clearing-out, gradient estimates ---------------------------

def max_principle_check(traj: Trajectory) -> float:
    """Largest nodal |U| over the whole run (every step, from the ledger)."""
    return float(np.max(traj.ledger["max_abs_U"]))


def default_eps0_sq(traj: Trajectory) -> float:
    """Detector threshold eps0^2: 5% of the initial total energy."""
    return 0.05 * float(traj.ledger["total"][0])


def clearing_out_check(traj: Trajectory, Z0, eps0_sq=None, delta: float = 0.25,
                       R_ref=None) -> dict:
    """min |U| on P_delta^+(Z0) against 1/2, with E at the reference scale.

    The reference scale is R_ref = min(1, 0.99 sqrt(t0)/2) (the unit scale of
    the statement whenever the run is long enough).  ``consistent`` is False
    only if the bound fails while the measured energy is below the threshold.
    """
    g = traj.grid
    x0, t0 = _split_z0(Z0, g.m)
    eps0_sq = default_eps0_sq(traj) if eps0_sq is None else float(eps0_sq)
    if R_ref is None:
        R_ref = min(1.0, 0.99 * 0.5 * math.sqrt(t0))
    curve = renormalized_energies(traj, Z0, [R_ref])
    E_ref = float(curve.E_values[0])
    _check_coverage(traj, max(t0 - delta ** 2, 0.0), t0 + delta ** 2, "clearing-out")
    X0 = np.concatenate([x0, [0.0]])
    ball = _ball(g, X0, delta)
    sel = (traj.snap_times >= t0 - delta ** 2 - 1e-12) & (traj.snap_times <= t0 + delta ** 2 + 1e-12)
    fields = traj.snapshots[sel] if np.any(sel) else np.array(
        [_interp_series(traj.snapshots, traj.snap_times, t0)])
    r = np.linalg.norm(fields, axis=-1)
    min_abs = float(np.min(r[:, ball]))
    # boundary values are stored at every step: include them as well
    tsel = (traj.times >= t0 - delta ** 2 - 1e-12) & (traj.times <= t0 + delta ** 2 + 1e-12)
    bmask = ball[..., 0]
    if np.any(tsel):
        min_abs = min(min_abs, float(np.min(np.linalg.norm(traj.traces[tsel], axis=-1)[:, bmask])))
    passed = min_abs >= 0.5
    return {"Z0": (tuple(x0), t0), "passed": passed, "min_abs_U": min_abs, "E_ref": E_ref,
            "R_ref": R_ref, "eps0_sq": eps0_sq, "delta": delta,
            "consistent": bool(passed or E_ref >= eps0_sq)}


def gradient_estimate_check(traj: Trajectory, T0: float, audits=(), eps0_sq=None,
                            delta0: float = 0.25) -> dict:
    """sqrt(t) |grad u(., t)|_inf for t >= T0, plus scale-invariant audits.

    ``audits`` is a sequence of (Z0, R); for each with E(Z0, R) < eps0^2 the
    report holds R^2 sup |grad U|^2 and R^4 sup |dU/dt|^2 over P_{delta0 R}^+(Z0).
    """
    g = traj.grid
    if traj.times[-1] < T0:
        raise PreconditionError("trajectory does not reach T0")
    k0 = int(np.searchsorted(traj.times, T0 - 1e-12 * max(1.0, T0)))
    vals = np.array([math.sqrt(traj.times[k]) *
                     float(np.max(np.linalg.norm(trace_gradient(traj.traces[k], g), axis=(-2, -1))))
                     for k in range(k0, traj.times.size)])
    out = {"T0": T0, "times": traj.times[k0:], "scaled_gradient": vals,
           "sup": float(np.max(vals))}
    k4 = int(np.searchsorted(traj.times, 4 * T0 - 1e-12 * max(1.0, T0)))
    if k4 < traj.times.size:
        out["endpoint_ratio"] = float(vals[k4 - k0] / vals[0]) if vals[0] > 0 else 0.0
    eps0_sq = default_eps0_sq(traj) if eps0_sq is None else float(eps0_sq)
    rows = []
    dU = _time_derivative(traj) if audits else None
    for Z0, R in audits:
        x0, t0 = _split_z0(Z0, g.m)
        E = float(renormalized_energies(traj, Z0, [R]).E_values[0])
        row = {"Z0": (tuple(x0), t0), "R": R, "E": E, "small": E < eps0_sq}
        if E < eps0_sq:
            rho = delta0 * R
            ball = _ball(g, np.concatenate([x0, [0.0]]), rho)
            sel = (traj.snap_times >= t0 - rho ** 2 - 1e-12) & (traj.snap_times <= t0 + rho ** 2 + 1e-12)
            idx = np.nonzero(sel)[0]
            if idx.size == 0:
                idx = np.array([int(np.argmin(np.abs(traj.snap_times - t0)))])
            gsup = max(float(np.max(np.sum(gradient(traj.snapshots[i], g) ** 2, axis=(-2, -1))[ball]))
                       for i in idx)
            tsup = max(float(np.max(np.sum(dU[i] ** 2, axis=-1)[ball])) for i in idx)
            row["R2_grad_sq"] = R * R * gsup
            row["R4_dt_sq"] = R ** 4 * tsup
        rows.append(row)
    out["audits"] = rows
    out["eps0_sq"] = eps0_sq
    out["delta0"] = delta0
    return out


# -- singular set ----------------------------------------------------------------------

@dataclass
class SingularSetReport:
    eps0_sq: float
    R: float
    points: list                      # (x0 tuple, t0, energy, flagged)
    eps_used: list
    meta: dict = field(default_factory=dict)

    @property
    def flagged(self):
        return [p for p in self.points if p[3]]

    def __post_init__(self):
        for x0, t0, e, f in self.points:
            if f and not e >= self.eps0_sq:
                raise PreconditionError("flagged point below threshold")


def singular_set_scan(trajs, R: float, t0_list, x0_list=None, eps0_sq=None) -> SingularSetReport:
    """Flag boundary points whose renormalized energy E(Z0, R) reaches eps0^2.

    With several runs (different epsilon, same grid) the minimum over runs
    stands in for the liminf as epsilon -> 0.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    trajs = list(trajs)
    g = trajs[0].grid
    if eps0_sq is None:
        eps0_sq = default_eps0_sq(trajs[0])
    t0_list = [float(t) for t in t0_list]
    if min(t0_list) <= 4 * R * R:
        raise PreconditionError("need R < sqrt(t0)/2 for every scanned t0")
    if x0_list is None:
        x0_list = [(x,) for x in g.x[::4]] if g.m == 1 else [
            (a, b) for a in g.x[::4] for b in g.x[::4]]
    dens = [_Densities(tr) for tr in trajs]
    pts = []
    for t0 in t0_list:
        for x0 in x0_list:
            x0 = tuple(np.atleast_1d(np.asarray(x0, dtype=float)))
            e = min(float(renormalized_energies(tr, (x0, t0), [R], densities=d).E_values[0])
                    for tr, d in zip(trajs, dens))
            pts.append((x0, t0, e, bool(e >= eps0_sq)))
    return SingularSetReport(float(eps0_sq), float(R), pts, [tr.params.epsilon for tr in trajs],
                             {"grid": g.params()})


def write_scan_csv(report: SingularSetReport, path):
    m = len(report.points[0][0]) if report.points else 1
    xcols = ["x0"] if m == 1 else [f"x0_{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t0"] + xcols + ["R", "energy", "flagged"])
        for x0, t0, e, f in report.points:
            w.writerow([format(t0, ".17g")] + [format(v, ".17g") for v in x0]
                       + [format(report.R, ".17g"), format(e, ".17g"), int(f)])


# -- polar decomposition -----------------------------------------------------------------

def _second_derivative(f, coords, axis):
    """Three-point second derivative on a (possibly nonuniform) axis, interior nodes only."""
    h = np.diff(coords)
    hm = h[:-1]
    hp = h[1:]
    shape = [1] * f.ndim
    shape[axis] = hm.size
    hm = hm.reshape(shape)
    hp = hp.reshape(shape)
    n = f.shape[axis]
    fm = np.take(f, range(0, n - 2), axis=axis)
    f0 = np.take(f, range(1, n - 1), axis=axis)
    fp = np.take(f, range(2, n), axis=axis)
    return 2.0 * (hm * fp - (hm + hp) * f0 + hp * fm) / (hm * hp * (hm + hp))


def _laplacian_interior(f, axes):
    out = 0.0
    for ax, c in enumerate(axes):
        d2 = _second_derivative(f, c, ax)
        sl = tuple(slice(None) if k == ax else slice(1, -1) for k in range(len(axes)))
        out = out + d2[sl]
    return out


def _interior(a, m):
    sl = tuple([slice(1, -1)] * (m + 1))
    return a[sl]


def polar_residuals(traj: Trajectory, index: int):
    """L^2 residuals of the polar equations for rho = |U|, omega = U/rho at a stored snapshot.

    Residuals of  d_t rho - Lap rho + |grad omega|^2 rho  and of
    d_t omega - Lap omega - 2 (grad rho / rho) . grad omega - |grad omega|^2 omega
    on interior nodes; d_t by centered snapshot differences.
    """
    g = traj.grid
    U = traj.snapshots[index]
    rho = np.linalg.norm(U, axis=-1)
    if np.min(rho) < 0.5:
        node = np.unravel_index(int(np.argmin(rho)), rho.shape)
        raise HypothesisViolation(f"|U| = {float(rho[node]):.4g} < 1/2 at node {node}", node=node)
    dts = traj.snap_times
    dU = np.gradient(traj.snapshots, dts, axis=0)[index] if dts.size > 1 else np.zeros_like(U)
    om = U / rho[..., None]
    r_t = np.sum(om * dU, axis=-1)                # d_t rho
    om_t = (dU - r_t[..., None] * om) / rho[..., None]
    axes = [g.x] * g.m + [g.y]
    lap_r = _laplacian_interior(rho, axes)
    lap_o = _laplacian_interior(om, axes)
    grad_r = np.stack([np.gradient(rho, c, axis=ax) for ax, c in enumerate(axes)], axis=-1)
    grad_o = np.stack([np.gradient(om, c, axis=ax) for ax, c in enumerate(axes)], axis=-2)
    go2 = np.sum(grad_o ** 2, axis=(-2, -1))
    res_r = _interior(r_t, g.m) - lap_r + _interior(go2 * rho, g.m)
    coupling = np.einsum("...d,...dk->...k", grad_r / rho[..., None], grad_o)
    res_o = (_interior(om_t, g.m) - lap_o - 2.0 * _interior(coupling, g.m)
             - _interior(go2[..., None] * om, g.m))
    w = _interior(g.mass, g.m)
    return (math.sqrt(float(np.sum(w * res_r ** 2))),
            math.sqrt(float(np.sum(w[..., None] * res_o ** 2))))


# -- Gaussian comparison ------------------------------------------------------------------

def gaussian_comparison(traj: Trajectory, Z0, Z1_list, eps1: float, R: float = 1.0) -> dict:
    """Empirical constant in E(Z1, R/2) <= C (E(Z0, R) + eps1 E0) over the given Z1.

    Z1 = (X1, t1) may lie inside the half-space (X1 has m + 1 components).
    """
    g = traj.grid
    x0, t0 = _split_z0(Z0, g.m)
    E0 = 2.0 * float(traj.ledger["dirichlet"][0])
    base = float(renormalized_energies(traj, Z0, [R]).E_values[0])
    dens = _Densities(traj)
    vals = []
    for X1, t1 in Z1_list:
        X1 = np.atleast_1d(np.asarray(X1, dtype=float))
        if X1.size == g.m:
            X1 = np.concatenate([X1, [0.0]])
        r = 0.5 * R
        if r >= 0.5 * math.sqrt(t1):
            raise PreconditionError("need R/2 < sqrt(t1)/2")
        _check_coverage(traj, t1 - 4 * r * r, t1 - r * r, "gaussian comparison")
        _, e1 = _renorm_single(dens, X1, t1, r, 4)
        vals.append(e1)
    denom = base + eps1 * E0
    C = max(vals) / denom if denom > 0 else (0.0 if max(vals) == 0 else math.inf)
    return {"E_Z0": base, "E_Z1": vals, "E0": E0, "eps1": eps1, "C": C}
