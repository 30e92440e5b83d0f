"""Time integration of the extended Ginzburg-Landau system.

Semi-discrete model: with the lumped weighted mass ``M = grid.mass`` and the
discrete energy

    E(U) = 1/2 sum_edges C_e |U_p - U_q|^2 + sum_boundary wb P(u),

the flow is the weighted gradient flow ``M dU/dt = -grad E(U)``.  Inside the
half-space this is the divergence-form equation y^a dU/dt = div(y^a grad U);
on y = 0 the half-cell balance carries the penalty flux, i.e. the discrete
form of ``lim y^a dU/dy = -force`` (``force = -grad P``).

Two schemes share this structure: forward Euler under a CFL bound that also
guarantees the discrete maximum principle, and minimizing movements, where
every step minimizes ``||U - U_prev||_M^2 / (2 tau) + E(U)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate

from . import stencil
from .errors import DomainError, PreconditionError, SolverError
from .extension import frac_op_via_extension, harmonic_extend, orthogonality_residual
from .grid import (HalfSpaceGrid, build_grid, check_field, integrate_boundary, read_snapshot,
                   write_snapshot)
from .manifold import (SPHERE, PenaltyParams, TargetManifold, gl_boundary_force,
                       gl_potential_density, make_target)

LEDGER_COLUMNS = ("step", "t", "dirichlet", "potential", "total",
                  "dissipation_increment", "max_abs_U", "trace_min_abs_u")


# -- initial traces ------------------------------------------------------------

def initial_trace(name: str, g: HalfSpaceGrid, ell: int = 2, amplitude: float = 1.0,
                  width: float = 1.0, direction=None):
    """Named on-manifold traces for the sphere (ell = 2 unless ``constant``).

    ``constant``: the unit vector ``direction`` (default e_1) everywhere.
    ``rotation_bump``: angle amplitude * exp(-|x|^2 / width^2).
    ``compressed_winding``: angle pi (1 + tanh(x_1 / width)), a half-turn
    compressed into a layer of size ``width``.
    ``cosine``: angle amplitude * cos(x_1), smooth and periodic-compatible.
    """
    X = g.trace_coords()
    r2 = sum(x * x for x in X)
    if name == "constant":
        p = np.zeros(ell)
        p[0] = 1.0
        if direction is not None:
            p = np.asarray(direction, dtype=float)
            if p.shape != (ell,):
                raise DomainError("direction must have ell components")
        return np.broadcast_to(p, g.trace_shape + (ell,)).copy()
    if ell != 2:
        raise DomainError(f"initial trace {name!r} is defined for ell = 2")
    if name == "rotation_bump":
        phi = amplitude * np.exp(-r2 / width ** 2)
    elif name == "compressed_winding":
        phi = math.pi * (1.0 + np.tanh(X[0] / width))
    elif name == "cosine":
        phi = amplitude * np.cos(X[0])
    else:
        raise DomainError(f"unknown initial trace {name!r}")
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


# -- states and trajectories ---------------------------------------------------

@dataclass
class FlowState:
    t: float
    U: np.ndarray
    params: PenaltyParams
    step_index: int = 0

    @property
    def trace(self):
        return self.U[..., 0, :]


@dataclass
class Trajectory:
    grid: HalfSpaceGrid
    target: TargetManifold
    params: PenaltyParams
    scheme: str
    dt: float
    times: np.ndarray                 # every step, including t = 0
    traces: np.ndarray                # (nsteps + 1,) + trace_shape + (ell,)
    ledger: dict                      # column -> array, one row per stored time
    snap_steps: np.ndarray            # step indices of stored full fields
    snapshots: np.ndarray             # (nsnap,) + grid.shape + (ell,)
    meta: dict = field(default_factory=dict)

    @property
    def snap_times(self):
        return self.times[self.snap_steps]

    @property
    def states(self):
        return [FlowState(float(self.times[k]), U, self.params, int(k))
                for k, U in zip(self.snap_steps, self.snapshots)]

    @property
    def epsilon(self):
        return self.params.epsilon

    def state(self, i: int) -> FlowState:
        return FlowState(float(self.times[self.snap_steps[i]]), self.snapshots[i],
                         self.params, int(self.snap_steps[i]))


@dataclass
class FlowProblem:
    grid: HalfSpaceGrid
    target: TargetManifold
    penalty: PenaltyParams
    u0: np.ndarray
    scheme: str = "implicit"
    dt: float = 1e-3
    T_final: float = 0.1
    stride: int = 10
    mm_tol: float = 1e-8
    mm_maxiter: int = 5000
    U0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.scheme not in ("implicit", "explicit"):
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.T_final >= 0):
            raise DomainError("dt must be positive and T_final non-negative")
        if self.stride < 1:
            raise DomainError("stride must be >= 1")


# -- energy ----------------------------------------------------------------------

def potential_energy(u, params: PenaltyParams, target: TargetManifold, g: HalfSpaceGrid) -> float:
    return integrate_boundary(gl_potential_density(u, params, target), g)


def discrete_energy(U, params: PenaltyParams, target: TargetManifold, g: HalfSpaceGrid):
    """(dirichlet, potential, total) with dirichlet = 1/2 int y^a |grad U|^2."""
    dirichlet = stencil.dirichlet_half(U, g)
    potential = potential_energy(U[..., 0, :], params, target, g)
    return dirichlet, potential, dirichlet + potential


def energy_gradient(U, params, target, g):
    """Return ``(grad E, E)`` in the Euclidean node pairing."""
    KU, dirichlet = stencil.stiffness_action(U, g)
    u = U[..., 0, :]
    pot = integrate_boundary(gl_potential_density(u, params, target), g)
    KU[..., 0, :] -= g.wb[..., None] * gl_boundary_force(u, params, target)
    return KU, dirichlet + pot


def _penalty_stiffness(params, target):
    """Bound on the u-derivative of the force, in units of c_s / eps^2."""
    lip = 1.0 if target.kind == SPHERE else 4.0
    return lip * params.c_s / params.epsilon ** 2


def cfl_bound(g: HalfSpaceGrid, params: PenaltyParams, target: TargetManifold) -> float:
    """Largest explicit step for which every update is a sub-convex combination.

    dt <= min_i M_i / (sum_j C_ij + 2 b_i) with b_i the penalty stiffness of a
    boundary node.  For s = 1/2 and dx = dy = h away from y = 0 this is the
    familiar h^2 / 4; the extra boundary term makes the discrete maximum
    principle hold exactly.
    """
    denom = stencil.stiffness_diagonal(g).copy()
    denom[..., 0] += 2.0 * g.wb * _penalty_stiffness(params, target)
    return float(np.min(g.mass / denom))


# -- steps -------------------------------------------------------------------------

def explicit_step(state: FlowState, dt: float, g: HalfSpaceGrid, target: TargetManifold,
                  check_cfl: bool = True) -> FlowState:
    if check_cfl:
        bound = cfl_bound(g, state.params, target)
        if dt > bound * (1.0 + 1e-12):
            raise PreconditionError(f"dt = {dt:.6g} exceeds the CFL bound {bound:.6g}")
    grad, _ = energy_gradient(state.U, state.params, target, g)
    U = state.U - dt * grad / g.mass[..., None]
    return FlowState(state.t + dt, U, state.params, state.step_index + 1)


def _mm_preconditioner(g, params, target, diagK, tau, u):
    P = g.mass / tau + diagK
    stiff = params.c_s / params.epsilon ** 2
    if target.kind == SPHERE:
        curv = np.maximum(3.0 * np.sum(u * u, axis=-1) - 1.0, 0.0)
    else:
        curv = 4.0 * np.ones(g.trace_shape)
    P = P.copy()
    P[..., 0] += g.wb * stiff * curv
    return P[..., None]


if stencil._HAVE_NUMBA:
    import numba

    @numba.njit(cache=True)
    def _mm_sphere_m1(Up, U0, start_decrease, cx, cy, mass, wb, diagK, tau, coef, tol, maxiter,
                      floor):
        """Fused minimizing-movement solve for m = 1 and the sphere target.

        Same iteration as the numpy path: diagonal preconditioner, Armijo
        backtracking on the exact increment of F.  Returns
        (U, iterations, relative gradient, total decrease, status) with
        status 0 = converged, 1 = iteration cap, 2 = no descent.
        """
        nx, ny, ell = Up.shape
        U = Up.copy()
        G = np.empty_like(U)
        d = np.empty_like(U)
        q = 0.25 * coef

        def grad(U, G):
            G[:] = 0.0
            for i in range(nx - 1):
                for j in range(ny):
                    c = cx[i, j]
                    for k in range(ell):
                        f = c * (U[i + 1, j, k] - U[i, j, k])
                        G[i, j, k] -= f
                        G[i + 1, j, k] += f
            for i in range(nx):
                for j in range(ny - 1):
                    c = cy[i, j]
                    for k in range(ell):
                        f = c * (U[i, j + 1, k] - U[i, j, k])
                        G[i, j, k] -= f
                        G[i, j + 1, k] += f
            for i in range(nx):
                r2 = 0.0
                for k in range(ell):
                    r2 += U[i, 0, k] * U[i, 0, k]
                w = 1.0 - r2
                for k in range(ell):
                    G[i, 0, k] -= wb[i] * coef * w * U[i, 0, k]
            gn = 0.0
            for i in range(nx):
                for j in range(ny):
                    mi = mass[i, j] / tau
                    for k in range(ell):
                        G[i, j, k] += mi * (U[i, j, k] - Up[i, j, k])
                        gn += G[i, j, k] * G[i, j, k] / mass[i, j]
            return np.sqrt(gn)

        gnorm = grad(U, G)
        scale = max(gnorm, 1e-300)
        stop = max(tol * scale, floor)
        it = 0
        decrease = 0.0
        if gnorm > stop and start_decrease > 0.0:
            U[:] = U0
            decrease = start_decrease
            gnorm = grad(U, G)
        while gnorm > stop:
            if it >= maxiter:
                return U, it, gnorm / scale, decrease, 1
            slope = 0.0
            for i in range(nx):
                for j in range(ny):
                    P = mass[i, j] / tau + diagK[i, j]
                    if j == 0:
                        r2 = 0.0
                        for k in range(ell):
                            r2 += U[i, 0, k] * U[i, 0, k]
                        P += wb[i] * coef * max(3.0 * r2 - 1.0, 0.0)
                    for k in range(ell):
                        d[i, j, k] = -G[i, j, k] / P
                        slope += G[i, j, k] * d[i, j, k]
            # quadratic part: lin = <M (U - Up)/tau + K U, d>, curv = <M d, d>/tau + d.K d
            lin = 0.0
            curv = 0.0
            for i in range(nx):
                for j in range(ny):
                    mi = mass[i, j] / tau
                    for k in range(ell):
                        lin += mi * (U[i, j, k] - Up[i, j, k]) * d[i, j, k]
                        curv += mi * d[i, j, k] * d[i, j, k]
            for i in range(nx - 1):
                for j in range(ny):
                    c = cx[i, j]
                    for k in range(ell):
                        lin += c * (U[i + 1, j, k] - U[i, j, k]) * (d[i + 1, j, k] - d[i, j, k])
                        dd = d[i + 1, j, k] - d[i, j, k]
                        curv += c * dd * dd
            for i in range(nx):
                for j in range(ny - 1):
                    c = cy[i, j]
                    for k in range(ell):
                        lin += c * (U[i, j + 1, k] - U[i, j, k]) * (d[i, j + 1, k] - d[i, j, k])
                        dd = d[i, j + 1, k] - d[i, j, k]
                        curv += c * dd * dd
            alpha = 1.0
            dF = 0.0
            while True:
                dpot = 0.0
                for i in range(nx):
                    w = 1.0
                    ud = 0.0
                    dd = 0.0
                    for k in range(ell):
                        w -= U[i, 0, k] * U[i, 0, k]
                        ud += U[i, 0, k] * d[i, 0, k]
                        dd += d[i, 0, k] * d[i, 0, k]
                    dw = -(2.0 * alpha * ud + alpha * alpha * dd)
                    dpot += wb[i] * dw * (2.0 * w + dw)
                dF = alpha * lin + 0.5 * alpha * alpha * curv + q * dpot
                if dF <= 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
                if alpha < 1e-14:
                    break
            if not dF < 0.0:
                return U, it, gnorm / scale, decrease, 2
            for i in range(nx):
                for j in range(ny):
                    for k in range(ell):
                        U[i, j, k] += alpha * d[i, j, k]
            decrease -= dF
            gnorm = grad(U, G)
            it += 1
        return U, it, gnorm / scale, decrease, 0


def _potential_increment(u, du, params, target, g):
    """sum wb (P(u + du) - P(u)), arranged to avoid cancellation for small du."""
    if target.kind == SPHERE:
        w = 1.0 - np.sum(u * u, axis=-1)
        dw = -(2.0 * np.sum(u * du, axis=-1) + np.sum(du * du, axis=-1))
        return params.c_s / (4.0 * params.epsilon ** 2) * float(np.sum(g.wb * dw * (2.0 * w + dw)))
    return float(np.sum(g.wb * (gl_potential_density(u + du, params, target)
                                - gl_potential_density(u, params, target))))


def _start_decrease(Up, U0, tau, params, target, g):
    """F(U_prev) - F(U0), evaluated as an increment so it is free of cancellation."""
    D = U0 - Up
    KU, _ = stencil.stiffness_action(Up, g)
    _, dKd2 = stencil.stiffness_action(D, g)
    dF = (0.5 / tau * float(np.sum(g.mass[..., None] * D * D)) + float(np.sum(KU * D)) + dKd2
          + _potential_increment(Up[..., 0, :], D[..., 0, :], params, target, g))
    return -dF


def minimizing_movement_step(state: FlowState, tau: float, g: HalfSpaceGrid,
                             target: TargetManifold, tol: float = 1e-8,
                             maxiter: int = 5000, diagK=None, return_info: bool = False,
                             guess=None):
    """One minimizing-movement step by preconditioned descent with Armijo backtracking.

    The iteration starts at U_prev and only accepts steps that decrease
    F(U) = ||U - U_prev||_M^2 / (2 tau) + E(U), so the returned field satisfies
    F(U) <= F(U_prev) = E(U_prev): the discrete energy inequality holds
    whatever the stopping point.  Decreases are evaluated as increments
    (exact quadratic expansion plus a cancellation-free potential
    difference), which keeps the line search meaningful far below the
    rounding level of F itself.

    ``guess`` (e.g. a linear extrapolation from the previous steps) is used
    as the starting point only if it already lowers F below F(U_prev).
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    params = state.params
    Up = state.U
    M = g.mass[..., None]
    if diagK is None:
        diagK = stencil.stiffness_diagonal(g)

    def gradient(U):
        grad, _ = energy_gradient(U, params, target, g)
        return grad + M * (U - Up) / tau

    start = 0.0
    if guess is not None:
        guess = np.ascontiguousarray(guess, dtype=float)
        start = _start_decrease(Up, guess, tau, params, target, g)
    if not start > 0.0:
        guess = Up
        start = 0.0

    # rounding level of the gradient: M (U - U_prev) / tau cannot be resolved below it
    floor = 1e-13 * math.sqrt(float(np.sum(M * Up * Up))) / tau

    if (stencil.get_backend() == "numba" and g.m == 1 and target.kind == SPHERE):
        U, it, rel, decrease, status = _mm_sphere_m1(
            np.ascontiguousarray(Up, dtype=float), guess, start, g.cx[0], g.cy, g.mass, g.wb, diagK,
            float(tau), params.c_s / params.epsilon ** 2, float(tol), int(maxiter), floor)
        if status == 1:
            raise SolverError(f"minimizing movement did not converge in {maxiter} iterations",
                              residual=rel)
        if status == 2:
            raise SolverError("minimizing movement line search found no descent", residual=rel)
        out = FlowState(state.t + tau, U, params, state.step_index + 1)
        if return_info:
            F = discrete_energy(Up, params, target, g)[2] - decrease
            return out, {"iterations": it, "relative_gradient": rel, "F": F}
        return out

    U = Up.copy()
    G = gradient(U)
    # relative tolerance measured in the M^-1 norm against the initial gradient
    gnorm0 = math.sqrt(float(np.sum(G * G / M)))
    scale = max(gnorm0, 1e-300)
    it = 0
    stop = max(tol * scale, floor)
    gnorm = gnorm0
    decrease = 0.0
    if gnorm > stop and start > 0.0:
        U = guess.copy()
        decrease = start
        G = gradient(U)
        gnorm = math.sqrt(float(np.sum(G * G / M)))
    while gnorm > stop:
        if it >= maxiter:
            raise SolverError(f"minimizing movement did not converge in {maxiter} iterations",
                              residual=gnorm / scale)
        P = _mm_preconditioner(g, params, target, diagK, tau, U[..., 0, :])
        d = -G / P
        slope = float(np.sum(G * d))
        KU, _ = stencil.stiffness_action(U, g)
        Kd, dKd2 = stencil.stiffness_action(d, g)
        lin = float(np.sum((M * (U - Up) / tau + KU) * d))
        curv = float(np.sum(M * d * d)) / tau + 2.0 * dKd2
        u, du = U[..., 0, :], d[..., 0, :]
        if target.kind != SPHERE:
            # the generic potential increment is a plain difference of densities; once the
            # predicted descent is below its rounding resolution no further progress is
            # measurable, so the current iterate is accepted as converged
            resolution = 64.0 * np.finfo(float).eps * (
                potential_energy(u, params, target, g) + abs(lin) + curv)
            if -slope <= resolution:
                break
        alpha = 1.0
        while True:
            dF = alpha * lin + 0.5 * alpha * alpha * curv + _potential_increment(u, alpha * du, params, target, g)
            if dF <= 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-14:
                break
        if not dF < 0.0:
            raise SolverError("minimizing movement line search found no descent",
                              residual=gnorm / scale)
        U = U + alpha * d
        decrease -= dF
        G = gradient(U)
        gnorm = math.sqrt(float(np.sum(G * G / M)))
        it += 1
    F = discrete_energy(Up, params, target, g)[2] - decrease
    out = FlowState(state.t + tau, U, params, state.step_index + 1)
    if return_info:
        return out, {"iterations": it, "relative_gradient": gnorm / scale, "F": F}
    return out


# -- driver --------------------------------------------------------------------------

def _ledger_row(step, t, U, params, target, g, dissip):
    d, p, tot = discrete_energy(U, params, target, g)
    return (step, t, d, p, tot, dissip,
            float(np.max(np.linalg.norm(U, axis=-1))),
            float(np.min(np.linalg.norm(U[..., 0, :], axis=-1))))


def run_flow(problem: FlowProblem) -> Trajectory:
    g, target, params = problem.grid, problem.target, problem.penalty
    u0 = np.asarray(problem.u0, dtype=float)
    if u0.shape[-1] != target.ambient_dim:
        raise DomainError("initial trace does not live in the target's ambient space")
    U = harmonic_extend(u0, g) if problem.U0 is None else check_field(problem.U0, g).copy()
    dt = problem.dt
    nsteps = int(round(problem.T_final / dt))
    if problem.scheme == "explicit":
        bound = cfl_bound(g, params, target)
        if dt > bound * (1.0 + 1e-12):
            raise PreconditionError(f"dt = {dt:.6g} exceeds the CFL bound {bound:.6g}")
    diagK = stencil.stiffness_diagonal(g)

    times = dt * np.arange(nsteps + 1)
    traces = np.empty((nsteps + 1,) + U[..., 0, :].shape)
    rows = []
    snap_steps, snaps = [], []
    state = FlowState(0.0, U, params, 0)
    traces[0] = U[..., 0, :]
    rows.append(_ledger_row(0, 0.0, U, params, target, g, 0.0))
    snap_steps.append(0)
    snaps.append(U.copy())
    M = g.mass[..., None]
    max_iters = 0
    prev_U = None
    for k in range(1, nsteps + 1):
        if problem.scheme == "explicit":
            new = explicit_step(state, dt, g, target, check_cfl=False)
        else:
            guess = 2.0 * state.U - prev_U if prev_U is not None else None
            new, info = minimizing_movement_step(state, dt, g, target, tol=problem.mm_tol,
                                                 maxiter=problem.mm_maxiter, diagK=diagK,
                                                 return_info=True, guess=guess)
            prev_U = state.U
            max_iters = max(max_iters, info["iterations"])
        new = FlowState(times[k], new.U, params, k)
        D = new.U - state.U
        dissip = 0.5 / dt * float(np.sum(M * D * D))
        rows.append(_ledger_row(k, times[k], new.U, params, target, g, dissip))
        traces[k] = new.U[..., 0, :]
        if k % problem.stride == 0 or k == nsteps:
            snap_steps.append(k)
            snaps.append(new.U.copy())
        state = new
    cols = list(zip(*rows))
    ledger = {name: np.asarray(col, dtype=float) for name, col in zip(LEDGER_COLUMNS, cols)}
    ledger["step"] = ledger["step"].astype(int)
    meta = {"scheme": problem.scheme, "dt": dt, "T_final": problem.T_final,
            "stride": problem.stride, "epsilon": params.epsilon, "s": params.s,
            "grid": g.params(), "target": target.name}
    if problem.scheme == "implicit":
        meta["max_inner_iterations"] = max_iters
    else:
        meta["cfl_bound"] = cfl_bound(g, params, target)
    return Trajectory(g, target, params, problem.scheme, dt, times, traces, ledger,
                      np.asarray(snap_steps), np.asarray(snaps), meta)


def write_ledger_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        n = len(traj.ledger["step"])
        for i in range(n):
            row = [str(int(traj.ledger["step"][i]))]
            row += [format(float(traj.ledger[c][i]), ".17g") for c in LEDGER_COLUMNS[1:]]
            w.writerow(row)


def save_trajectory(traj: Trajectory, directory):
    """Store a trajectory as plain files: ledger CSV, snapshot binaries, trace history.

    Every file is written deterministically, so identical runs give identical bytes.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ledger_csv(traj, d / "ledger.csv")
    for k, U in zip(traj.snap_steps, traj.snapshots):
        write_snapshot(d / f"snap_{int(k):06d}.bin", U, traj.grid, float(traj.times[k]),
                       traj.epsilon)
    with open(d / "traces.bin", "wb") as fh:
        fh.write(np.ascontiguousarray(traj.traces, dtype="<f8").tobytes())
    info = {"meta": traj.meta, "grid": traj.grid.params(), "target": traj.target.name,
            "ell": traj.target.ambient_dim, "epsilon": traj.epsilon, "s": traj.params.s,
            "scheme": traj.scheme, "dt": traj.dt, "nsteps": len(traj.times) - 1,
            "snap_steps": [int(k) for k in traj.snap_steps]}
    with open(d / "trajectory.json", "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(directory) -> Trajectory:
    d = Path(directory)
    with open(d / "trajectory.json") as fh:
        info = json.load(fh)
    gp = info["grid"]
    g = build_grid(m=gp["m"], nx=gp["nx"], ny=gp["ny"], Lx=gp["Lx"], Ly=gp["Ly"], s=gp["s"],
                   grading=gp["grading"])
    name = info["target"]
    target = make_target("torus" if name == "T^2" else "sphere", info["ell"])
    params = PenaltyParams(info["epsilon"], info["s"])
    nsteps = info["nsteps"]
    times = info["dt"] * np.arange(nsteps + 1)
    raw = np.fromfile(d / "traces.bin", dtype="<f8")
    traces = raw.reshape((nsteps + 1,) + g.trace_shape + (info["ell"],)).astype(float)
    steps = np.asarray(info["snap_steps"], dtype=int)
    snaps = np.array([read_snapshot(d / f"snap_{int(k):06d}.bin")[1] for k in steps])
    led = read_ledger_csv(d / "ledger.csv")
    led["step"] = led["step"].astype(int)
    return Trajectory(g, target, params, info["scheme"], info["dt"], times, traces, led,
                      steps, snaps, info["meta"])


def read_ledger_csv(path) -> dict:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in LEDGER_COLUMNS}


# -- epsilon continuation ----------------------------------------------------------

def trace_potential_integral(u, g: HalfSpaceGrid) -> float:
    """int (1 - |u|^2)^2 dx over the boundary."""
    w = 1.0 - np.sum(u * u, axis=-1)
    return integrate_boundary(w * w, g)


def _trace_distance(ta: Trajectory, tb: Trajectory, t_end: float) -> float:
    """L^2 distance of the traces over [0, t_end] on the shared grid (trapezoid in t)."""
    if ta.grid is not tb.grid and ta.grid.params() != tb.grid.params():
        raise PreconditionError("continuation runs must share their grid")
    ka = np.searchsorted(ta.times, t_end + 1e-12 * max(1.0, t_end))
    kb = np.searchsorted(tb.times, t_end + 1e-12 * max(1.0, t_end))
    if not np.allclose(ta.times[:ka], tb.times[:kb]) or ka != kb:
        raise PreconditionError("continuation runs must share their time grid")
    d2 = np.array([integrate_boundary(np.sum((a - b) ** 2, axis=-1), ta.grid)
                   for a, b in zip(ta.traces[:ka], tb.traces[:kb])])
    if ka == 1:
        return math.sqrt(d2[0])
    return math.sqrt(float(integrate.trapezoid(d2, ta.times[:ka])))


def epsilon_continuation(problem: FlowProblem, eps_list, t_eval: Optional[float] = None):
    """Run the flow for each epsilon and compare (see the report keys)."""
    eps_list = [float(e) for e in eps_list]
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise PreconditionError("eps_list must be non-increasing")
    trajs = [run_flow(replace(problem, penalty=PenaltyParams(epsilon=e, s=problem.penalty.s)))
             for e in eps_list]
    g = problem.grid
    t_eval = problem.T_final if t_eval is None else t_eval
    k_eval = int(round(t_eval / problem.dt))
    pot = [trace_potential_integral(tr.traces[k_eval], g) for tr in trajs]
    scaled = [tr.params.c_s / e ** 2 * p for tr, e, p in zip(trajs, eps_list, pot)]
    dists = [_trace_distance(a, b, t_eval) for a, b in zip(trajs, trajs[1:])]
    ortho = []
    for tr in trajs:
        U = tr.snapshots[-1]
        u = U[..., 0, :]
        try:
            ortho.append(orthogonality_residual(u, frac_op_via_extension(U, g), g))
        except PreconditionError:
            ortho.append(float("nan"))
    slope = float("nan")
    good = [(e, p) for e, p in zip(eps_list, pot) if p > 0]
    if len(good) >= 2 and len({e for e, _ in good}) >= 2:
        le = np.log([e for e, _ in good])
        lp = np.log([p for _, p in good])
        slope = float(np.polyfit(le, lp, 1)[0])
    return {
        "eps": eps_list,
        "t_eval": t_eval,
        "potential_integral": pot,
        "scaled_potential": scaled,
        "potential_slope": slope,
        "trace_distances": dists,
        "orthogonality_residual": ortho,
        "trajectories": trajs,
    }
