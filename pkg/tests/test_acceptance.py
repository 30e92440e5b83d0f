"""Acceptance criteria 1-10 at desk scale (m = 1, ell = 2).

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (collected again in the
terminal summary) and then asserts the criterion.
"""

import math
import time

import numpy as np
import pytest

from halfflow import diagnostics as D
from halfflow import flow as F
from halfflow import greenlab as GL
from halfflow.extension import (dirichlet_energy, frac_op_via_extension, frac_op_via_kernel,
                                harmonic_extend)
from halfflow.grid import build_grid
from halfflow.manifold import PenaltyParams, unit_sphere

from conftest import record_acceptance
from oracles import explicit_step_dense, hs_norm_sq, mm_step_bfgs

S1 = unit_sphere(2)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def long_implicit():
    g = build_grid(nx=33, ny=17, Lx=4.0, Ly=4.0)
    u0 = F.initial_trace("rotation_bump", g, amplitude=1.0)
    return F.run_flow(F.FlowProblem(g, S1, PenaltyParams(0.2), u0, dt=1e-3, T_final=10.0,
                                    stride=1000))


def test_criterion_01_fractional_operator_spectral():
    t0 = time.perf_counter()
    g = build_grid(nx=257, ny=129, Lx=4 * math.pi, Ly=10.0)
    worst_ext = worst_ker = worst_agree = 0.0
    for k in (1, 2):
        u0 = np.zeros(g.trace_shape + (2,))
        u0[..., 0] = np.cos(k * g.x)
        exact = k * u0[..., 0]
        w_ext = frac_op_via_extension(harmonic_extend(u0, g), g)[..., 0]
        times = np.linspace(0.0, 1.0, 21)
        w_ker = frac_op_via_kernel(times, np.repeat(u0[None], times.size, 0), 1.0, g)[..., 0]
        worst_ext = max(worst_ext, _rel(w_ext, exact))
        worst_ker = max(worst_ker, _rel(w_ker, exact))
        worst_agree = max(worst_agree, _rel(w_ext, w_ker))
    elapsed = time.perf_counter() - t0
    ok = worst_ext < 0.03 and worst_ker < 0.03 and worst_agree < 0.05 and elapsed < 30
    record_acceptance(1, "fractional operator on cos(kx)", ok,
                      f"ext {worst_ext:.2e} kernel {worst_ker:.2e} agree {worst_agree:.2e} "
                      f"time {elapsed:.1f}s")
    assert ok


def test_criterion_02_extension_isometry():
    g = build_grid(nx=257, ny=129, Lx=12.0, Ly=12.0)
    errs = []
    for f in (lambda x: x * np.exp(-x * x), lambda x: (1 - 2 * x * x) * np.exp(-x * x)):
        U = harmonic_extend(np.stack([f(g.x), 0 * g.x], -1), g)
        errs.append(abs(dirichlet_energy(U, g) / hs_norm_sq(f, 0.5) - 1))
    ok = max(errs) < 0.03
    record_acceptance(2, "extension isometry", ok, "rel errors " + ", ".join(f"{e:.2e}" for e in errs))
    assert ok


def test_criterion_03_maximum_principle(long_implicit):
    imp = D.max_principle_check(long_implicit)
    g = build_grid(nx=33, ny=17, Lx=4.0, Ly=4.0)
    p = PenaltyParams(0.2)
    dt = F.cfl_bound(g, p, S1)
    u0 = F.initial_trace("rotation_bump", g, amplitude=1.0)
    exp_run = F.run_flow(F.FlowProblem(g, S1, p, u0, scheme="explicit", dt=dt, T_final=2000 * dt,
                                       stride=500))
    exp = D.max_principle_check(exp_run)
    steps = long_implicit.times.size - 1
    ok = steps >= 10000 and imp <= 1 + 1e-8 and exp <= 1 + 1e-6
    record_acceptance(3, "maximum principle", ok,
                      f"implicit {steps} steps max|U|-1 {imp - 1:.1e}, explicit {exp - 1:.1e}")
    assert ok


def _dissipation_ok(traj):
    led = traj.ledger
    tot, diss = led["total"], led["dissipation_increment"]
    step = np.max(tot[1:] + diss[1:] - tot[:-1] - 1e-12 * tot[0])
    bound = np.max(tot - led["dirichlet"][0])
    return step, bound


def test_criterion_04_discrete_dissipation(long_implicit, desk_traj):
    rows = []
    for traj in (long_implicit, desk_traj):
        rows.append(_dissipation_ok(traj))
    ok = all(s <= 0 and b <= 0 for s, b in rows)
    record_acceptance(4, "discrete dissipation ledger", ok,
                      "max step excess " + ", ".join(f"{s:.1e}" for s, _ in rows))
    assert ok


def test_criterion_05_monotonicity(desk_traj):
    t0 = 1.5
    scale = float(desk_traj.ledger["total"][0])
    xs = (-1.0, -0.5, 0.0, 0.5, 1.0)
    R_E = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
    R_D = [0.1, 0.3, 0.5, 0.7, 0.9, 1.1]
    pairs = worst = 0
    worst_ref = 0.0
    for x0 in xs:
        curve = D.renormalized_energies(desk_traj, ((x0,), t0), R_E)
        fine = D.renormalized_energies(desk_traj, ((x0,), t0), R_E, refine=True)
        _, dvals = D.slice_energies(desk_traj, ((x0,), t0), R_D)
        _, dfine = D.slice_energies(desk_traj, ((x0,), t0), R_D, refine=True)
        for vals in (curve.E_values, dvals):
            for i in range(len(vals)):
                for j in range(i + 1, len(vals)):
                    pairs += 1
                    worst += vals[i] > 1.05 * vals[j] + 1e-10 * scale
        worst_ref = max(worst_ref, float(np.max(np.abs(fine.E_values / curve.E_values - 1))),
                        float(np.max(np.abs(dfine / dvals - 1))))
    ok = pairs >= 20 and worst == 0 and worst_ref < 0.02
    record_acceptance(5, "monotonicity of renormalized energies", ok,
                      f"{pairs} pairs, {worst} violations, refinement change {worst_ref:.2e}")
    assert ok


def test_criterion_06_local_energy_constant():
    Cs = []
    for n, dt in ((33, 4e-3), (65, 2e-3)):
        g = build_grid(nx=n, ny=(n + 1) // 2, Lx=4.0, Ly=4.0)
        u0 = F.initial_trace("rotation_bump", g, amplitude=1.0)
        tr = F.run_flow(F.FlowProblem(g, S1, PenaltyParams(0.2), u0, dt=dt, T_final=1.5,
                                      stride=5))
        Cs.append([D.local_energy_inequality_check(tr, ((x,), 1.0), 0.3)["C"] for x in (0.0, 0.5)])
    ratios = [max(a, b) / min(a, b) for a, b in zip(*Cs)]
    ok = all(math.isfinite(c) and c > 0 for row in Cs for c in row) and max(ratios) < 2
    record_acceptance(6, "local energy inequality constant", ok,
                      f"C coarse {Cs[0][0]:.3g}/{Cs[0][1]:.3g} fine {Cs[1][0]:.3g}/{Cs[1][1]:.3g} "
                      f"max ratio {max(ratios):.2f}")
    assert ok


def test_criterion_07_epsilon_continuation():
    g = build_grid(nx=65, ny=33, Lx=4.0, Ly=4.0)
    u0 = F.initial_trace("rotation_bump", g, amplitude=1.5)
    prob = F.FlowProblem(g, S1, PenaltyParams(0.2), u0, dt=2e-3, T_final=0.5, stride=25)
    rep = F.epsilon_continuation(prob, [0.2, 0.1, 0.05])
    E0 = float(rep["trajectories"][0].ledger["total"][0])
    d = rep["trace_distances"]
    ok = (rep["potential_slope"] >= 1.0 and max(rep["scaled_potential"]) <= 4.0 * E0
          and all(b < a for a, b in zip(d, d[1:])))
    record_acceptance(7, "epsilon continuation", ok,
                      f"order {rep['potential_slope']:.2f}, scaled "
                      + "/".join(f"{v:.2e}" for v in rep["scaled_potential"])
                      + f" (E0 {E0:.3g}), distances " + "/".join(f"{v:.2e}" for v in d))
    assert ok


def test_criterion_08_green_function_oracle():
    t0 = time.perf_counter()
    checks = {c["name"]: c for c in GL.verification_report(n_samples=50, seed=0)}
    elapsed = time.perf_counter() - t0
    needed = ("oblique_bc_residual", "dirichlet_limit_eps_1e-3", "neumann_limit_eps_1e3",
              "duhamel_vs_fd_min_order")
    ok = all(checks[n]["pass"] for n in needed) and elapsed < 300
    record_acceptance(8, "Green-function oracle", ok,
                      " ".join(f"{n} {checks[n]['measured']:.2e}" for n in needed)
                      + f" time {elapsed:.0f}s")
    assert ok


def test_criterion_09_large_time(desk_traj):
    out = D.gradient_estimate_check(desk_traj, 0.5)
    rep = D.singular_set_scan(desk_traj, 0.3, [0.5, 1.0, 1.5, 2.0])
    ok = out["endpoint_ratio"] <= 1.1 and rep.flagged == []
    record_acceptance(9, "large-time decay and empty scan", ok,
                      f"endpoint ratio {out['endpoint_ratio']:.3f}, flagged {len(rep.flagged)}")
    assert ok


def test_criterion_10_brute_force_step_oracles():
    g = build_grid(nx=5, ny=5, Lx=2.0, Ly=2.0)
    phi = 1.2 * np.exp(-g.x ** 2)
    r = 0.8 + 0.15 * np.cos(g.x)
    st = F.FlowState(0.0, harmonic_extend(np.stack([r * np.cos(phi), r * np.sin(phi)], -1), g),
                     PenaltyParams(0.3), 0)
    dt = 0.9 * F.cfl_bound(g, st.params, S1)
    e_exp = float(np.max(np.abs(F.explicit_step(st, dt, g, S1).U
                                - explicit_step_dense(st.U, g, 0.3, dt))))
    g4 = build_grid(nx=4, ny=4, Lx=1.5, Ly=1.5)
    phi = 1.2 * np.exp(-g4.x ** 2)
    r = 0.8 + 0.15 * np.cos(g4.x)
    st4 = F.FlowState(0.0, harmonic_extend(np.stack([r * np.cos(phi), r * np.sin(phi)], -1), g4),
                      PenaltyParams(0.5), 0)
    new = F.minimizing_movement_step(st4, 0.1, g4, S1, tol=1e-13, maxiter=100000)
    ref, _ = mm_step_bfgs(g4, st4.U, 0.5, 0.1)
    e_mm = float(np.max(np.abs(new.U - ref)))
    ok = e_exp <= 1e-14 and e_mm <= 1e-8
    record_acceptance(10, "brute-force step oracles", ok,
                      f"explicit {e_exp:.1e} (5x5), minimizing movement {e_mm:.1e} (4x4)")
    assert ok
