import math
import os
import subprocess
import sys

import numpy as np
import pytest

from halfflow import flow as F
from halfflow import stencil
from halfflow.errors import DomainError, PreconditionError
from halfflow.extension import harmonic_extend
from halfflow.grid import build_grid
from halfflow.manifold import PenaltyParams, flat_torus, unit_sphere

from oracles import explicit_step_dense, mm_step_bfgs

S1 = unit_sphere(2)


def off_manifold_state(g, eps=0.3, radius=0.8):
    phi = 1.2 * np.exp(-g.x ** 2)
    r = radius + 0.15 * np.cos(g.x)
    u0 = np.stack([r * np.cos(phi), r * np.sin(phi)], -1)
    return F.FlowState(0.0, harmonic_extend(u0, g), PenaltyParams(eps), 0)


def test_initial_traces_on_manifold():
    g = build_grid(nx=17, ny=5)
    for name in ("rotation_bump", "compressed_winding", "cosine", "constant"):
        u = F.initial_trace(name, g)
        assert np.max(np.abs(np.linalg.norm(u, axis=-1) - 1)) < 1e-15
    with pytest.raises(DomainError):
        F.initial_trace("nope", g)


def test_explicit_step_matches_dense_oracle():
    g = build_grid(nx=5, ny=5, Lx=2.0, Ly=2.0)
    st = off_manifold_state(g)
    dt = 0.9 * F.cfl_bound(g, st.params, S1)
    new = F.explicit_step(st, dt, g, S1)
    ref = explicit_step_dense(st.U, g, 0.3, dt)
    assert np.max(np.abs(new.U - ref)) < 1e-14


def test_explicit_step_constant_and_cfl():
    g = build_grid(nx=9, ny=5)
    U = np.broadcast_to([0.6, 0.8], g.shape + (2,)).copy()
    st = F.FlowState(0.0, U, PenaltyParams(0.2), 0)
    bound = F.cfl_bound(g, st.params, S1)
    assert np.max(np.abs(F.explicit_step(st, bound, g, S1).U - U)) < 1e-15
    with pytest.raises(PreconditionError):
        F.explicit_step(st, 1.01 * bound, g, S1)


def test_mm_step_matches_quasi_newton_oracle():
    g = build_grid(nx=4, ny=4, Lx=1.5, Ly=1.5)
    st = off_manifold_state(g, eps=0.5)
    new = F.minimizing_movement_step(st, 0.1, g, S1, tol=1e-13, maxiter=100000)
    ref, gres = mm_step_bfgs(g, st.U, 0.5, 0.1)
    assert gres < 1e-10
    assert np.max(np.abs(new.U - ref)) < 1e-8


def test_mm_step_energy_inequality():
    g = build_grid(nx=17, ny=9)
    st = off_manifold_state(g, eps=0.2, radius=0.7)
    new, info = F.minimizing_movement_step(st, 0.05, g, S1, return_info=True)
    E0 = F.discrete_energy(st.U, st.params, S1, g)[2]
    E1 = F.discrete_energy(new.U, st.params, S1, g)[2]
    diss = 0.5 / 0.05 * float(np.sum(g.mass[..., None] * (new.U - st.U) ** 2))
    assert E1 + diss <= E0 * (1 + 1e-12)
    assert info["relative_gradient"] <= 1e-8


def test_mm_constant_fixed_point():
    g = build_grid(nx=9, ny=5)
    U = np.broadcast_to([0.0, 1.0], g.shape + (2,)).copy()
    st = F.FlowState(0.0, U, PenaltyParams(0.1), 0)
    assert np.array_equal(F.minimizing_movement_step(st, 0.1, g, S1).U, U)


@pytest.mark.skipif(not stencil._HAVE_NUMBA, reason="numba unavailable")
def test_mm_backends_agree():
    g = build_grid(nx=17, ny=9)
    st = off_manifold_state(g)
    prev = stencil.get_backend()
    try:
        stencil.set_backend("numba")
        a = F.minimizing_movement_step(st, 0.02, g, S1, tol=1e-12).U
        stencil.set_backend("numpy")
        b = F.minimizing_movement_step(st, 0.02, g, S1, tol=1e-12).U
    finally:
        stencil.set_backend(prev)
    assert np.max(np.abs(a - b)) < 1e-10


def test_numpy_fallback_env_flag():
    code = "from halfflow import stencil; print(stencil.get_backend())"
    env = dict(os.environ, HALFFLOW_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"


def test_constant_run_ledger_zero(constant_traj):
    led = constant_traj.ledger
    for col in ("dirichlet", "potential", "total", "dissipation_increment"):
        assert np.all(led[col] == 0.0)
    assert np.all(led["max_abs_U"] == 1.0)


def test_ledger_csv_roundtrip(tmp_path, constant_traj):
    F.write_ledger_csv(constant_traj, tmp_path / "l.csv")
    header = (tmp_path / "l.csv").read_text().splitlines()[0]
    assert header == "step,t,dirichlet,potential,total,dissipation_increment,max_abs_U,trace_min_abs_u"
    back = F.read_ledger_csv(tmp_path / "l.csv")
    for c in F.LEDGER_COLUMNS:
        assert np.array_equal(back[c], np.asarray(constant_traj.ledger[c], float))


def test_trajectory_roundtrip(tmp_path, constant_traj):
    F.save_trajectory(constant_traj, tmp_path / "tr")
    back = F.load_trajectory(tmp_path / "tr")
    assert np.array_equal(back.traces, constant_traj.traces)
    assert np.array_equal(back.snapshots, constant_traj.snapshots)
    assert np.array_equal(back.times, constant_traj.times)


def test_implicit_run_dissipation_and_max_principle():
    g = build_grid(nx=33, ny=17)
    u0 = F.initial_trace("rotation_bump", g, amplitude=2.0)
    tr = F.run_flow(F.FlowProblem(g, S1, PenaltyParams(0.2), u0, dt=5e-3, T_final=0.5, stride=10))
    tot, diss = tr.ledger["total"], tr.ledger["dissipation_increment"]
    assert np.all(tot[1:] + diss[1:] <= tot[:-1] + 1e-12 * tot[0])
    assert np.all(tot + np.cumsum(diss) <= tr.ledger["dirichlet"][0] * (1 + 1e-12))
    assert np.max(tr.ledger["max_abs_U"]) <= 1 + 1e-8
    assert len(tr.ledger["step"]) == len(tr.times)


def test_no_spurious_growth_from_large_data():
    g = build_grid(nx=17, ny=9)
    phi = np.exp(-g.x ** 2)
    u0 = 1.5 * np.stack([np.cos(phi), np.sin(phi)], -1)
    tr = F.run_flow(F.FlowProblem(g, S1, PenaltyParams(0.3), u0, dt=1e-2, T_final=0.3, stride=5))
    assert np.max(tr.ledger["max_abs_U"]) <= 1.5 + 1e-8


def test_explicit_run_under_cfl():
    g = build_grid(nx=17, ny=9)
    params = PenaltyParams(0.2)
    dt = F.cfl_bound(g, params, S1)
    u0 = F.initial_trace("compressed_winding", g, width=0.5)
    tr = F.run_flow(F.FlowProblem(g, S1, params, u0, scheme="explicit", dt=dt, T_final=200 * dt,
                                  stride=50))
    assert np.max(tr.ledger["max_abs_U"]) <= 1 + 1e-6
    with pytest.raises(PreconditionError):
        F.run_flow(F.FlowProblem(g, S1, params, u0, scheme="explicit", dt=1.1 * dt, T_final=0.1))


def test_scheme_consistency():
    """Explicit and implicit traces agree to O(dt) and the gap shrinks with dt."""
    g = build_grid(nx=17, ny=9)
    params = PenaltyParams(0.3)
    u0 = F.initial_trace("rotation_bump", g)
    dt0 = F.cfl_bound(g, params, S1)
    gaps = []
    for dt in (dt0, dt0 / 2):
        n = int(round(0.1 / dt0))
        T = n * dt0
        a = F.run_flow(F.FlowProblem(g, S1, params, u0, scheme="explicit", dt=dt, T_final=T, stride=1000))
        b = F.run_flow(F.FlowProblem(g, S1, params, u0, scheme="implicit", dt=dt, T_final=T, stride=1000,
                                     mm_tol=1e-11))
        gaps.append(np.max(np.abs(a.traces[-1] - b.traces[-1])))
    assert gaps[1] < 0.7 * gaps[0]


def test_generic_target_flow():
    g = build_grid(nx=17, ny=9)
    ang = np.exp(-g.x ** 2)
    u0 = np.stack([np.cos(ang), np.sin(ang), np.cos(2 * ang), np.sin(2 * ang)], -1)
    tr = F.run_flow(F.FlowProblem(g, flat_torus(), PenaltyParams(0.3), u0, dt=1e-2, T_final=0.1, stride=5))
    tot, diss = tr.ledger["total"], tr.ledger["dissipation_increment"]
    assert np.all(tot[1:] + diss[1:] <= tot[:-1] + 1e-12 * tot[0])


def test_epsilon_continuation_identical_eps():
    g = build_grid(nx=17, ny=9)
    u0 = F.initial_trace("rotation_bump", g, amplitude=1.5)
    prob = F.FlowProblem(g, S1, PenaltyParams(0.2), u0, dt=1e-2, T_final=0.1, stride=5)
    rep = F.epsilon_continuation(prob, [0.2, 0.2])
    assert rep["trace_distances"] == [0.0]
    with pytest.raises(PreconditionError):
        F.epsilon_continuation(prob, [0.1, 0.2])
