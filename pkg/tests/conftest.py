import numpy as np
import pytest

from halfflow import flow as F
from halfflow.grid import build_grid
from halfflow.manifold import PenaltyParams, unit_sphere

ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail=""):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def desk_traj():
    """Smooth rotation-bump run on the desk grid, long enough for the diagnostics."""
    g = build_grid(m=1, nx=65, ny=33, Lx=4.0, Ly=4.0, s=0.5)
    u0 = F.initial_trace("rotation_bump", g, amplitude=1.0)
    prob = F.FlowProblem(g, unit_sphere(2), PenaltyParams(0.2), u0, dt=2e-3, T_final=2.0,
                         stride=5)
    return F.run_flow(prob)


@pytest.fixture(scope="session")
def constant_traj():
    g = build_grid(m=1, nx=17, ny=9, Lx=2.0, Ly=2.0, s=0.5)
    u0 = F.initial_trace("constant", g, direction=[0.6, 0.8])
    prob = F.FlowProblem(g, unit_sphere(2), PenaltyParams(0.2), u0, dt=0.01, T_final=1.2,
                         stride=2)
    return F.run_flow(prob)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
