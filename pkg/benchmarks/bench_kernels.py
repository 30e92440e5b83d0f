"""Compare the numba and numpy backends on the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times the weighted stiffness action on m = 1 and m = 2 grids and one
minimizing-movement step on the desk grid.  Compilation happens in a warm-up
call that is not timed.  Both backends must agree to rounding; the script
reports the largest difference next to the timings.
"""

import argparse
import time

import numpy as np

from halfflow import stencil
from halfflow.flow import FlowState, initial_trace, minimizing_movement_step
from halfflow.extension import harmonic_extend
from halfflow.grid import build_grid
from halfflow.manifold import PenaltyParams, unit_sphere


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_stiffness(g, repeat, rng):
    U = rng.standard_normal(g.shape + (2,))
    out = {}
    for backend in ("numpy", "numba"):
        stencil.set_backend(backend)
        out[backend] = (best_of(lambda: stencil.stiffness_action(U, g), repeat),
                        stencil.stiffness_action(U, g)[0])
    return out


def bench_mm(repeat):
    g = build_grid(m=1, nx=65, ny=33, Lx=4.0, Ly=4.0, s=0.5)
    u0 = initial_trace("rotation_bump", g, amplitude=1.5)
    state = FlowState(0.0, harmonic_extend(u0, g), PenaltyParams(0.1), 0)
    target = unit_sphere(2)
    out = {}
    for backend in ("numpy", "numba"):
        stencil.set_backend(backend)
        out[backend] = (best_of(lambda: minimizing_movement_step(state, 5e-3, g, target), repeat),
                        minimizing_movement_step(state, 5e-3, g, target).U)
    return out


def report(name, res):
    (tn, an), (tb, ab) = res["numpy"], res["numba"]
    diff = float(np.max(np.abs(an - ab)))
    print(f"{name:<32s} numpy {1e3 * tn:9.3f} ms   numba {1e3 * tb:9.3f} ms   "
          f"speedup {tn / tb:6.1f}x   max diff {diff:.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not stencil._HAVE_NUMBA:
        raise SystemExit("numba is not available")
    rng = np.random.default_rng(0)
    initial = stencil.get_backend()
    try:
        report("stiffness_action m=1 257x129", bench_stiffness(
            build_grid(m=1, nx=257, ny=129), args.repeat, rng))
        report("stiffness_action m=2 65x65x33", bench_stiffness(
            build_grid(m=2, nx=65, ny=33), args.repeat, rng))
        report("minimizing_movement_step 65x33", bench_mm(max(1, args.repeat // 2)))
    finally:
        stencil.set_backend(initial)


if __name__ == "__main__":
    main()
