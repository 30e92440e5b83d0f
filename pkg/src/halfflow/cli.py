"""Command-line experiment runner.

Every subcommand reads a YAML config (``--config``), applies ``--set
block.key=value`` overrides, writes the fully resolved config to
``<out>/resolved_config`` before computing, and finishes with a manifest of
output files and their SHA-256 digests.

Exit codes: 0 success, 2 usage error, 3 config validation error,
4 solver or oracle failure (details in ``<out>/error.json``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .errors import ConfigError, HalfFlowError

COMMANDS = ("extend", "flow", "fracop", "monotonicity", "local-energy", "singular-scan",
            "green-verify", "eps-sweep")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4


class CheckFailed(HalfFlowError):
    """An experiment ran but one of its pass/fail checks did not hold."""

    def __init__(self, message, payload=None):
        self.payload = payload or {}
        super().__init__(message)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


# -- shared builders -----------------------------------------------------------------

def _problem(cfg, epsilon=None):
    from .flow import FlowProblem, initial_trace
    g = C.make_grid(cfg)
    target = C.make_target_from(cfg)
    ini = cfg["initial"]
    u0 = initial_trace(ini["name"], g, ell=cfg["manifold"]["ell"], amplitude=ini["amplitude"],
                       width=ini["width"], direction=ini["direction"])
    sch = cfg["scheme"]
    return FlowProblem(g, target, C.make_penalty(cfg, epsilon), u0, scheme=sch["name"],
                       dt=sch["dt"], T_final=sch["T_final"], stride=sch["stride"],
                       mm_tol=sch["mm_tol"], mm_maxiter=sch["mm_maxiter"])


def _trajectory(cfg, out):
    from .flow import load_trajectory, run_flow, save_trajectory
    src = cfg["diagnostics"]["trajectory"]
    if src:
        return load_trajectory(src)
    traj = run_flow(_problem(cfg))
    if cfg["output"]["snapshots"]:
        save_trajectory(traj, out / "trajectory")
    return traj


def _z0_list(cfg):
    d = cfg["diagnostics"]
    return [(tuple(x0), t0) for t0 in d["t0_list"] for x0 in d["x0_list"]]


# -- subcommands ---------------------------------------------------------------------

def cmd_extend(cfg, out):
    from .extension import dirichlet_energy, harmonic_extend
    from .flow import initial_trace
    from .grid import write_snapshot
    g = C.make_grid(cfg)
    ini = cfg["initial"]
    u0 = initial_trace(ini["name"], g, ell=cfg["manifold"]["ell"], amplitude=ini["amplitude"],
                       width=ini["width"], direction=ini["direction"])
    ext = cfg["extension"]
    U = harmonic_extend(u0, g, method=ext["method"], tol=ext["tol"])
    write_snapshot(out / "extension.bin", U, g, 0.0, cfg["penalty"]["epsilon"])
    _write_json(out / "extension.json", {"dirichlet_energy": dirichlet_energy(U, g),
                                         "max_abs_U": float(np.max(np.linalg.norm(U, axis=-1))),
                                         "method": ext["method"]})


def cmd_flow(cfg, out):
    from .flow import run_flow, save_trajectory, write_ledger_csv
    traj = run_flow(_problem(cfg))
    if cfg["output"]["snapshots"]:
        save_trajectory(traj, out)
    else:
        write_ledger_csv(traj, out / "ledger.csv")
    _write_json(out / "flow.json", {"meta": traj.meta,
                                    "final_total_energy": float(traj.ledger["total"][-1]),
                                    "max_abs_U": float(np.max(traj.ledger["max_abs_U"]))})


def cmd_fracop(cfg, out):
    from .extension import frac_op_via_extension, frac_op_via_kernel, harmonic_extend
    g = C.make_grid(cfg)
    fc = cfg["fracop"]
    k = fc["k"]
    ell = cfg["manifold"]["ell"]
    X = g.trace_coords()
    u0 = np.zeros(g.trace_shape + (ell,))
    u0[..., 0] = np.cos(k * X[0])
    U = harmonic_extend(u0, g, method=cfg["extension"]["method"], tol=cfg["extension"]["tol"])
    w_ext = frac_op_via_extension(U, g)[..., 0]
    times = np.linspace(0.0, fc["history_T"], fc["history_samples"])
    hist = np.repeat(u0[None], times.size, axis=0)
    w_ker = frac_op_via_kernel(times, hist, times[-1], g, tau_min=fc["tau_min"],
                               n_tau=fc["n_tau"])[..., 0]
    s = g.s
    exact = abs(k) ** (2 * s) * u0[..., 0]

    def rel(a, b):
        return float(np.linalg.norm(a - b) / np.linalg.norm(b))

    with open(out / "fracop.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "exact", "extension", "kernel"])
        for i in np.ndindex(*g.trace_shape):
            w.writerow([format(float(X[0][i]), ".17g"), format(float(exact[i]), ".17g"),
                        format(float(w_ext[i]), ".17g"), format(float(w_ker[i]), ".17g")])
    _write_json(out / "fracop.json", {"k": k, "s": s,
                                      "rel_error_extension": rel(w_ext, exact),
                                      "rel_error_kernel": rel(w_ker, exact),
                                      "rel_difference": rel(w_ext, w_ker)})


def cmd_monotonicity(cfg, out):
    from .diagnostics import monotonicity_violations, renormalized_energies, write_monotonicity_csv
    traj = _trajectory(cfg, out)
    d = cfg["diagnostics"]
    curves, report = [], []
    for Z0 in _z0_list(cfg):
        curve = renormalized_energies(traj, Z0, d["R_list"], refine=d["refine"])
        curves.append(curve)
        v = monotonicity_violations(curve, allowance=d["allowance"])
        report.append({"x0": list(Z0[0]), "t0": Z0[1],
                       "violations": [list(item) for item in v]})
    write_monotonicity_csv(curves, out / "monotonicity.csv")
    _write_json(out / "monotonicity.json", {"points": report, "allowance": d["allowance"]})
    if any(r["violations"] for r in report):
        raise CheckFailed("monotonicity violated beyond the allowance", {"points": report})


def cmd_local_energy(cfg, out):
    from .diagnostics import local_energy_inequality_check
    traj = _trajectory(cfg, out)
    R = cfg["diagnostics"]["R"]
    rows = []
    for Z0 in _z0_list(cfg):
        res = local_energy_inequality_check(traj, Z0, R)
        rows.append({"x0": list(Z0[0]), "t0": Z0[1], "R": R,
                     **{k: _finite(res[k]) for k in ("lhs", "rhs", "C")}})
    _write_json(out / "local_energy.json", {"points": rows})


def cmd_singular_scan(cfg, out):
    from .diagnostics import singular_set_scan, write_scan_csv
    from .flow import run_flow
    d = cfg["diagnostics"]
    eps_list = cfg["penalty"]["eps_list"]
    if eps_list and not d["trajectory"]:
        base = _problem(cfg)
        from dataclasses import replace
        trajs = [run_flow(replace(base, penalty=C.make_penalty(cfg, e))) for e in eps_list]
    else:
        trajs = [_trajectory(cfg, out)]
    rep = singular_set_scan(trajs, d["R"], d["t0_list"], [tuple(x) for x in d["x0_list"]],
                            eps0_sq=d["eps0_sq"])
    write_scan_csv(rep, out / "scan.csv")
    _write_json(out / "scan.json", {"eps0_sq": rep.eps0_sq, "eps_used": rep.eps_used,
                                    "n_flagged": len(rep.flagged)})


def cmd_green_verify(cfg, out):
    from .greenlab import verification_report, write_report
    gr = cfg["green"]
    checks = verification_report(n_samples=gr["n_samples"], seed=gr["seed"],
                                 eps_ref=gr["eps_ref"], run_duhamel=gr["duhamel"])
    write_report(checks, out / "green_report.json")
    failed = [c["name"] for c in checks if not c["pass"]]
    if failed:
        raise CheckFailed("green-function checks failed: " + ", ".join(failed),
                          {"checks": checks})


def cmd_eps_sweep(cfg, out):
    from .flow import epsilon_continuation, write_ledger_csv
    rep = epsilon_continuation(_problem(cfg), cfg["penalty"]["eps_list"],
                               t_eval=cfg["diagnostics"]["t_eval"])
    for e, traj in zip(rep["eps"], rep["trajectories"]):
        write_ledger_csv(traj, out / f"ledger_eps_{e:.6g}.csv")
    summary = {k: v for k, v in rep.items() if k != "trajectories"}
    summary = json.loads(json.dumps(summary, default=_jsonable).replace("NaN", "null"))
    _write_json(out / "eps_sweep.json", summary)


HANDLERS = {
    "extend": cmd_extend, "flow": cmd_flow, "fracop": cmd_fracop,
    "monotonicity": cmd_monotonicity, "local-energy": cmd_local_energy,
    "singular-scan": cmd_singular_scan, "green-verify": cmd_green_verify,
    "eps-sweep": cmd_eps_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="halfflow",
                                     description="Half-harmonic Ginzburg-Landau flow experiments")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                       help="override a config entry (repeatable)")
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    out = Path(args.out)
    try:
        cfg = C.parse_config(args.config, args.set, command=args.command)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"command": args.command, "config": cfg}
    (out / "resolved_config").write_text(C.canonical_json(resolved))
    digest = C.config_hash(resolved)
    (out / "config.sha256").write_text(digest + "\n")
    try:
        HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HalfFlowError as exc:
        payload = {"command": args.command, "error": type(exc).__name__, "message": str(exc),
                   "config_sha256": digest}
        for attr in ("residual", "achieved", "node", "payload"):
            if getattr(exc, attr, None) is not None:
                payload[attr] = getattr(exc, attr)
        _write_json(out / "error.json", payload)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {"config_sha256": digest, "command": args.command,
                "files": {str(p.relative_to(out)): _sha256(p) for p in files}}
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
