"""YAML experiment configuration: schema, defaults and validation.

A config file holds the blocks ``grid``, ``manifold``, ``penalty``,
``initial``, ``scheme``, ``extension``, ``fracop``, ``diagnostics``,
``green`` and ``output``.  Every missing key is filled from :data:`DEFAULTS`
and the resolved record is what experiments read and what the CLI echoes.
Errors carry the dotted path of the offending key.
"""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

from .errors import ConfigError, HalfFlowError

DEFAULTS = {
    "grid": {"m": 1, "nx": 65, "ny": 33, "Lx": 4.0, "Ly": 4.0, "grading": "auto"},
    "manifold": {"target": "sphere", "ell": 2},
    "penalty": {"s": 0.5, "epsilon": 0.2, "eps_list": None},
    "initial": {"name": "rotation_bump", "amplitude": 1.0, "width": 1.0, "direction": None},
    "scheme": {"name": "implicit", "dt": 1e-3, "T_final": 0.1, "stride": 10,
               "mm_tol": 1e-8, "mm_maxiter": 5000},
    "extension": {"method": "fd", "tol": 1e-10},
    "fracop": {"k": 1, "n_tau": 400, "tau_min": None, "history_T": 1.0, "history_samples": 21},
    "diagnostics": {"trajectory": None, "t0_list": [1.0], "x0_list": [[0.0]],
                    "R_list": [0.1, 0.2, 0.3, 0.4], "R": 0.3, "refine": False,
                    "allowance": 0.05, "eps0_sq": None, "delta0": 0.25, "t_eval": None},
    "green": {"n_samples": 50, "seed": 0, "eps_ref": 0.5, "duhamel": True},
    "output": {"snapshots": True},
}

_TYPES = {
    "grid.m": int, "grid.nx": int, "grid.ny": int, "grid.Lx": float, "grid.Ly": float,
    "manifold.target": str, "manifold.ell": int,
    "penalty.s": float, "penalty.epsilon": float,
    "initial.name": str, "initial.amplitude": float, "initial.width": float,
    "scheme.name": str, "scheme.dt": float, "scheme.T_final": float, "scheme.stride": int,
    "scheme.mm_tol": float, "scheme.mm_maxiter": int,
    "extension.method": str, "extension.tol": float,
    "fracop.k": float, "fracop.n_tau": int, "fracop.history_T": float,
    "fracop.history_samples": int,
    "diagnostics.R": float, "diagnostics.refine": bool, "diagnostics.allowance": float,
    "diagnostics.delta0": float,
    "green.n_samples": int, "green.seed": int, "green.eps_ref": float, "green.duhamel": bool,
    "output.snapshots": bool,
}


def _coerce(path, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a string, got {value!r}")
    return value


def _merge(raw: dict) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of blocks")
    cfg = copy.deepcopy(DEFAULTS)
    for block, body in raw.items():
        if block not in cfg:
            raise ConfigError(str(block), "unknown block")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(block, "block must be a mapping")
        for key, value in body.items():
            path = f"{block}.{key}"
            if key not in cfg[block]:
                raise ConfigError(path, "unknown key")
            cfg[block][key] = _coerce(path, value, _TYPES[path]) if (
                path in _TYPES and value is not None) else value
    return cfg


def _positive(cfg, path):
    block, key = path.split(".")
    v = cfg[block][key]
    if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
        raise ConfigError(path, f"must be positive, got {v!r}")


def _number_list(path, value, positive=False):
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of numbers")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(path, f"expected numbers, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(path, f"entries must be positive, got {v!r}")
        out.append(float(v))
    return out


def validate(cfg: dict, command: str = None) -> dict:
    """Range checks on a merged config; adds the ``derived`` block."""
    g, pen, sch = cfg["grid"], cfg["penalty"], cfg["scheme"]
    if g["m"] not in (1, 2):
        raise ConfigError("grid.m", "only m = 1 or m = 2 is supported")
    for key in ("nx", "ny"):
        if g[key] < 4:
            raise ConfigError(f"grid.{key}", "need at least 4 points")
    for path in ("grid.Lx", "grid.Ly", "penalty.epsilon", "scheme.dt", "scheme.mm_tol",
                 "extension.tol", "fracop.history_T", "diagnostics.R", "diagnostics.delta0",
                 "green.eps_ref", "initial.width"):
        _positive(cfg, path)
    if not (g["grading"] == "auto" or (isinstance(g["grading"], (int, float))
                                       and not isinstance(g["grading"], bool)
                                       and g["grading"] >= 1)):
        raise ConfigError("grid.grading", "expected 'auto' or a number >= 1")
    if not 0.0 < pen["s"] < 1.0:
        raise ConfigError("penalty.s", f"s must lie in (0, 1), got {pen['s']}")
    if pen["eps_list"] is not None:
        eps = _number_list("penalty.eps_list", pen["eps_list"], positive=True)
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("penalty.eps_list", "must be strictly decreasing")
        pen["eps_list"] = eps
    elif command == "eps-sweep":
        raise ConfigError("penalty.eps_list", "eps-sweep needs a list of epsilons")
    if cfg["manifold"]["target"] not in ("sphere", "torus"):
        raise ConfigError("manifold.target", "expected 'sphere' or 'torus'")
    if cfg["manifold"]["target"] == "torus" and cfg["manifold"]["ell"] != 4:
        raise ConfigError("manifold.ell", "the flat torus lives in R^4")
    if cfg["initial"]["name"] not in ("constant", "rotation_bump", "compressed_winding", "cosine"):
        raise ConfigError("initial.name", f"unknown initial trace {cfg['initial']['name']!r}")
    if sch["name"] not in ("implicit", "explicit"):
        raise ConfigError("scheme.name", "expected 'implicit' or 'explicit'")
    if sch["T_final"] < 0:
        raise ConfigError("scheme.T_final", "must be non-negative")
    if sch["stride"] < 1:
        raise ConfigError("scheme.stride", "must be >= 1")
    if sch["mm_maxiter"] < 1:
        raise ConfigError("scheme.mm_maxiter", "must be >= 1")
    if cfg["extension"]["method"] not in ("fd", "kernel"):
        raise ConfigError("extension.method", "expected 'fd' or 'kernel'")
    if cfg["fracop"]["n_tau"] < 8:
        raise ConfigError("fracop.n_tau", "need at least 8 nodes")
    if cfg["fracop"]["history_samples"] < 2:
        raise ConfigError("fracop.history_samples", "need at least 2 samples")
    d = cfg["diagnostics"]
    d["t0_list"] = _number_list("diagnostics.t0_list", d["t0_list"], positive=True)
    d["R_list"] = _number_list("diagnostics.R_list", d["R_list"], positive=True)
    if not isinstance(d["x0_list"], list) or not d["x0_list"]:
        raise ConfigError("diagnostics.x0_list", "expected a non-empty list of points")
    pts = []
    for p in d["x0_list"]:
        p = _number_list("diagnostics.x0_list", p if isinstance(p, list) else [p])
        if len(p) != g["m"]:
            raise ConfigError("diagnostics.x0_list", f"points need {g['m']} coordinates")
        pts.append(p)
    d["x0_list"] = pts
    if d["eps0_sq"] is not None:
        _positive(cfg, "diagnostics.eps0_sq")
        d["eps0_sq"] = float(d["eps0_sq"])
    if d["t_eval"] is not None:
        _positive(cfg, "diagnostics.t_eval")
        d["t_eval"] = float(d["t_eval"])
    if cfg["green"]["n_samples"] < 1:
        raise ConfigError("green.n_samples", "need at least one sample")

    grid = make_grid(cfg)
    derived = {"grading": grid.grading}
    if sch["name"] == "explicit":
        from .flow import cfl_bound
        bound = cfl_bound(grid, make_penalty(cfg), make_target_from(cfg))
        derived["cfl_bound"] = bound
        if sch["dt"] > bound * (1.0 + 1e-12):
            raise ConfigError("scheme.dt", f"dt = {sch['dt']:.6g} exceeds the CFL bound {bound:.6g}")
    cfg["derived"] = derived
    return cfg


def make_grid(cfg):
    from .grid import build_grid
    g = cfg["grid"]
    try:
        return build_grid(m=g["m"], nx=g["nx"], ny=g["ny"], Lx=g["Lx"], Ly=g["Ly"],
                          s=cfg["penalty"]["s"], grading=g["grading"])
    except ConfigError:
        raise
    except HalfFlowError as exc:
        raise ConfigError("grid", str(exc)) from exc


def make_penalty(cfg, epsilon=None):
    from .manifold import PenaltyParams
    return PenaltyParams(epsilon=cfg["penalty"]["epsilon"] if epsilon is None else epsilon,
                         s=cfg["penalty"]["s"])


def make_target_from(cfg):
    from .manifold import make_target
    return make_target(cfg["manifold"]["target"], cfg["manifold"]["ell"])


def parse_config(path, overrides=(), command: str = None) -> dict:
    """Load, merge defaults, apply ``key=value`` overrides and validate."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
    return resolve(raw, overrides, command)


def resolve(raw, overrides=(), command: str = None) -> dict:
    raw = copy.deepcopy(raw) if raw is not None else {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of blocks")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like block.key=value")
        path, text = item.split("=", 1)
        parts = path.split(".")
        if len(parts) != 2:
            raise ConfigError(path, "override must name block.key")
        raw.setdefault(parts[0], {})
        if not isinstance(raw[parts[0]], dict):
            raise ConfigError(parts[0], "block must be a mapping")
        raw[parts[0]][parts[1]] = yaml.safe_load(text)
    return validate(_merge(raw), command)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
