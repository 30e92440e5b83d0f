"""Ginzburg-Landau approximation of the half-harmonic map heat flow, realized
through its degenerate extension to the upper half-space, plus executable
a priori diagnostics and an oblique-boundary Green-function oracle."""

from .errors import (ConfigError, DomainError, HalfFlowError, HypothesisViolation,
                     OracleError, PreconditionError, SolverError, TubeViolation)
from .grid import HalfSpaceGrid, build_grid
from .manifold import PenaltyParams, TargetManifold, make_target, unit_sphere

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "HalfFlowError", "HypothesisViolation",
    "OracleError", "PreconditionError", "SolverError", "TubeViolation",
    "HalfSpaceGrid", "build_grid", "PenaltyParams", "TargetManifold",
    "make_target", "unit_sphere",
]
