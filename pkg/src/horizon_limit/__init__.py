"""Finite-horizon optimal paths, their long-horizon limit, and overtaking checks.

Modules
-------
expr        expression parser, evaluator and dual-number derivatives
problem     model definition, grids, trajectories, attainability
quadrature  composite trapezoid and Simpson rules
solver      shooting, collocation and a dynamic-programming oracle
ladder      horizon schedules and the limit path
criterion   overtaking, weak maximality and the ratio condition
cli         batch front end
"""
from .expr import Dual, ExprError, ParseError, evaluate, parse, to_source
from .problem import Grid, Problem, Trajectory, builtin, geodesic, is_attainable, ramsey
from .quadrature import Rule, integrate
from .solver import SolverOptions, dp_oracle, hamiltonian_residuals, solve_finite_horizon
from .ladder import build_ladder, convergence_report, extract_limit_path
from .criterion import check_theorem_condition, overtakes, verify_weak_maximality

__version__ = "0.1.0"

__all__ = [
    "Dual", "ExprError", "ParseError", "evaluate", "parse", "to_source",
    "Grid", "Problem", "Trajectory", "builtin", "geodesic", "is_attainable", "ramsey",
    "Rule", "integrate", "SolverOptions", "dp_oracle", "hamiltonian_residuals",
    "solve_finite_horizon", "build_ladder", "convergence_report", "extract_limit_path",
    "check_theorem_condition", "overtakes", "verify_weak_maximality",
]
