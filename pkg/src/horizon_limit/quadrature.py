"""Composite quadrature on uniform grids, and the value functionals built on it."""
from __future__ import annotations

import enum
from typing import TYPE_CHECKING

import numpy as np

from .expr import ExprError

if TYPE_CHECKING:
    from .problem import Grid, Problem, Trajectory

__all__ = ["Rule", "QuadratureError", "weights", "integrate", "utility_samples",
           "accumulated_value", "value_difference"]


class QuadratureError(ValueError):
    pass


class Rule(str, enum.Enum):
    TRAPEZOID = "trapezoid"
    SIMPSON = "simpson"

    @classmethod
    def coerce(cls, rule) -> "Rule":
        return rule if isinstance(rule, cls) else cls(str(rule).lower())


def weights(grid: "Grid", rule=Rule.SIMPSON) -> np.ndarray:
    """Quadrature weights on ``grid``; positive and summing to ``T``.

    Simpson needs an even number of intervals.  With an odd count the last
    interval is integrated with the trapezoidal rule instead.
    """
    rule = Rule.coerce(rule)
    n, h = grid.N, grid.h
    w = np.zeros(n + 1)
    if n == 0:
        return w
    if rule is Rule.TRAPEZOID or n == 1:
        w[:] = h
        w[0] = w[-1] = 0.5 * h
        return w
    m = n if n % 2 == 0 else n - 1
    w[0:m + 1:2] = 2.0 * h / 3.0
    w[1:m:2] = 4.0 * h / 3.0
    w[0] = w[m] = h / 3.0
    if m < n:
        w[m] += 0.5 * h
        w[n] = 0.5 * h
    return w


def integrate(samples, grid: "Grid", rule=Rule.SIMPSON) -> float:
    samples = np.asarray(samples, dtype=float)
    if samples.shape != (len(grid),):
        raise QuadratureError(f"{samples.shape[0] if samples.ndim else 0} samples for a grid of "
                              f"{len(grid)} nodes")
    if grid.N == 0:
        return 0.0
    return float(np.dot(weights(grid, rule), samples))


def utility_samples(c, p: "Problem") -> np.ndarray:
    try:
        return p.U_array(np.asarray(c, dtype=float))
    except ExprError as exc:
        bad = _first_bad_node(c, p)
        raise QuadratureError(f"utility undefined at node {bad}: {exc}") from exc


def _first_bad_node(c, p) -> int:
    for i, ci in enumerate(np.asarray(c, dtype=float)):
        try:
            p.U(ci)
        except ExprError:
            return i
    return -1


def accumulated_value(traj: "Trajectory", p: "Problem", rule=Rule.SIMPSON) -> float:
    """``int_0^T U(c(t)) dt`` for ``traj``; also stored on ``traj.value``."""
    value = integrate(utility_samples(traj.c, p), traj.grid, rule)
    traj.value = value
    return value


def value_difference(traj1: "Trajectory", traj2: "Trajectory", p: "Problem",
                     rule=Rule.SIMPSON) -> float:
    """``W1(T) - W2(T)``, integrated as one difference of utility samples."""
    if traj1.grid != traj2.grid:
        raise QuadratureError(f"grid mismatch: {traj1.grid} vs {traj2.grid}")
    du = utility_samples(traj1.c, p) - utility_samples(traj2.c, p)
    return integrate(du, traj1.grid, rule)
