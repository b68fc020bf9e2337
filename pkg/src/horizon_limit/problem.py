"""Optimisation instances, grids and trajectories.

A :class:`Problem` pairs an instantaneous utility ``U(c)`` with capital
dynamics ``k' = g(c, k)`` and an initial stock ``k0 > 0``.  Paths are
sampled on uniform :class:`Grid` objects; the discrete notion of an
attainable path used throughout the package is the trapezoidal one::

    k[i+1] - k[i] = h/2 * (g(c[i], k[i]) + g(c[i+1], k[i+1]))

so path generators here step with the implicit trapezoidal rule and every
path they produce satisfies that relation to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import expr as ex

__all__ = [
    "Grid", "Trajectory", "Problem", "Diagnostic", "ProblemError", "StateBoundError",
    "geodesic", "ramsey", "builtin", "validate_model", "is_attainable",
    "constant_path", "path_from_controls", "trapezoid_state_step",
]


class ProblemError(ValueError):
    pass


class StateBoundError(ProblemError):
    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = i*T/N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not (self.T >= 0.0 and math.isfinite(self.T)):
            raise ProblemError(f"horizon must be finite and >= 0, got {self.T}")
        if self.T > 0 and self.N < 1:
            raise ProblemError("a positive horizon needs at least 2 nodes")
        if self.T == 0 and self.N != 0:
            raise ProblemError("a zero horizon has a single node")

    @property
    def h(self) -> float:
        return self.T / self.N if self.N else 0.0

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1, dtype=float) * self.h
        if self.N:
            t[-1] = self.T
        t.flags.writeable = False
        return t

    def __len__(self) -> int:
        return self.N + 1

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the node at time ``t``; raises if ``t`` is not a node."""
        if self.N == 0:
            if abs(t) <= rtol:
                return 0
            raise ProblemError(f"t={t} is not a node of {self}")
        i = int(round(t / self.h))
        if 0 <= i <= self.N and abs(i * self.h - t) <= rtol * max(1.0, abs(t)):
            return i
        raise ProblemError(f"t={t} is not a node of {self}")


@dataclass
class Trajectory:
    """Control, state and costate samples on a grid, plus accumulated value."""

    grid: Grid
    c: np.ndarray
    k: np.ndarray
    lam: np.ndarray
    value: float = float("nan")
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.k = np.asarray(self.k, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        n = len(self.grid)
        for name in ("c", "k", "lam"):
            if getattr(self, name).shape != (n,):
                raise ProblemError(
                    f"{name} has shape {getattr(self, name).shape}, grid needs ({n},)")

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def T(self) -> float:
        return self.grid.T

    def restrict(self, T: float) -> "Trajectory":
        """Restriction to ``[0, T]``; ``T`` must be a grid node."""
        i = self.grid.index_of(T)
        if i == self.grid.N:
            return self
        return Trajectory(Grid(self.grid.nodes[i], i), self.c[:i + 1].copy(),
                          self.k[:i + 1].copy(), self.lam[:i + 1].copy(),
                          info=dict(self.info, restricted_from=self.grid.T))


class Problem:
    """One optimisation instance: ``max int_0^T U(c) dt`` s.t. ``k' = g(c, k)``.

    Parameters
    ----------
    utility : str or Expr
        ``U(c)``; may reference only ``c``.
    dynamics : str or Expr
        ``g(c, k)``; may reference only ``c`` and ``k``.
    initial_capital : float
        ``k(0)``, strictly positive.
    control_bounds : (float, float)
        Inclusive box for ``c``; either side may be infinite.
    state_lower_bound : float
        Lower bound on ``k`` (default 0).
    """

    def __init__(self, utility, dynamics, initial_capital: float,
                 control_bounds=(-math.inf, math.inf), state_lower_bound: float = 0.0,
                 label: str = ""):
        self.utility = ex.parse(utility) if isinstance(utility, str) else utility
        self.dynamics = ex.parse(dynamics) if isinstance(dynamics, str) else dynamics
        self.initial_capital = float(initial_capital)
        lo, hi = (float(b) for b in control_bounds)
        self.control_bounds = (lo, hi)
        self.state_lower_bound = float(state_lower_bound)
        self.label = label

        if not (self.initial_capital > 0.0 and math.isfinite(self.initial_capital)):
            raise ProblemError(f"initial capital must be > 0, got {initial_capital}")
        if not lo < hi:
            raise ProblemError(f"control bounds must satisfy c_min < c_max, got {control_bounds}")
        if math.isnan(self.state_lower_bound) or self.state_lower_bound == math.inf:
            raise ProblemError("state lower bound must be a number below +inf")
        if self.initial_capital < self.state_lower_bound:
            raise ProblemError("initial capital lies below the state lower bound")
        extra = ex.variables(self.utility) - {"c"}
        if extra:
            raise ProblemError(f"utility may only reference c, found {sorted(extra)}")
        extra = ex.variables(self.dynamics) - {"c", "k"}
        if extra:
            raise ProblemError(f"dynamics may only reference c and k, found {sorted(extra)}")

        self._U = ex.compile_expr(self.utility, ("c",))
        self._g = ex.compile_expr(self.dynamics, ("c", "k"))
        self._U_arr = ex.compile_array(self.utility, ("c",))
        self._g_arr = ex.compile_array(self.dynamics, ("c", "k"))

    def __repr__(self) -> str:
        return (f"Problem(utility={ex.to_source(self.utility)!r}, "
                f"dynamics={ex.to_source(self.dynamics)!r}, k0={self.initial_capital!r}, "
                f"bounds={self.control_bounds!r}, label={self.label!r})")

    @property
    def k0(self) -> float:
        return self.initial_capital

    def with_bounds(self, lo: float, hi: float) -> "Problem":
        return Problem(self.utility, self.dynamics, self.initial_capital, (lo, hi),
                       self.state_lower_bound, self.label)

    def to_dict(self) -> dict:
        lo, hi = self.control_bounds
        return {
            "utility": ex.to_source(self.utility),
            "dynamics": ex.to_source(self.dynamics),
            "k0": self.initial_capital,
            "control_bounds": [None if math.isinf(lo) else lo, None if math.isinf(hi) else hi],
            "state_lower_bound": (None if math.isinf(self.state_lower_bound)
                                  else self.state_lower_bound),
            "label": self.label,
        }

    # pointwise evaluation -------------------------------------------------
    def U(self, c: float) -> float:
        return self._U(float(c))

    def dU(self, c: float) -> float:
        return ex.Dual.lift(self._U(ex.Dual(c, 1.0))).deriv

    def U_dual(self, c: float) -> ex.Dual:
        return ex.Dual.lift(self._U(ex.Dual(c, 1.0)))

    def g(self, c: float, k: float) -> float:
        return self._g(float(c), float(k))

    def g_c(self, c: float, k: float) -> float:
        return ex.Dual.lift(self._g(ex.Dual(c, 1.0), float(k))).deriv

    def g_k(self, c: float, k: float) -> float:
        return ex.Dual.lift(self._g(float(c), ex.Dual(k, 1.0))).deriv

    def U_array(self, c) -> np.ndarray:
        return self._U_arr(c)

    def g_array(self, c, k) -> np.ndarray:
        return self._g_arr(c, k)

    def in_bounds(self, c: float, tol: float = 0.0) -> bool:
        lo, hi = self.control_bounds
        return lo - tol <= c <= hi + tol


def geodesic(A: float = 5.0) -> Problem:
    """Shortest path from a point to a line: ``U = -(1+c^2)^0.5``, ``k' = c``."""
    return Problem("-(1+c^2)^0.5", "c", A, (-math.inf, math.inf), 0.0,
                   label=f"geodesic(A={A!r})")


def ramsey(r: float = 0.05, k0: float = 10.0, exponent: float = 0.5,
           c_max: float = 3.0) -> Problem:
    """Linear-technology growth model ``k' = r*k - c`` with power utility.

    The utility is ``c^exponent / exponent``, written ``2*sqrt(c)`` for the
    default exponent 1/2.
    """
    if not 0.0 < exponent < 1.0:
        raise ProblemError("utility exponent must lie in (0, 1)")
    utility = "2*sqrt(c)" if exponent == 0.5 else f"c^{exponent!r}/{exponent!r}"
    return Problem(utility, f"{r!r}*k - c", k0, (0.0, c_max), 0.0,
                   label=f"ramsey(r={r!r}, k0={k0!r}, exponent={exponent!r}, c_max={c_max!r})")


def builtin(name: str, **params) -> Problem:
    makers = {"geodesic": geodesic, "ramsey": ramsey}
    try:
        maker = makers[name]
    except KeyError:
        raise ProblemError(f"unknown built-in model {name!r}") from None
    return maker(**params)


# ---------------------------------------------------------------------------
# Model validation

@dataclass(frozen=True)
class Diagnostic:
    kind: str
    severity: str
    message: str


def _probe_points(p: Problem, n: int) -> np.ndarray:
    lo = max(p.control_bounds[0], 1e-9)
    hi = min(p.control_bounds[1], 1e6)
    if hi <= lo:
        lo, hi = p.control_bounds[0], p.control_bounds[1]
    if lo > 0 and hi / lo > 1e3:
        return np.geomspace(lo, hi, n)
    return np.linspace(lo, hi, n)


def validate_model(p: Problem, sample_count: int = 64) -> list[Diagnostic]:
    """Numerically probe the standing assumptions on ``U`` and ``g``.

    Checks strict monotonicity (``U' > 0``), strict concavity (``U'``
    strictly decreasing between probe points), nonnegativity of ``U``
    (warning only) and that capital does not shrink at ``k0`` under the
    lowest admissible consumption.  Evaluation failures become diagnostics.
    """
    if sample_count < 3:
        raise ProblemError("sample_count must be >= 3")
    out: list[Diagnostic] = []
    cs = _probe_points(p, sample_count)
    values, slopes = [], []
    for c in cs:
        try:
            d = p.U_dual(float(c))
        except ex.ExprError as exc:
            out.append(Diagnostic("domain", "error", f"U or U' undefined at c={c:.6g}: {exc}"))
            return out
        values.append(d.value)
        slopes.append(d.deriv)
    values, slopes = np.array(values), np.array(slopes)

    bad = np.flatnonzero(slopes <= 0.0)
    if bad.size:
        out.append(Diagnostic(
            "monotonicity", "error",
            f"U' <= 0 at {bad.size} of {cs.size} probe points (first at c={cs[bad[0]]:.6g})"))
    bad = np.flatnonzero(np.diff(slopes) >= 0.0)
    if bad.size:
        out.append(Diagnostic(
            "concavity", "error",
            f"U' not strictly decreasing on {bad.size} probe intervals "
            f"(first near c={cs[bad[0]]:.6g})"))
    if np.any(values < 0.0):
        out.append(Diagnostic(
            "nonnegativity", "warning",
            f"integrand is negative-valued (min {values.min():.6g}); "
            "ratio arguments that divide by accumulated utility lose their sign premise"))

    lo = p.control_bounds[0]
    c_floor = max(lo, 0.0) if p.in_bounds(0.0) else lo
    try:
        drift = p.g(c_floor, p.k0)
    except ex.ExprError as exc:
        out.append(Diagnostic("domain", "error", f"g undefined at (c={c_floor}, k0): {exc}"))
    else:
        if drift < 0.0:
            out.append(Diagnostic(
                "feasibility", "warning",
                f"capital declines at k0 even with consumption {c_floor:.6g} (g={drift:.6g})"))
    return out


# ---------------------------------------------------------------------------
# Attainability and path generation

def _trapezoid_defects(p: Problem, traj: Trajectory) -> np.ndarray:
    g = p.g_array(traj.c, traj.k)
    h = traj.grid.h
    return np.diff(traj.k) - 0.5 * h * (g[:-1] + g[1:])


def is_attainable(traj: Trajectory, p: Problem, tol: float = 1e-6) -> tuple[bool, float]:
    """Check initial condition, bounds and trapezoidal dynamics.

    Returns ``(ok, residual)`` where ``residual`` is the largest trapezoidal
    defect divided by the step, i.e. a per-unit-time residual comparable
    with ``tol``.
    """
    if tol <= 0:
        raise ProblemError("tol must be positive")
    n = len(traj.grid)
    if not (traj.c.shape == traj.k.shape == (n,)):
        raise ProblemError("trajectory arrays do not match the grid")
    if traj.grid.N == 0:
        residual = 0.0
    else:
        try:
            residual = float(np.max(np.abs(_trapezoid_defects(p, traj)))) / traj.grid.h
        except ex.ExprError:
            return False, math.inf
    lo, hi = p.control_bounds
    ok = (abs(traj.k[0] - p.k0) <= tol
          and bool(np.all((traj.c >= lo) & (traj.c <= hi)))
          and bool(np.all(traj.k >= p.state_lower_bound - tol))
          and residual <= tol)
    return ok, residual


def trapezoid_state_step(p: Problem, k: float, c0: float, c1: float, h: float,
                         g0: Optional[float] = None) -> float:
    """Solve ``x = k + h/2 (g(c0,k) + g(c1,x))`` for ``x`` by Newton's method."""
    if g0 is None:
        g0 = p.g(c0, k)
    x = k + h * g0
    for _ in range(60):
        d = ex.Dual.lift(p._g(c1, ex.Dual(x, 1.0)))
        r = x - k - 0.5 * h * (g0 + d.value)
        if r == 0.0:
            return x
        jac = 1.0 - 0.5 * h * d.deriv
        if jac == 0.0:
            break
        step = r / jac
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            return x
    raise ProblemError(f"implicit state step did not converge (k={k}, c0={c0}, c1={c1})")


def path_from_controls(p: Problem, controls, grid: Grid, rule=None,
                       check_state: bool = True) -> Trajectory:
    """Integrate the state for given nodal controls with the trapezoidal rule."""
    from .quadrature import Rule, accumulated_value

    c = np.asarray(controls, dtype=float)
    if c.shape != (len(grid),):
        raise ProblemError(f"expected {len(grid)} control samples, got {c.shape}")
    lo, hi = p.control_bounds
    if np.any((c < lo) | (c > hi)):
        raise ProblemError("control samples outside the control bounds")
    k = np.empty_like(c)
    k[0] = p.k0
    h = grid.h
    lb = p.state_lower_bound
    for i in range(grid.N):
        k[i + 1] = trapezoid_state_step(p, k[i], c[i], c[i + 1], h)
        if check_state and k[i + 1] < lb:
            raise StateBoundError(
                f"state falls below {lb} at node {i + 1} (t={grid.nodes[i + 1]:.6g})", i + 1)
    traj = Trajectory(grid, c, k, np.zeros_like(c))
    accumulated_value(traj, p, rule or Rule.SIMPSON)
    return traj


def constant_path(p: Problem, c_level: float, grid: Grid, rule=None,
                  method: str = "trapezoid") -> Trajectory:
    """Path holding consumption at ``c_level`` from ``k0``.

    ``method`` is ``"trapezoid"`` (default, consistent with
    :func:`is_attainable`) or ``"rk4"`` (classical Runge-Kutta).
    """
    from .quadrature import Rule, accumulated_value

    if not p.in_bounds(c_level):
        raise ProblemError(f"c_level={c_level} outside control bounds {p.control_bounds}")
    if method == "trapezoid":
        return path_from_controls(p, np.full(len(grid), float(c_level)), grid, rule)
    if method != "rk4":
        raise ProblemError(f"unknown integration method {method!r}")
    c = float(c_level)
    h = grid.h
    k = np.empty(len(grid))
    k[0] = p.k0
    for i in range(grid.N):
        x = k[i]
        s1 = p.g(c, x)
        s2 = p.g(c, x + 0.5 * h * s1)
        s3 = p.g(c, x + 0.5 * h * s2)
        s4 = p.g(c, x + h * s3)
        k[i + 1] = x + h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        if k[i + 1] < p.state_lower_bound:
            raise StateBoundError(
                f"state falls below {p.state_lower_bound} at node {i + 1} "
                f"(t={grid.nodes[i + 1]:.6g})", i + 1)
    traj = Trajectory(grid, np.full(len(grid), c), k, np.zeros(len(grid)))
    accumulated_value(traj, p, rule or Rule.SIMPSON)
    return traj


def with_value(traj: Trajectory, value: float) -> Trajectory:
    return replace(traj, value=value)
