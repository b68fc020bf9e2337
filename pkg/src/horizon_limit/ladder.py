"""Horizon ladders: solve a geometric schedule of horizons and extract the limit path.

The limit path is measured, not extrapolated: on a fixed window ``[0, T_w]``
inside every horizon the successive solutions are compared in the sup norm,
and the estimate of ``(c°, k°)`` is the longest-horizon solution restricted
to the window.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .problem import Grid, Problem, Trajectory, is_attainable
from .quadrature import Rule, accumulated_value
from .solver import SolverError, SolverOptions, hamiltonian_residuals, solve_finite_horizon

__all__ = ["LadderError", "HorizonLadder", "LimitPath", "ConvergenceReport", "build_ladder",
           "extract_limit_path", "convergence_report", "resample", "ladder_nodes", "max_threads"]

EXTRAPOLATION_NOTE = ("limit estimated by the longest-horizon solution restricted to the "
                      "window; no extrapolation in T")


class LadderError(SolverError):
    def __init__(self, message: str, T: float | None = None):
        super().__init__(message if T is None else f"T={T:g}: {message}")
        self.T = T


def max_threads() -> int:
    """Worker cap from ``HORIZON_LIMIT_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("HORIZON_LIMIT_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"HORIZON_LIMIT_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def ladder_nodes(T: float, T0: float, N0: int) -> int:
    """Even interval count with spacing no larger than ``T0 / N0``."""
    n = math.ceil(T * N0 / T0 - 1e-9)
    return n + (n % 2)


@dataclass(frozen=True)
class HorizonLadder:
    problem: Problem
    entries: tuple  # of (T, Trajectory), T strictly increasing
    T0: float
    factor: float
    count: int
    base_nodes: int
    rule: Rule = Rule.SIMPSON

    def __post_init__(self):
        Ts = [T for T, _ in self.entries]
        if len(Ts) < 1:
            raise LadderError("empty ladder")
        if any(b <= a for a, b in zip(Ts, Ts[1:])):
            raise LadderError(f"horizons must be strictly increasing, got {Ts}")

    @classmethod
    def from_trajectories(cls, p: Problem, trajectories, rule=Rule.SIMPSON,
                          tol: float = 1e-6) -> "HorizonLadder":
        """Wrap precomputed trajectories (sorted by horizon) as a ladder."""
        trajs = sorted(trajectories, key=lambda tr: tr.T)
        for tr in trajs:
            ok, res = is_attainable(tr, p, tol)
            if not ok:
                raise LadderError(f"trajectory is not attainable (residual {res:.3g})", tr.T)
            if math.isnan(tr.value):
                accumulated_value(tr, p, rule)
        T0 = trajs[0].T
        factor = trajs[1].T / T0 if len(trajs) > 1 else math.nan
        return cls(p, tuple((tr.T, tr) for tr in trajs), T0, factor, len(trajs),
                   trajs[0].grid.N, Rule.coerce(rule))

    @property
    def horizons(self) -> list[float]:
        return [T for T, _ in self.entries]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [tr for _, tr in self.entries]

    @property
    def largest(self) -> Trajectory:
        return self.entries[-1][1]

    def __len__(self) -> int:
        return len(self.entries)

    def trajectory_at(self, T: float) -> Trajectory:
        for Ti, tr in self.entries:
            if abs(Ti - T) <= 1e-12 * max(1.0, abs(T)):
                return tr
        raise LadderError(f"no ladder entry at horizon {T:g} (have {self.horizons})")


def build_ladder(p: Problem, T0: float, factor: float, count: int,
                 opts: SolverOptions | None = None, threads: int | None = None) -> HorizonLadder:
    """Solve ``T_i = T0 * factor**i`` for ``i = 0..count-1``.

    Every horizon uses node spacing at most ``T0 / opts.nodes`` so the grids
    refine consistently on the common window.  Solves run concurrently on up
    to ``threads`` workers (default: ``HORIZON_LIMIT_THREADS``).
    """
    opts = opts or SolverOptions()
    if not T0 > 0:
        raise ValueError(f"T0 must be positive, got {T0}")
    if not factor > 1:
        raise ValueError(f"factor must exceed 1, got {factor}")
    if count < 2:
        raise ValueError(f"count must be at least 2, got {count}")
    horizons = [T0 * factor ** i for i in range(count)]

    def run(T):
        o = SolverOptions(**{**opts.__dict__, "nodes": ladder_nodes(T, T0, opts.nodes)})
        try:
            tr = solve_finite_horizon(p, T, o)
        except SolverError as exc:
            raise LadderError(str(exc), T) from exc
        ok, res = is_attainable(tr, p, 1e-6)
        if not ok:
            raise LadderError(f"solution is not attainable (residual {res:.3g})", T)
        return tr

    workers = min(count, threads or max_threads())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trajs = list(pool.map(run, horizons))
    else:
        trajs = [run(T) for T in horizons]
    return HorizonLadder(p, tuple(zip(horizons, trajs)), float(T0), float(factor), count,
                         opts.nodes, opts.rule)


def resample(traj: Trajectory, grid: Grid) -> Trajectory:
    """Linear interpolation of ``traj`` onto ``grid`` (identity on its own grid)."""
    if grid.T > traj.T * (1 + 1e-12):
        raise LadderError(f"cannot resample onto [0, {grid.T:g}] beyond the horizon", traj.T)
    if grid == traj.grid:
        return Trajectory(grid, traj.c.copy(), traj.k.copy(), traj.lam.copy(), traj.value,
                          dict(traj.info))
    t, x = grid.nodes, traj.grid.nodes
    return Trajectory(grid, np.interp(t, x, traj.c), np.interp(t, x, traj.k),
                      np.interp(t, x, traj.lam), info={"resampled_from": traj.T})


@dataclass
class LimitPath:
    window: tuple
    grid: Grid
    c: np.ndarray
    k: np.ndarray
    lam: np.ndarray
    converged: bool
    sup_diffs: list
    extrapolation_note: str = EXTRAPOLATION_NOTE
    tol: float = math.nan
    tail: Trajectory | None = field(default=None, repr=False)

    @property
    def T_w(self) -> float:
        return self.window[1]

    def as_trajectory(self) -> Trajectory:
        return Trajectory(self.grid, self.c, self.k, self.lam, info={"limit_window": self.T_w})

    def on(self, grid: Grid) -> Trajectory:
        """``(c°, k°)`` sampled on ``grid``.

        Nodes inside the window use the limit samples; nodes beyond it use
        the longest ladder solution as the surrogate.
        """
        if grid == self.grid:
            return Trajectory(grid, self.c.copy(), self.k.copy(), self.lam.copy(),
                              info={"limit_path": True, "tail_surrogate": False})
        t = grid.nodes
        beyond = t > self.T_w * (1 + 1e-12)
        surrogate = bool(beyond.any())
        if surrogate and (self.tail is None or grid.T > self.tail.T * (1 + 1e-12)):
            raise LadderError("limit path cannot be extended beyond the ladder", grid.T)
        out = []
        for win, tail in zip((self.c, self.k, self.lam),
                             (self.tail.c, self.tail.k, self.tail.lam) if surrogate else (None,) * 3):
            v = np.interp(t, self.grid.nodes, win)
            if surrogate:
                v[beyond] = np.interp(t[beyond], self.tail.grid.nodes, tail)
            out.append(v)
        return Trajectory(grid, *out, info={"limit_path": True, "tail_surrogate": surrogate})


def extract_limit_path(ladder: HorizonLadder, window_fraction: float = 0.5,
                       tol: float = 1e-6) -> LimitPath:
    """Sup-norm Cauchy test of the ladder on ``[0, window_fraction * T0]``."""
    if not 0 < window_fraction <= 1:
        raise ValueError(f"window_fraction must lie in (0, 1], got {window_fraction}")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    T_w = window_fraction * ladder.T0
    T_min = ladder.entries[0][0]
    if T_w > T_min * (1 + 1e-12):
        raise LadderError(f"window {T_w:g} exceeds the smallest horizon {T_min:g}")
    first = ladder.entries[0][1]
    h0 = first.grid.h
    grid = Grid(T_w, max(1, math.ceil(T_w / h0 - 1e-9)))
    if T_w == T_min:
        grid = first.grid
    samples = [resample(tr, grid) for tr in ladder.trajectories]
    sup_diffs = [float(np.max(np.abs(b.c - a.c))) for a, b in zip(samples, samples[1:])]
    last = samples[-1]
    converged = False
    if sup_diffs:
        scale = float(np.max(np.abs(last.c))) if last.c.size else 0.0
        slack = 64 * np.finfo(float).eps * max(1.0, scale)
        tail = sup_diffs[-2:]
        monotone = all(b <= a + slack for a, b in zip(tail, tail[1:]))
        converged = sup_diffs[-1] <= tol and monotone
    return LimitPath((0.0, T_w), grid, last.c, last.k, last.lam, converged, sup_diffs,
                     EXTRAPOLATION_NOTE, tol, ladder.largest)


@dataclass
class ConvergenceReport:
    horizons: list
    values: list
    sup_diffs: list
    residuals: list
    window: tuple

    def to_dict(self) -> dict:
        return {"horizons": self.horizons, "values": self.values, "sup_diffs": self.sup_diffs,
                "residuals": self.residuals, "window": list(self.window)}

    def text(self) -> str:
        lines = [f"window [0, {self.window[1]:g}]",
                 f"{'T':>10} {'W(T)':>22} {'max residual':>14} {'sup diff':>12}"]
        for i, (T, W, r) in enumerate(zip(self.horizons, self.values, self.residuals)):
            d = f"{self.sup_diffs[i - 1]:12.3e}" if i else f"{'':>12}"
            lines.append(f"{T:10.4g} {W:22.15g} {max(r.values()):14.3e} {d}")
        return "\n".join(lines)


def convergence_report(ladder: HorizonLadder, window_fraction: float = 0.5,
                       tol: float = 1e-6) -> ConvergenceReport:
    """Sup-norm differences, values and residuals per entry; no verdict."""
    limit = extract_limit_path(ladder, window_fraction, tol)
    p = ladder.problem
    values, residuals = [], []
    for tr in ladder.trajectories:
        W = tr.value if not math.isnan(tr.value) else accumulated_value(tr, p, ladder.rule)
        values.append(float(W))
        residuals.append(hamiltonian_residuals(tr, p).to_dict())
    return ConvergenceReport(ladder.horizons, values, limit.sup_diffs, residuals, limit.window)
