"""Batch front end: ``solve``, ``ladder``, ``check``, ``compare`` and ``plot``.

Exit codes
----------
0  success (``check``: condition satisfied and no challenger overtakes)
1  configuration or input error
2  solver failure
3  ``check``: condition violated or some challenger overtakes the limit path
4  ``check``: inconclusive
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .criterion import (AttainabilityError, Verdict, check_theorem_condition, overtakes,
                        verify_weak_maximality)
from .expr import ExprError
from .ladder import build_ladder, convergence_report, extract_limit_path, ladder_nodes, max_threads
from .problem import (Grid, Problem, ProblemError, StateBoundError, Trajectory, builtin,
                      is_attainable, path_from_controls)
from .quadrature import Rule, accumulated_value
from .solver import SolverError, SolverOptions, hamiltonian_residuals, solve_finite_horizon

log = logging.getLogger("horizon_limit")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VIOLATED, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4
CSV_HEADER = ("t", "c", "k", "lambda")

_bound = {"type": ["number", "null"]}
_bounds = {"type": "array", "items": _bound, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["builtin"],
                    "properties": {
                        "builtin": {"enum": ["geodesic", "ramsey"]},
                        "params": {"type": "object",
                                   "additionalProperties": {"type": "number"}},
                        "control_bounds": _bounds,
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["utility", "dynamics", "initial_capital"],
                    "properties": {
                        "utility": {"type": "string"},
                        "dynamics": {"type": "string"},
                        "initial_capital": {"type": "number", "exclusiveMinimum": 0},
                        "control_bounds": _bounds,
                        "state_lower_bound": _bound,
                        "label": {"type": "string"},
                    },
                },
            ]
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T0": {"type": "number", "exclusiveMinimum": 0},
                "factor": {"type": "number", "exclusiveMinimum": 1},
                "count": {"type": "integer", "minimum": 2},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["pmp_shooting", "collocation", "auto"]},
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_newton_iters": {"type": "integer", "minimum": 1},
                "collocation_max_iters": {"type": "integer", "minimum": 1},
                "collocation_step_tol": {"type": "number", "exclusiveMinimum": 0},
                "nodes": {"type": "integer", "minimum": 2},
            },
        },
        "quadrature": {"enum": ["simpson", "trapezoid"]},
        "window_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol_zero": {"type": "number", "exclusiveMinimum": 0},
                "attainability": {"type": "number", "exclusiveMinimum": 0},
                "tail_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "convergence": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "challengers": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "bounds": _bounds,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "schedule": {"T0": 5.0, "factor": 2.0, "count": 4},
    "solver": {"method": "auto", "newton_tol": 1e-10, "max_newton_iters": 50,
               "collocation_max_iters": 5000, "collocation_step_tol": 1e-9, "nodes": 100},
    "quadrature": "simpson",
    "window_fraction": 0.5,
    "tolerances": {"tol_zero": 1e-6, "attainability": 1e-6, "tail_fraction": 0.5,
                   "convergence": 1e-6},
    "challengers": {"count": 50, "seed": 0},
    "output": {"directory": "out"},
}


class ConfigError(ValueError):
    pass


def _inf(x, sign):
    return sign * math.inf if x is None else float(x)


class RunConfig:
    """Validated run configuration with defaults filled in."""

    def __init__(self, raw: dict):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        cfg = copy.deepcopy(DEFAULTS)
        for key, val in raw.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
        self.data = cfg
        self.problem = self._problem(cfg["model"])
        try:
            self.solver = SolverOptions(**cfg["solver"])
        except ValueError as exc:
            raise ConfigError(f"invalid solver options: {exc}") from None
        self.rule = Rule.coerce(cfg["quadrature"])
        s = cfg["schedule"]
        self.T0, self.factor, self.count = float(s["T0"]), float(s["factor"]), int(s["count"])
        self.window_fraction = float(cfg["window_fraction"])
        self.tol = cfg["tolerances"]
        self.challengers = cfg["challengers"]
        self.out_dir = Path(cfg["output"]["directory"])

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls(raw)

    @staticmethod
    def _problem(m: dict) -> Problem:
        try:
            if "builtin" in m:
                p = builtin(m["builtin"], **m.get("params", {}))
                if "control_bounds" in m:
                    lo, hi = m["control_bounds"]
                    p = p.with_bounds(_inf(lo, -1), _inf(hi, 1))
                return p
            lo, hi = m.get("control_bounds", [None, None])
            lb = m.get("state_lower_bound", 0.0)
            return Problem(m["utility"], m["dynamics"], float(m["initial_capital"]),
                           (_inf(lo, -1), _inf(hi, 1)), _inf(lb, -1), m.get("label", ""))
        except (ExprError, ProblemError, TypeError) as exc:
            raise ConfigError(f"invalid model: {exc}") from None

    @property
    def horizons(self) -> list[float]:
        return [self.T0 * self.factor ** i for i in range(self.count)]


# ---------------------------------------------------------------------------
# Output helpers

def _clean(obj):
    """JSON-safe copy: non-finite floats become None, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8", newline="\n")


def write_csv(path: Path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(traj.t, traj.c, traj.k, traj.lam):
            w.writerow([repr(float(x)) for x in row])


def read_csv(path) -> Trajectory:
    """Trajectory from a ``t,c,k,lambda`` CSV on a uniform grid."""
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or tuple(h.strip() for h in rows[0]) != CSV_HEADER:
        raise ConfigError(f"{path}: header must be {','.join(CSV_HEADER)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 4:
        raise ConfigError(f"{path}: need at least 2 rows of 4 columns")
    t = data[:, 0]
    grid = Grid(float(t[-1]), len(t) - 1)
    if t[0] != 0.0 or np.max(np.abs(t - grid.nodes)) > 1e-9 * max(1.0, grid.T):
        raise ConfigError(f"{path}: times must form a uniform grid starting at 0")
    return Trajectory(grid, data[:, 1], data[:, 2], data[:, 3])


def _report_base(cfg: RunConfig, command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command,
            "model": cfg.problem.to_dict(), "quadrature": cfg.rule.value}


# ---------------------------------------------------------------------------
# Challengers

def generate_challengers(p: Problem, grid: Grid, count: int, seed: int, bounds=None,
                         tol: float = 1e-6, rule=Rule.SIMPSON, max_tries: int = 1000) -> list:
    """Seeded constant and two-piece constant consumption paths on ``grid``.

    Even-numbered challengers hold one level, odd-numbered ones switch level
    once at a random time.  Draws that break the state bound or fail the
    attainability check are rejected and redrawn.
    """
    lo, hi = p.control_bounds
    if bounds is not None:
        lo, hi = max(lo, _inf(bounds[0], -1)), min(hi, _inf(bounds[1], 1))
    elif not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = max(lo, -1.0), min(hi, 1.0)
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConfigError(f"challenger bounds [{lo}, {hi}] are not a finite interval")
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    t = grid.nodes
    for i in range(count):
        for _ in range(max_tries):
            if i % 2 == 0:
                levels = rng.uniform(lo, hi, size=1)
                c = np.full(len(grid), levels[0])
                desc = f"constant {levels[0]!r}"
            else:
                levels = rng.uniform(lo, hi, size=2)
                switch = rng.uniform(0.0, grid.T)
                c = np.where(t < switch, levels[0], levels[1])
                desc = f"{levels[0]!r} until t={switch!r}, then {levels[1]!r}"
            try:
                tr = path_from_controls(p, c, grid, rule)
            except (StateBoundError, ExprError):
                continue
            if is_attainable(tr, p, tol)[0]:
                tr.info["label"] = f"challenger {i}: {desc}"
                out.append(tr)
                break
        else:
            raise ConfigError(f"could not draw an attainable challenger in {max_tries} tries")
    return out


# ---------------------------------------------------------------------------
# Commands

def cmd_solve(cfg: RunConfig, T: float, out: Path) -> int:
    try:
        traj = solve_finite_horizon(cfg.problem, T, cfg.solver)
        res = hamiltonian_residuals(traj, cfg.problem)
    except (SolverError, ExprError, ProblemError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trajectory.csv", traj)
    rep = _report_base(cfg, "solve")
    rep.update(horizon=T, value=traj.value, residuals=res.to_dict(),
               solver=dict(traj.info))
    write_json(out / "residuals.json", rep)
    return EXIT_OK


def _ladder(cfg: RunConfig):
    ladder = build_ladder(cfg.problem, cfg.T0, cfg.factor, cfg.count, cfg.solver)
    limit = extract_limit_path(ladder, cfg.window_fraction, cfg.tol["convergence"])
    return ladder, limit


def _limit_dict(limit) -> dict:
    return {"window": list(limit.window), "converged": limit.converged,
            "sup_diffs": limit.sup_diffs, "tol": limit.tol,
            "extrapolation_note": limit.extrapolation_note}


def cmd_ladder(cfg: RunConfig, out: Path) -> int:
    try:
        ladder, limit = _ladder(cfg)
        conv = convergence_report(ladder, cfg.window_fraction, cfg.tol["convergence"])
    except (SolverError, ExprError, ProblemError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "limit.csv", limit.as_trajectory())
    rep = _report_base(cfg, "ladder")
    rep.update(convergence=conv.to_dict(), limit=_limit_dict(limit))
    write_json(out / "convergence.json", rep)
    print(conv.text())
    return EXIT_OK


def cmd_check(cfg: RunConfig, out: Path) -> int:
    try:
        ladder, limit = _ladder(cfg)
        conv = convergence_report(ladder, cfg.window_fraction, cfg.tol["convergence"])
    except (SolverError, ExprError, ProblemError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    T_max = ladder.horizons[-1]
    grid = Grid(T_max, ladder_nodes(T_max, cfg.T0, cfg.solver.nodes))
    ch = cfg.challengers
    challengers = generate_challengers(cfg.problem, grid, ch["count"], ch["seed"],
                                       ch.get("bounds"), cfg.tol["attainability"], cfg.rule)
    try:
        cond = check_theorem_condition(ladder, limit, cfg.rule, cfg.tol["tol_zero"])
        weak = verify_weak_maximality(limit, challengers, cfg.problem, ladder.horizons,
                                      cfg.rule, cfg.tol["tail_fraction"],
                                      cfg.tol["attainability"])
    except (AttainabilityError, ExprError, ValueError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if cond.verdict is Verdict.VIOLATED or not weak.no_challenger_overtakes:
        code = EXIT_VIOLATED
    elif cond.verdict is Verdict.INCONCLUSIVE:
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_OK
    warnings = [w for w in (cond.proof_step_warning, weak.warning) if w]
    if not limit.converged:
        warnings.append("ladder has not converged on the window to the requested tolerance")
    rep = _report_base(cfg, "check")
    rep.update(schedule={"T0": cfg.T0, "factor": cfg.factor, "count": cfg.count},
               convergence=conv.to_dict(), limit=_limit_dict(limit), condition=cond.to_dict(),
               weak_maximality=weak.to_dict(), warnings=warnings,
               challenger_seed=ch["seed"], exit_code=code)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "limit.csv", limit.as_trajectory())
    write_json(out / "report.json", rep)
    print(f"condition: {cond.verdict.value}; challengers overtaking: "
          f"{sum(v.overtakes for v in weak.verdicts)} of {len(weak.verdicts)}")
    for w in warnings:
        print(f"warning: {w}")
    return code


def cmd_compare(cfg: RunConfig, candidate_csv, reference_csv) -> int:
    cand = read_csv(candidate_csv)
    ref = read_csv(reference_csv)
    for tr in (cand, ref):
        accumulated_value(tr, cfg.problem, cfg.rule)
    try:
        verdict = overtakes(cand, ref, cfg.problem, cfg.horizons, cfg.rule,
                            cfg.tol["tail_fraction"], cfg.tol["attainability"],
                            label=f"{candidate_csv} vs {reference_csv}")
    except (AttainabilityError, ExprError) as exc:
        raise ConfigError(str(exc)) from None
    rep = _report_base(cfg, "compare")
    rep.update(verdict=verdict.to_dict())
    print(json.dumps(_clean(rep), sort_keys=True, indent=2, allow_nan=False))
    return EXIT_OK


def _series_from_report(rep: dict) -> dict:
    series = {}
    cond = rep.get("condition")
    if cond and cond.get("horizons"):
        series["R"] = list(zip(cond["horizons"], cond["ratios"]))
    conv = rep.get("convergence")
    if conv and conv.get("horizons"):
        series["W"] = list(zip(conv["horizons"], conv["values"]))
    weak = rep.get("weak_maximality") or {}
    for i, v in enumerate(weak.get("challengers", [])):
        d = v["differences"]
        series[f"D_{i:03d}"] = list(zip(d["T"], d["values"]))
    if "verdict" in rep and isinstance(rep["verdict"], dict) and "differences" in rep["verdict"]:
        d = rep["verdict"]["differences"]
        series["D"] = list(zip(d["T"], d["values"]))
    return series


def cmd_plot(path, out: Path | None) -> int:
    path = Path(path)
    out = out or path.parent
    if path.suffix.lower() == ".csv":
        tr = read_csv(path)
        series = {"c": list(zip(tr.t, tr.c)), "k": list(zip(tr.t, tr.k)),
                  "lambda": list(zip(tr.t, tr.lam))}
        xlabel = "t"
    else:
        try:
            text = path.read_text(encoding="utf-8")
            rep = json.loads(text) if text.strip() else {}
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        series = _series_from_report(rep) if isinstance(rep, dict) else {}
        xlabel = "T"
    if not series:
        raise ConfigError(f"{path} holds no plottable series")
    out.mkdir(parents=True, exist_ok=True)
    for name, pts in series.items():
        target = out / f"{path.stem}_{name}.tsv"
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"{xlabel}\t{name}\n")
            for x, y in pts:
                f.write(f"{float(x)!r}\t{'nan' if y is None else repr(float(y))}\n")
        print(target)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="horizon-limit",
                                 description="Finite-horizon limits and overtaking checks.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides the config)")
        return sp

    sp = with_config("solve", "solve one finite horizon")
    sp.add_argument("--horizon", type=float, required=True, help="horizon T > 0")
    with_config("ladder", "solve the horizon schedule and extract the limit path")
    with_config("check", "ratio condition plus challenger overtaking checks")
    sp = with_config("compare", "does the first path overtake the second?")
    sp.add_argument("candidate", help="candidate trajectory CSV")
    sp.add_argument("reference", help="reference trajectory CSV")
    sp = sub.add_parser("plot", help="write tab-separated series for plotting")
    sp.add_argument("report", help="trajectory CSV or JSON report")
    sp.add_argument("--out", help="output directory (default: next to the input)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            return cmd_plot(args.report, Path(args.out) if args.out else None)
        try:
            max_threads()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg = RunConfig.load(args.config)
        out = Path(args.out) if args.out else cfg.out_dir
        if args.command == "solve":
            if not args.horizon > 0:
                raise ConfigError(f"horizon must be positive, got {args.horizon}")
            return cmd_solve(cfg, args.horizon, out)
        if args.command == "ladder":
            return cmd_ladder(cfg, out)
        if args.command == "check":
            return cmd_check(cfg, out)
        return cmd_compare(cfg, args.candidate, args.reference)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
