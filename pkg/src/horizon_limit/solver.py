"""Finite-horizon solvers for the free-terminal-state problem.

With ``H(c, k, lam) = U(c) + lam * g(c, k)`` the optimality system is::

    k'   =  g(c, k),            k(0) = k0
    lam' = -lam * g_k(c, k)
    c    =  argmax over the control box of H(c, k, lam)
    lam(T) = 0                  (free terminal state)

When ``lam(T) = 0`` would drive capital below the state bound, the
terminal condition becomes ``k(T) = k_lb`` with ``lam(T) >= 0``.

Three routes are provided:

* single shooting on ``lam(0)`` (Newton with bracketing safeguards);
  the state/costate pair is stepped with the implicit trapezoidal rule so
  results satisfy the same discrete dynamics that attainability checks use;
* projected-gradient ascent on the discretised objective (adjoint
  gradient, spectral step, backtracking), used as a fallback;
* a brute-force dynamic-programming oracle for cross-checking.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from .problem import (Grid, Problem, ProblemError, Trajectory, trapezoid_state_step,
                      validate_model)
from .quadrature import Rule, accumulated_value, weights

log = logging.getLogger(__name__)

__all__ = [
    "Method", "SolverOptions", "ResidualReport", "SolverError", "NewtonDivergence",
    "ControlRecoveryError", "StateBoundViolation", "solve_finite_horizon",
    "hamiltonian_residuals", "recover_control", "collocation_objective", "dp_oracle",
    "DPResult",
]


class SolverError(RuntimeError):
    pass


class NewtonDivergence(SolverError):
    pass


class ControlRecoveryError(SolverError):
    pass


class StateBoundViolation(SolverError):
    pass


class Method(str, enum.Enum):
    PMP_SHOOTING = "pmp_shooting"
    COLLOCATION = "collocation"
    AUTO = "auto"

    @classmethod
    def _missing_(cls, value):
        aliases = {"pmpshooting": cls.PMP_SHOOTING, "shooting": cls.PMP_SHOOTING}
        return aliases.get(str(value).lower().replace("-", "_").replace("_", ""))


@dataclass
class SolverOptions:
    method: Method = Method.AUTO
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    collocation_max_iters: int = 5000
    collocation_step_tol: float = 1e-9
    nodes: int = 100
    rule: Rule = Rule.SIMPSON
    polish: bool = True

    def __post_init__(self):
        self.method = Method(self.method)
        self.rule = Rule.coerce(self.rule)
        if self.newton_tol <= 0 or self.collocation_step_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.nodes < 2:
            raise ValueError("need at least 2 grid intervals")
        if self.max_newton_iters < 1 or self.collocation_max_iters < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class ResidualReport:
    dynamics_residual: float
    stationarity_residual: float
    transversality_residual: float
    costate_residual: float

    def max(self) -> float:
        return max(asdict(self).values())

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Control recovery

def _hc(p: Problem, c: float, k: float, lam: float) -> float:
    """dH/dc at (c, k, lam)."""
    return p.dU(c) + lam * p.g_c(c, k)


def _H(p: Problem, c: float, k: float, lam: float) -> float:
    return p.U(c) + lam * p.g(c, k)


def _endpoint(f, x: float, inward: float):
    """Evaluate f at a finite bound, nudging inward where f is undefined."""
    try:
        return x, f(x)
    except ex.ExprError:
        pass
    for rel in (1e-12, 1e-9, 1e-6):
        xe = x + inward * rel * max(1.0, abs(x))
        try:
            return xe, f(xe)
        except ex.ExprError:
            continue
    raise ControlRecoveryError(f"dH/dc undefined near the control bound {x}")


def _root_in(f, a: float, b: float, fa: float, fb: float, x0=None) -> float:
    """Root of a function with f(a) > 0 > f(b), by bracketed Newton."""
    x = x0 if x0 is not None and a < x0 < b else 0.5 * (a + b)
    for _ in range(200):
        fx = f(x)
        if fx == 0.0:
            return x
        if fx > 0.0:
            a = x
        else:
            b = x
        if b - a <= 4e-16 * max(1.0, abs(a), abs(b)):
            return x
        d = 1e-7 * max(1.0, abs(x))
        xd = x + d if x + d < b else x - d
        try:
            slope = (f(xd) - fx) / (xd - x)
        except ex.ExprError:
            slope = 0.0
        xn = x - fx / slope if slope < 0.0 else None
        if xn is None or not a < xn < b:
            xn = 0.5 * (a + b)
        if abs(xn - x) <= 1e-15 * max(1.0, abs(x)):
            return xn
        x = xn
    return x


def recover_control(p: Problem, k: float, lam: float, guess=None, scan: int = 0) -> float:
    """Maximise ``H(., k, lam)`` over the control box.

    Solves ``dH/dc = 0`` with bracketed Newton, clipping to a bound when
    the derivative keeps one sign.  With ``scan > 0`` the bracket is
    sampled for several sign changes and the root with the largest ``H`` is
    kept (a warning is logged when more than one is found).
    """
    lo, hi = p.control_bounds

    def f(c):
        return _hc(p, c, k, lam)

    a = b = None
    fa = fb = None
    if math.isfinite(lo):
        a, fa = _endpoint(f, lo, +1.0)
        if fa <= 0.0 and not scan:
            return lo
    if math.isfinite(hi):
        b, fb = _endpoint(f, hi, -1.0)
        if fb >= 0.0 and not scan:
            return hi

    if a is None or b is None:
        x0 = guess if guess is not None and p.in_bounds(guess) else (
            a if a is not None else b if b is not None else 0.0)
        if a is None and b is None:
            try:
                fx0 = f(x0)
            except ex.ExprError as exc:
                raise ControlRecoveryError(str(exc)) from None
            if fx0 == 0.0:
                return x0
            if fx0 > 0.0:
                a, fa = x0, fx0
            else:
                b, fb = x0, fx0
        step = 1.0
        for _ in range(80):
            if a is None:
                x = b - step
                try:
                    fx = f(x)
                except ex.ExprError:
                    fx = None
                if fx is not None and fx > 0.0:
                    a, fa = x, fx
                    break
                if fx is not None and fx <= 0.0:
                    b, fb = x, fx
            else:
                x = a + step
                try:
                    fx = f(x)
                except ex.ExprError:
                    fx = None
                if fx is not None and fx < 0.0:
                    b, fb = x, fx
                    break
                if fx is not None and fx >= 0.0:
                    a, fa = x, fx
            step *= 2.0
        else:
            raise ControlRecoveryError(
                f"dH/dc has no root for k={k:.6g}, lam={lam:.6g}: H is unbounded in c")
        if a is None or b is None:
            raise ControlRecoveryError(f"no bracket for dH/dc (k={k:.6g}, lam={lam:.6g})")

    if not scan:
        return _root_in(f, a, b, fa, fb, guess)

    # candidates: finite bounds plus every sign change on a sample of [a, b]
    cands = [x for x in (lo, hi) if math.isfinite(x)]
    xs = np.linspace(a, b, scan + 2)
    fs = []
    for x in xs:
        try:
            fs.append(f(float(x)))
        except ex.ExprError:
            fs.append(math.nan)
    roots = []
    for i in range(len(xs) - 1):
        f0, f1 = fs[i], fs[i + 1]
        if f0 == 0.0:
            roots.append(float(xs[i]))
        elif f0 > 0.0 > f1:
            roots.append(_root_in(f, float(xs[i]), float(xs[i + 1]), f0, f1))
    if fs[-1] == 0.0:
        roots.append(float(xs[-1]))
    if len(roots) > 1:
        log.warning("dH/dc has %d roots in the control box (k=%g, lam=%g); "
                    "keeping the one with the largest H", len(roots), k, lam)
    cands.extend(roots)
    if not cands:
        return _root_in(f, a, b, fa, fb, guess)
    best, best_h = None, -math.inf
    for x in cands:
        try:
            hx = _H(p, x, k, lam)
        except ex.ExprError:
            continue
        if hx > best_h:
            best, best_h = x, hx
    if best is None:
        raise ControlRecoveryError(f"H undefined at every candidate (k={k:.6g}, lam={lam:.6g})")
    return best


def _needs_scan(p: Problem) -> int:
    kinds = {d.kind for d in validate_model(p, 32)}
    return 16 if kinds & {"monotonicity", "concavity"} else 0


# ---------------------------------------------------------------------------
# Shooting

class _Integrator:
    """Implicit-trapezoid stepping of (k, lam) with pointwise control recovery."""

    def __init__(self, p: Problem, grid: Grid, scan: int):
        self.p, self.grid, self.scan = p, grid, scan
        self.step_tol = 1e-13

    def _rhs(self, x: float, y: float, guess):
        c = recover_control(self.p, x, y, guess, self.scan)
        d = ex.Dual.lift(self.p._g(c, ex.Dual(x, 1.0)))
        return c, d.value, y * d.deriv

    def run(self, lam0: float) -> Trajectory:
        p, grid = self.p, self.grid
        N, h = grid.N, grid.h
        c = np.empty(N + 1)
        k = np.empty(N + 1)
        lam = np.empty(N + 1)
        k[0], lam[0] = p.k0, lam0
        c[0], g0, hk0 = self._rhs(p.k0, lam0, None)
        for i in range(N):
            ki, li = k[i], lam[i]
            x, y = ki + h * g0, li - h * hk0
            guess = c[i]

            def resid(x, y):
                cc, gg, hk = self._rhs(x, y, guess)
                return (x - ki - 0.5 * h * (g0 + gg), y - li + 0.5 * h * (hk0 + hk)), cc, gg, hk

            (r1, r2), cc, gg, hk = resid(x, y)
            scale = 1.0 + abs(ki) + abs(li)
            for _ in range(40):
                norm = max(abs(r1), abs(r2))
                if norm <= self.step_tol * scale:
                    break
                dx = 1e-7 * max(1.0, abs(x))
                dy = 1e-7 * max(1.0, abs(y))
                (a1, a2), *_ = resid(x + dx, y)
                (b1, b2), *_ = resid(x, y + dy)
                j11, j21 = (a1 - r1) / dx, (a2 - r2) / dx
                j12, j22 = (b1 - r1) / dy, (b2 - r2) / dy
                det = j11 * j22 - j12 * j21
                if det == 0.0:
                    raise NewtonDivergence(f"singular step Jacobian at node {i}")
                sx = (r1 * j22 - r2 * j12) / det
                sy = (j11 * r2 - j21 * r1) / det
                t = 1.0
                for _ in range(30):
                    try:
                        (n1, n2), ncc, ngg, nhk = resid(x - t * sx, y - t * sy)
                    except ControlRecoveryError:
                        t *= 0.5
                        continue
                    if max(abs(n1), abs(n2)) < norm or t < 1e-6:
                        break
                    t *= 0.5
                else:
                    raise NewtonDivergence(f"step line search failed at node {i}")
                x, y = x - t * sx, y - t * sy
                r1, r2, cc, gg, hk = n1, n2, ncc, ngg, nhk
            else:
                raise NewtonDivergence(f"implicit step did not converge at node {i}")
            k[i + 1], lam[i + 1], c[i + 1] = x, y, cc
            g0, hk0 = gg, hk
        return Trajectory(grid, c, k, lam)


def _solve_scalar(F, guesses, tol: float, max_iter: int, what: str, expand: bool = True):
    """Find x with |F(x)| <= tol: Newton from each guess, bracketed when possible.

    ``F`` returns ``(value, payload)``; the payload of the accepted point is
    returned with it.  Without ``expand`` no bracket is searched for beyond
    the Newton iterates.
    """
    seen = {}

    def ev(x):
        if x not in seen:
            seen[x] = F(x)
        return seen[x]

    def bracket():
        pts = sorted((x, v[0]) for x, v in seen.items() if v is not None)
        best = None
        for (x0, f0), (x1, f1) in zip(pts, pts[1:]):
            if (f0 < 0.0 < f1) or (f1 < 0.0 < f0):
                if best is None or x1 - x0 < best[1] - best[0]:
                    best = (x0, x1)
        return best

    def safe_ev(x):
        try:
            return ev(x)
        except (SolverError, ex.ExprError) as exc:
            seen[x] = None
            log.debug("%s: F(%g) failed: %s", what, x, exc)
            return None

    def done(x):
        r = seen.get(x)
        return r is not None and abs(r[0]) <= tol

    iters = 0
    for g in guesses:
        x = float(g)
        r = safe_ev(x)
        if r is None:
            continue
        if done(x):
            return x, r[1], iters
        for _ in range(max_iter):
            if bracket():
                break
            iters += 1
            d = 1e-6 * max(1.0, abs(x))
            rd = safe_ev(x + d)
            if rd is None:
                break
            slope = (rd[0] - r[0]) / d
            if slope == 0.0 or not math.isfinite(slope):
                break
            step = -r[0] / slope
            t = 1.0
            while t > 1e-8:
                rn = safe_ev(x + t * step)
                if rn is not None and abs(rn[0]) < abs(r[0]):
                    break
                t *= 0.5
            else:
                break
            x, r = x + t * step, rn
            if done(x):
                return x, r[1], iters

    br = bracket()
    if br is None and expand:
        # expand around the guesses looking for a sign change
        base = [float(g) for g in guesses]
        for j in range(60):
            s = 2.0 ** (j - 4)
            for x0 in base:
                for x in (x0 + s * max(1.0, abs(x0)), x0 - s * max(1.0, abs(x0))):
                    r = safe_ev(x)
                    if r is not None and done(x):
                        return x, r[1], iters
            br = bracket()
            if br is not None:
                break
    if br is None:
        raise NewtonDivergence(f"{what}: no root found from guesses {list(guesses)}")

    a, b = br
    fa = seen[a][0]
    x = a if abs(fa) < abs(seen[b][0]) else b
    for _ in range(max_iter + 200):
        iters += 1
        r = seen[x]
        if abs(r[0]) <= tol:
            return x, r[1], iters
        d = 1e-6 * max(1.0, abs(x))
        rd = safe_ev(x + d) if a < x + d < b else safe_ev(x - d)
        xn = None
        if rd is not None:
            dx = d if a < x + d < b else -d
            slope = (rd[0] - r[0]) / dx
            if slope != 0.0 and math.isfinite(slope):
                xn = x - r[0] / slope
        if xn is None or not a < xn < b:
            xn = 0.5 * (a + b)
        rn = safe_ev(xn)
        if rn is None:
            raise NewtonDivergence(f"{what}: integration failed inside the bracket at {xn}")
        if (rn[0] < 0.0) == (fa < 0.0):
            a, fa = xn, rn[0]
        else:
            b = xn
        x = xn
        if b - a <= 1e-15 * max(1.0, abs(a), abs(b)):
            if abs(rn[0]) <= tol:
                return x, rn[1], iters
            raise NewtonDivergence(
                f"{what}: bracket collapsed at {x} with residual {rn[0]:.3g} (discontinuity)")
    raise NewtonDivergence(f"{what}: no convergence in {max_iter} iterations")


def _steady_costate(p: Problem) -> float:
    """Costate that makes the k0-stationary consumption level optimal."""
    lo, hi = p.control_bounds
    k0 = p.k0

    def g(c):
        return p.g(c, k0)

    c_ss = None
    a = lo if math.isfinite(lo) else -1.0
    b = hi if math.isfinite(hi) else max(a + 1.0, 1.0)
    try:
        ga, gb = g(a), g(b)
        for _ in range(60):
            if ga * gb <= 0.0:
                break
            if not math.isfinite(hi):
                b = 2.0 * b if b > 0 else 1.0
            elif not math.isfinite(lo):
                a = 2.0 * a if a < 0 else -1.0
            else:
                break
            ga, gb = g(a), g(b)
        if ga * gb <= 0.0:
            for _ in range(200):
                m = 0.5 * (a + b)
                gm = g(m)
                if (gm <= 0.0) == (ga <= 0.0):
                    a, ga = m, gm
                else:
                    b = m
                if b - a <= 1e-14 * max(1.0, abs(m)):
                    break
            c_ss = 0.5 * (a + b)
    except ex.ExprError:
        c_ss = None
    if c_ss is None:
        c_ss = 0.5 * (lo + hi) if math.isfinite(lo + hi) else min(max(0.0, lo), hi)
    try:
        gc = p.g_c(c_ss, k0)
        return -p.dU(c_ss) / gc if gc != 0.0 else 0.0
    except ex.ExprError:
        return 0.0


def _shooting(p: Problem, grid: Grid, opts: SolverOptions, extra_guesses=()) -> Trajectory:
    scan = _needs_scan(p)
    integ = _Integrator(p, grid, scan)
    lb = p.state_lower_bound
    state_tol = 1e-9 * max(1.0, abs(p.k0))
    guesses = list(extra_guesses) + [0.0, _steady_costate(p)]

    def free_end(lam0):
        tr = integ.run(lam0)
        return tr.lam[-1], tr

    def pinned_end(lam0):
        tr = integ.run(lam0)
        return tr.k[-1] - lb, tr

    def free(thorough):
        iters = opts.max_newton_iters if thorough else min(8, opts.max_newton_iters)
        return _solve_scalar(free_end, guesses, opts.newton_tol, iters, "lam(T)=0 shooting",
                             thorough)

    # with a state bound the pinned end is the usual alternative, so a long
    # search for a free end is kept as a last resort
    bounded = math.isfinite(lb)
    traj = None
    failure = None
    try:
        lam0, traj, iters = free(not bounded)
        terminal = "free"
    except SolverError as exc:
        failure = exc
    if traj is None or traj.k.min() < lb - state_tol:
        if not bounded:
            raise failure or StateBoundViolation("state bound violated")
        if traj is not None:
            guesses = [lam0] + guesses
        try:
            lam0, traj, iters2 = _solve_scalar(
                pinned_end, guesses, opts.newton_tol * max(1.0, abs(p.k0)),
                opts.max_newton_iters, "k(T)=k_lb shooting")
        except SolverError as pinned_failure:
            if failure is None:
                raise
            try:
                lam0, traj, iters = free(True)
            except SolverError:
                raise pinned_failure from None
            if traj.k.min() < lb - state_tol:
                raise pinned_failure from None
            terminal = "free"
        else:
            iters = iters2 if failure else iters + iters2
            terminal = "state_bound"
            if traj.lam[-1] < -opts.newton_tol:
                raise StateBoundViolation(
                    f"terminal state bound needs a negative multiplier ({traj.lam[-1]:.3g})")
            inner = np.flatnonzero(traj.k[:-1] < lb - state_tol)
            if inner.size:
                raise StateBoundViolation(
                    f"state hits its lower bound before T at node {inner[0]} "
                    f"(t={grid.nodes[inner[0]]:.6g}); interior state constraints are not "
                    f"supported")
    traj.info.update(method="pmp_shooting", lam0=float(lam0), terminal=terminal, iterations=iters)
    return traj


# ---------------------------------------------------------------------------
# Collocation (projected gradient on the discretised problem)

def collocation_objective(p: Problem, grid: Grid, c, rule=Rule.SIMPSON, mu=None,
                          rho: float = 0.0, want_grad: bool = True):
    """Discretised objective with an augmented-Lagrangian state-bound term.

    ``P(c) = sum_i w_i U(c_i) - sum_i psi(k_i - k_lb; mu_i, rho)`` where the
    states follow the trapezoidal recursion.  Returns ``(P, grad, k, adj)``
    with ``grad`` the exact gradient of ``P`` (discrete adjoint) and ``adj``
    the adjoint sensitivities ``dP/dk_i``.
    """
    c = np.asarray(c, dtype=float)
    N, h = grid.N, grid.h
    w = weights(grid, rule)
    lb = p.state_lower_bound
    use_bound = math.isfinite(lb) and rho > 0.0
    if mu is None:
        mu = np.zeros(N + 1)
    k = np.empty(N + 1)
    k[0] = p.k0
    gv = np.empty(N + 1)
    gv[0] = p.g(c[0], k[0])
    for i in range(N):
        k[i + 1] = trapezoid_state_step(p, k[i], c[i], c[i + 1], h, gv[i])
        gv[i + 1] = p.g(c[i + 1], k[i + 1])
    P = float(np.dot(w, p.U_array(c)))
    e = np.zeros(N + 1)
    if use_bound:
        s = k - lb
        s[0] = max(s[0], 0.0)
        active = s < mu / rho
        P -= float(np.sum(np.where(active, -mu * s + 0.5 * rho * s * s, -mu * mu / (2 * rho))[1:]))
        e = np.where(active, mu - rho * s, 0.0)
        e[0] = 0.0
    if not want_grad:
        return P, None, k, None
    gc = np.empty(N + 1)
    gk = np.empty(N + 1)
    du = np.empty(N + 1)
    for i in range(N + 1):
        du[i] = p.dU(c[i])
        gc[i] = p.g_c(c[i], k[i])
        gk[i] = p.g_k(c[i], k[i])
    A = 1.0 + 0.5 * h * gk
    D = 1.0 - 0.5 * h * gk
    adj = np.empty(N + 1)
    adj[N] = e[N]
    for i in range(N - 1, -1, -1):
        adj[i] = e[i] + adj[i + 1] * A[i] / D[i + 1]
    grad = w * du
    grad[:-1] += adj[1:] * 0.5 * h * gc[:-1] / D[1:]
    grad[1:] += adj[1:] * 0.5 * h * gc[1:] / D[1:]
    return P, grad, k, adj


def _clip_box(p: Problem):
    lo, hi = p.control_bounds
    if math.isfinite(lo):
        try:
            p.dU(lo)
        except ex.ExprError:
            lo = lo + 1e-10 * max(1.0, abs(lo))
    return lo, hi


def _spg(p, grid, c, rule, mu, rho, opts, lo, hi):
    w = weights(grid, rule)
    P, G, k, adj = collocation_objective(p, grid, c, rule, mu, rho)
    hist = [P]
    step = 1.0
    for it in range(opts.collocation_max_iters):
        sg = G / w
        pg = np.clip(c + sg, lo, hi) - c
        if np.max(np.abs(pg)) <= opts.collocation_step_tol:
            return c, P, G, k, adj, it, True
        d = np.clip(c + step * sg, lo, hi) - c
        ref = max(hist[-10:])
        slope = float(np.dot(G, d))
        alpha = 1.0
        while True:
            cn = c + alpha * d
            try:
                Pn, Gn, kn, adjn = collocation_objective(p, grid, cn, rule, mu, rho)
            except (ex.ExprError, ProblemError):
                Pn = -math.inf
            if Pn >= ref + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                # objective differences are at roundoff; accept a small gradient
                stalled = np.max(np.abs(pg)) <= max(opts.collocation_step_tol, 1e-6)
                return c, P, G, k, adj, it, stalled
        s = cn - c
        y = (Gn - G) / w
        sy = -float(np.dot(w * s, y))
        step = min(max(float(np.dot(w * s, s)) / sy, 1e-10), 1e10) if sy > 0 else 1e10
        c, P, G, k, adj = cn, Pn, Gn, kn, adjn
        hist.append(P)
    return c, P, G, k, adj, opts.collocation_max_iters, False


def _collocation(p: Problem, grid: Grid, opts: SolverOptions) -> Trajectory:
    # The objective is always trapezoidal here: Simpson weights paired with
    # trapezoidal dynamics reward zig-zag controls on alternating nodes.
    lo, hi = _clip_box(p)
    lam_ss = _steady_costate(p)
    try:
        c_start = recover_control(p, p.k0, lam_ss)
    except SolverError:
        c_start = 0.0
    c = np.full(grid.N + 1, min(max(c_start, lo), hi))
    lb = p.state_lower_bound
    mu = np.zeros(grid.N + 1)
    rho = 10.0 if math.isfinite(lb) else 0.0
    viol_prev = math.inf
    total = 0
    for outer in range(30):
        c, P, G, k, adj, its, ok = _spg(p, grid, c, Rule.TRAPEZOID, mu, rho, opts, lo, hi)
        total += its
        if not math.isfinite(lb):
            break
        viol = max(0.0, float(np.max(lb - k)))
        mu = np.maximum(0.0, mu - rho * (k - lb))
        mu[0] = 0.0
        if viol <= 1e-8 * max(1.0, abs(p.k0)) and ok:
            break
        if viol > 0.25 * viol_prev:
            rho *= 10.0
        viol_prev = viol
    else:
        raise SolverError("collocation: state bound not satisfied after 30 outer iterations")
    if not ok:
        raise SolverError(f"collocation did not converge in {opts.collocation_max_iters} iterations")
    P, G, k, adj = collocation_objective(p, grid, c, Rule.TRAPEZOID, mu, rho)
    traj = Trajectory(grid, c, k, adj)
    traj.info.update(method="collocation", lam0=float(adj[0]), iterations=total)
    return traj


# ---------------------------------------------------------------------------

def _check_state_reachable(p: Problem, grid: Grid) -> None:
    """Raise if even the capital-maximising control breaks the state bound."""
    lo, hi = p.control_bounds
    lb = p.state_lower_bound
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(lb)):
        return
    cs = np.linspace(lo, hi, 33)
    k = p.k0
    for i in range(grid.N):
        try:
            best = float(cs[np.argmax(p.g_array(cs, np.full_like(cs, k)))])
            k = trapezoid_state_step(p, k, best, best, grid.h)
        except ex.ExprError:
            return
        if k < lb - 1e-9 * max(1.0, abs(p.k0)):
            raise StateBoundViolation(
                f"no admissible control keeps the state above {lb:g}: it is crossed by "
                f"node {i + 1} (t={grid.nodes[i + 1]:.6g}) even at maximal accumulation")


def solve_finite_horizon(p: Problem, T: float, opts: SolverOptions | None = None) -> Trajectory:
    """Optimal path on ``[0, T]`` for the free-terminal-state problem."""
    opts = opts or SolverOptions()
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    grid = Grid(float(T), opts.nodes)
    _check_state_reachable(p, grid)
    if opts.method is Method.PMP_SHOOTING:
        traj = _shooting(p, grid, opts)
    elif opts.method is Method.COLLOCATION:
        try:
            traj = _collocation_then_polish(p, grid, opts)
        except (ex.ExprError, ProblemError) as exc:
            raise SolverError(f"collocation failed: {exc}") from exc
    else:
        try:
            traj = _shooting(p, grid, opts)
        except SolverError as exc:
            log.info("shooting failed for T=%g (%s); falling back to collocation", T, exc)
            try:
                traj = _collocation_then_polish(p, grid, opts)
            except (ex.ExprError, ProblemError) as exc2:
                raise SolverError(f"shooting failed ({exc}); collocation failed ({exc2})") from exc2
    accumulated_value(traj, p, opts.rule)
    return traj


def _collocation_then_polish(p, grid, opts):
    raw = _collocation(p, grid, opts)
    if not opts.polish:
        return raw
    try:
        polished = _shooting(p, grid, opts, extra_guesses=(raw.info["lam0"],))
    except SolverError as exc:
        log.warning("collocation result could not be polished by shooting: %s", exc)
        return raw
    polished.info.update(method="collocation+shooting", collocation_iterations=raw.info["iterations"])
    return polished


def hamiltonian_residuals(traj: Trajectory, p: Problem) -> ResidualReport:
    """First-order-condition residuals of ``traj`` for ``p``.

    Dynamics and costate residuals are trapezoidal defects per unit time;
    stationarity is ``|dH/dc|`` at interior controls and the sign-violation
    at active bounds; transversality is ``|min(lam_N, k_N - k_lb)|``, which
    equals ``|lam_N|`` when the state bound is slack.
    """
    n = len(traj.grid)
    if not (traj.c.shape == traj.k.shape == traj.lam.shape == (n,)):
        raise ValueError("trajectory arrays do not match the grid")
    h = traj.grid.h
    lo, hi = p.control_bounds
    hc = np.empty(n)
    hk = np.empty(n)
    gv = np.empty(n)
    for i in range(n):
        c, k, lam = float(traj.c[i]), float(traj.k[i]), float(traj.lam[i])
        try:
            d = ex.Dual.lift(p._g(c, ex.Dual(k, 1.0)))
            gv[i], hk[i] = d.value, lam * d.deriv
        except ex.ExprError as exc:
            raise SolverError(f"dynamics undefined at node {i}: {exc}") from None
        try:
            f = _hc(p, c, k, lam)
        except ex.ExprError as exc:
            at_lo = math.isfinite(lo) and abs(c - lo) <= 1e-12 * max(1.0, abs(lo))
            if at_lo:
                f = math.inf  # U' blows up at the lower bound: pushing c up is always better
            else:
                raise SolverError(f"dH/dc undefined at node {i}: {exc}") from None
        if math.isfinite(lo) and abs(c - lo) <= 1e-12 * max(1.0, abs(lo)):
            hc[i] = max(0.0, f)
        elif math.isfinite(hi) and abs(c - hi) <= 1e-12 * max(1.0, abs(hi)):
            hc[i] = max(0.0, -f)
        else:
            hc[i] = abs(f)
    if n > 1:
        dyn = float(np.max(np.abs(np.diff(traj.k) - 0.5 * h * (gv[:-1] + gv[1:])))) / h
        cos = float(np.max(np.abs(np.diff(traj.lam) + 0.5 * h * (hk[:-1] + hk[1:])))) / h
    else:
        dyn = cos = 0.0
    slack = traj.k[-1] - p.state_lower_bound
    trans = abs(min(float(traj.lam[-1]), float(slack)))
    return ResidualReport(dyn, float(np.max(hc)), trans, cos)


# ---------------------------------------------------------------------------
# Dynamic-programming oracle

@dataclass
class DPResult:
    value: float
    trajectory: Trajectory | None
    state_grid: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)
    k_max: float = math.nan
    growth_bound: float = math.nan
    lipschitz: float = math.nan

    @property
    def error_bound(self) -> float:
        """Interpolation error bound ``h_state * Lipschitz(V)`` plus a rounding floor."""
        if self.state_grid is None or len(self.state_grid) < 2:
            return 0.0
        rounding = 1e-12 * max(1.0, abs(self.value))
        return float(self.state_grid[1] - self.state_grid[0]) * self.lipschitz + rounding

    def __iter__(self):
        yield self.value
        yield self.trajectory


def _rk4_const(p: Problem, k, c, dt):
    s1 = p.g_array(c, k)
    s2 = p.g_array(c, k + 0.5 * dt * s1)
    s3 = p.g_array(c, k + 0.5 * dt * s2)
    s4 = p.g_array(c, k + dt * s3)
    return k + dt / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4)


def _interp(V, xs, x):
    """Linear interpolation of V on the uniform grid xs; -inf is absorbing."""
    n = len(xs)
    h = (xs[-1] - xs[0]) / (n - 1)
    pos = (x - xs[0]) / h
    i = np.clip(np.floor(pos).astype(int), 0, n - 2)
    t = pos - i
    v0, v1 = V[i], V[i + 1]
    with np.errstate(invalid="ignore"):
        out = np.where(t == 0.0, v0, np.where(t == 1.0, v1, (1.0 - t) * v0 + t * v1))
    out = np.where(np.isneginf(v0) & (t < 1.0) | np.isneginf(v1) & (t > 0.0), -np.inf, out)
    return out


def dp_oracle(p: Problem, T: float, state_nodes: int, control_nodes: int,
              time_steps: int) -> DPResult:
    """Backward dynamic programming on a state x control x time grid.

    The state grid spans ``[k_lb, k_max]`` where ``k_max = k0 * exp(L*T)``
    comes from integrating the upper envelope ``k' = max_c g(c, k)``.
    Controls are held constant over each time step (RK4 transition, reward
    ``dt * U(c)``), the value function is interpolated linearly in ``k``
    and the terminal value is zero.  The returned trajectory is the greedy
    forward rollout.
    """
    lo, hi = p.control_bounds
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("dp_oracle needs finite control bounds")
    if not math.isfinite(p.state_lower_bound):
        raise ValueError("dp_oracle needs a finite state lower bound")
    if min(state_nodes, control_nodes) < 2 or time_steps < 1:
        raise ValueError("dp_oracle grids need at least 2 nodes")
    if T == 0:
        return DPResult(0.0, None)
    if T < 0:
        raise ValueError("horizon must be >= 0")

    lb = p.state_lower_bound
    cs = np.linspace(lo, hi, control_nodes)
    dt = T / time_steps

    # upper envelope of reachable capital
    kk = p.k0
    sub = 4
    for _ in range(time_steps * sub):
        h = dt / sub

        def env(x):
            return float(np.max(p.g_array(cs, np.full_like(cs, x))))

        s1 = env(kk)
        s2 = env(kk + 0.5 * h * s1)
        s3 = env(kk + 0.5 * h * s2)
        s4 = env(kk + h * s3)
        kk = kk + h / 6.0 * (s1 + 2 * s2 + 2 * s3 + s4)
    k_max = max(kk, p.k0)
    k_max = k_max + 0.02 * (k_max - lb) + 1e-12
    growth = math.log(k_max / p.k0) / T if p.k0 > 0 and k_max > 0 else math.nan
    ks = np.linspace(lb, k_max, state_nodes)

    reward = dt * p.U_array(cs)
    K, C = np.meshgrid(ks, cs, indexing="ij")
    nxt = _rk4_const(p, K, C, dt)
    feasible = (nxt >= lb - 1e-12) & (nxt <= k_max)
    nxt_c = np.clip(nxt, lb, k_max)

    V = np.zeros((time_steps + 1, state_nodes))
    for n in range(time_steps - 1, -1, -1):
        Q = reward[None, :] + _interp(V[n + 1], ks, nxt_c)
        Q = np.where(feasible, Q, -np.inf)
        V[n] = Q.max(axis=1)

    value = float(_interp(V[0], ks, np.array([p.k0]))[0])
    finite = np.isfinite(V[0])
    slopes = np.abs(np.diff(V[0]))[finite[:-1] & finite[1:]] / (ks[1] - ks[0])
    lipschitz = float(slopes.max()) if slopes.size else math.inf

    grid = Grid(float(T), time_steps)
    kr = np.empty(time_steps + 1)
    cr = np.empty(time_steps + 1)
    lr = np.empty(time_steps + 1)
    kr[0] = p.k0
    for n in range(time_steps):
        x = np.full_like(cs, kr[n])
        xn = _rk4_const(p, x, cs, dt)
        ok = xn >= lb - 1e-12
        Q = np.where(ok, reward + _interp(V[n + 1], ks, np.clip(xn, lb, k_max)), -np.inf)
        j = int(np.argmax(Q))
        if not np.isfinite(Q[j]):
            raise ValueError(f"dp rollout has no feasible control at step {n}")
        cr[n] = cs[j]
        kr[n + 1] = xn[j]
        if kr[n + 1] > k_max:
            raise ValueError("dp rollout left the state grid: k_max is insufficient")
    cr[-1] = cr[-2]
    for n in range(time_steps + 1):
        lr[n] = float(np.interp(kr[n], ks, np.gradient(np.where(np.isfinite(V[n]), V[n], 0.0), ks)))
    traj = Trajectory(grid, cr, kr, lr)
    traj.value = float(np.sum(reward[np.searchsorted(cs, cr[:-1])]))
    traj.info.update(method="dp_rollout")
    return DPResult(value, traj, ks, V[0], k_max, growth, lipschitz)
