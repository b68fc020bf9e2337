"""Overtaking, weak maximality and the ratio condition, evaluated on finite samples.

Everything here works on sampled horizons ``T_j``, so every ``liminf`` is a
tail infimum with a trend label.  Verdicts are evidence, never proofs.

Orientation: for a candidate path and a reference path,
``D(T) = W_ref(T) - W_cand(T)`` and the candidate overtakes the reference
when ``liminf D < 0``.  Some authors state the reversed difference with a
positive ``liminf``; the two agree only up to that sign flip.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .ladder import HorizonLadder, LadderError, LimitPath, resample
from .problem import Grid, Problem, Trajectory, is_attainable
from .quadrature import Rule, integrate, utility_samples

__all__ = [
    "STRICTNESS", "CAVEAT", "Trend", "Verdict", "SampledSequence", "LiminfEstimate",
    "RatioSample", "ConditionReport", "OvertakingVerdict", "WeakMaximalityReport",
    "ProductCheckReport", "AttainabilityError", "liminf_estimate", "condition_ratio",
    "classify_ratios", "check_theorem_condition", "overtakes", "verify_weak_maximality",
    "ratio_decomposition_check", "liminf_product_check",
]

STRICTNESS = 1e-9
UNBOUNDED_STEP = 1e-6
CAVEAT = "finite-sample estimate; not a proof"


class AttainabilityError(ValueError):
    pass


class Trend(str, enum.Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"
    OSCILLATING = "oscillating"
    FLAT = "flat"


class Verdict(str, enum.Enum):
    SATISFIED = "Satisfied"
    VIOLATED = "Violated"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class SampledSequence:
    T: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if T.ndim != 1 or T.shape != s.shape:
            raise ValueError(f"index and samples must be equal-length vectors, got "
                             f"{T.shape} and {s.shape}")
        if T.size < 2:
            raise ValueError("a sampled sequence needs at least 2 samples")
        if np.any(np.diff(T) <= 0):
            raise ValueError("sample index must be strictly increasing")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "s", s)

    def __len__(self) -> int:
        return self.T.size

    def __neg__(self) -> "SampledSequence":
        return SampledSequence(self.T, -self.s)

    def to_dict(self) -> dict:
        return {"T": self.T.tolist(), "values": self.s.tolist()}


@dataclass(frozen=True)
class LiminfEstimate:
    estimate: float
    unbounded_below: bool
    tail_fraction: float
    trend: Trend
    tail_size: int
    caveat: str = CAVEAT

    @property
    def value(self) -> float:
        """The estimate, or ``-inf`` when the tail looks unbounded below."""
        return -math.inf if self.unbounded_below else self.estimate

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "unbounded_below": self.unbounded_below,
                "tail_fraction": self.tail_fraction, "trend": self.trend.value,
                "tail_size": self.tail_size, "caveat": self.caveat}


def liminf_estimate(s: SampledSequence, tail_fraction: float = 0.5) -> LiminfEstimate:
    """Tail infimum of ``s`` over its last ``ceil(tail_fraction * n)`` samples.

    The unbounded-below flag requires every tail step to drop by at least
    ``1e-6 * (1 + |s|)`` without the drops shrinking, so ``1/T`` is not
    flagged while ``-T`` is.
    """
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    n = len(s)
    m = math.ceil(tail_fraction * n - 1e-12)
    if m < 2:
        raise ValueError(f"need at least 2 tail samples, got {m} of {n}")
    tail = s.s[n - m:]
    d = np.diff(tail)
    eps = 1e-12 * (1.0 + float(np.max(np.abs(tail))))
    if np.all(np.abs(d) <= eps):
        trend = Trend.FLAT
    elif np.all(d <= eps):
        trend = Trend.DECREASING
    elif np.all(d >= -eps):
        trend = Trend.INCREASING
    else:
        trend = Trend.OSCILLATING
    drops = -d
    steady = bool(np.all(drops >= UNBOUNDED_STEP * (1.0 + np.abs(tail[:-1]))))
    non_shrinking = bool(np.all(drops[1:] >= drops[:-1] * (1 - 1e-9)))
    return LiminfEstimate(float(np.min(tail)), steady and non_shrinking, tail_fraction, trend, m)


# ---------------------------------------------------------------------------
# Ratio condition

@dataclass(frozen=True)
class RatioSample:
    T: float
    numerator: float
    denominator: float
    ratio: float
    defined: bool
    tail_surrogate: bool
    self_reference: bool


def condition_ratio(ladder: HorizonLadder, limit: LimitPath, T: float,
                    rule=Rule.SIMPSON) -> RatioSample:
    """``int (U(c°) - U(c_T)) / int U(c°)`` on ``[0, T]`` for a ladder horizon.

    The numerator integrates the difference of utility samples.  Beyond the
    limit window ``c°`` is the longest ladder solution; when that solution
    is ``c_T`` itself the sample is marked ``self_reference`` since its
    ratio is zero by construction.
    """
    cT = ladder.trajectory_at(T)
    c_lim = limit.on(cT.grid)
    u_lim = utility_samples(c_lim.c, ladder.problem)
    u_T = utility_samples(cT.c, ladder.problem)
    num = integrate(u_lim - u_T, cT.grid, rule)
    den = integrate(u_lim, cT.grid, rule)
    defined = den != 0.0
    ratio = num / den if defined else math.nan
    return RatioSample(float(T), num, den, ratio, defined,
                       bool(c_lim.info.get("tail_surrogate")), limit.tail is cT)


def _non_increasing(a) -> bool:
    slack = 64 * np.finfo(float).eps * max(1.0, max(a))
    return all(y <= x + slack for x, y in zip(a, a[1:]))


def _non_decreasing(a) -> bool:
    slack = 64 * np.finfo(float).eps * max(1.0, max(a))
    return all(y >= x - slack for x, y in zip(a, a[1:]))


def classify_ratios(R, tol_zero: float) -> Verdict:
    """Verdict from the last three ratio samples.

    Satisfied when ``|R|`` ends within ``tol_zero`` and has not grown over
    the last three samples; Violated when all three exceed ``tol_zero`` and
    ``|R|`` has not shrunk; Inconclusive otherwise, including any undefined
    ratio.
    """
    R = [float(r) for r in R]
    if not R:
        return Verdict.INCONCLUSIVE
    last = R[-3:]
    if any(math.isnan(r) for r in last):
        return Verdict.INCONCLUSIVE
    a = [abs(r) for r in last]
    if a[-1] <= tol_zero and _non_increasing(a):
        return Verdict.SATISFIED
    if min(a) > tol_zero and _non_decreasing(a):
        return Verdict.VIOLATED
    return Verdict.INCONCLUSIVE


@dataclass
class ConditionReport:
    samples: list
    ratios: SampledSequence | None
    numerators: list
    denominators: list
    denominator_positive: bool
    limit_estimate: float
    verdict: Verdict
    proof_step_warning: str | None
    tail_surrogate_used: bool
    excluded_horizons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "horizons": [s.T for s in self.samples],
            "ratios": [s.ratio if s.defined else None for s in self.samples],
            "numerators": self.numerators,
            "denominators": self.denominators,
            "denominator_positive": self.denominator_positive,
            "limit_estimate": None if math.isnan(self.limit_estimate) else self.limit_estimate,
            "verdict": self.verdict.value,
            "proof_step_warning": self.proof_step_warning,
            "tail_surrogate_used": self.tail_surrogate_used,
            "excluded_horizons": self.excluded_horizons,
        }


DENOMINATOR_WARNING = ("accumulated utility of the limit path is not positive on every sampled "
                       "horizon; the positivity premise used to pass from the ratio condition to "
                       "non-overtaking fails, so the verdict does not carry that implication")


def check_theorem_condition(ladder: HorizonLadder, limit: LimitPath, rule=Rule.SIMPSON,
                            tol_zero: float = 1e-6) -> ConditionReport:
    """Evaluate the ratio condition on every ladder horizon.

    Samples whose ``c_T`` is the limit surrogate itself are reported but
    left out of the verdict.
    """
    if len(ladder) < 3:
        raise ValueError(f"the ratio check needs at least 3 ladder entries, got {len(ladder)}")
    samples = [condition_ratio(ladder, limit, T, rule) for T in ladder.horizons]
    used = [s for s in samples if not s.self_reference]
    excluded = [s.T for s in samples if s.self_reference]
    verdict = classify_ratios([s.ratio for s in used], tol_zero)
    positive = all(s.denominator > 0 for s in samples)
    R = SampledSequence([s.T for s in samples], [s.ratio for s in samples])
    return ConditionReport(
        samples, R, [s.numerator for s in samples], [s.denominator for s in samples],
        positive, used[-1].ratio if used else math.nan, verdict,
        None if positive else DENOMINATOR_WARNING,
        any(s.tail_surrogate for s in samples), excluded)


# ---------------------------------------------------------------------------
# Overtaking

@dataclass
class OvertakingVerdict:
    differences: SampledSequence
    liminf: LiminfEstimate
    reverse_liminf: LiminfEstimate
    overtakes: bool
    weak_maximality_consistent: bool
    label: str = ""

    def to_dict(self) -> dict:
        return {"label": self.label, "differences": self.differences.to_dict(),
                "liminf": self.liminf.to_dict(), "reverse_liminf": self.reverse_liminf.to_dict(),
                "overtakes": self.overtakes,
                "weak_maximality_consistent": self.weak_maximality_consistent}


def _native(family, T: float, name: str) -> Trajectory:
    """Trajectory of ``family`` on ``[0, T]`` on its own grid spacing."""
    if isinstance(family, Trajectory):
        if T > family.T * (1 + 1e-12):
            raise AttainabilityError(f"{name} path ends at {family.T:g}, before horizon {T:g}")
        try:
            return family.restrict(T)
        except ValueError:
            return resample(family, Grid(T, max(1, math.ceil(T / family.grid.h - 1e-9))))
    if isinstance(family, HorizonLadder):
        return family.trajectory_at(T)
    if isinstance(family, LimitPath):
        h = family.tail.grid.h if family.tail is not None else family.grid.h
        return family.on(Grid(T, max(1, math.ceil(T / h - 1e-9))))
    if isinstance(family, dict):
        for key, tr in family.items():
            if abs(key - T) <= 1e-12 * max(1.0, T):
                return tr
        raise AttainabilityError(f"{name} family has no trajectory for horizon {T:g}")
    if callable(family):
        return family(T)
    raise TypeError(f"unsupported path family for {name}: {type(family).__name__}")


def _on_common_grid(a: Trajectory, b: Trajectory):
    if a.grid == b.grid:
        return a, b
    grid = a.grid if a.grid.N >= b.grid.N else b.grid
    if a.grid.N == b.grid.N:
        grid = Grid(min(a.T, b.T), a.grid.N)
    return (a if a.grid == grid else resample(a, grid)), (b if b.grid == grid else resample(b, grid))


def overtakes(candidate, reference, p: Problem, horizons, rule=Rule.SIMPSON,
              tail_fraction: float = 0.5, attain_tol: float = 1e-6,
              label: str = "") -> OvertakingVerdict:
    """Does ``candidate`` overtake ``reference`` on the sampled horizons?

    Families may be a single long trajectory, a ladder, a limit path, a
    ``{T: trajectory}`` dict, or a callable ``T -> trajectory``.
    """
    horizons = [float(T) for T in horizons]
    D = []
    for T in horizons:
        pair = []
        for fam, name in ((candidate, "candidate"), (reference, "reference")):
            try:
                tr = _native(fam, T, name)
            except LadderError as exc:
                raise AttainabilityError(f"{name} family: {exc}") from exc
            if abs(tr.T - T) > 1e-9 * max(1.0, T):
                raise AttainabilityError(f"{name} family returned horizon {tr.T:g} for {T:g}")
            ok, res = is_attainable(tr, p, attain_tol)
            if not ok:
                raise AttainabilityError(
                    f"{name} path is not attainable on [0, {T:g}] (residual {res:.3g})")
            pair.append(tr)
        cand, ref = _on_common_grid(*pair)
        du = utility_samples(ref.c, p) - utility_samples(cand.c, p)
        D.append(integrate(du, ref.grid, rule))
    seq = SampledSequence(horizons, D)
    fwd = liminf_estimate(seq, tail_fraction)
    rev = liminf_estimate(-seq, tail_fraction)
    return OvertakingVerdict(seq, fwd, rev, fwd.value < -STRICTNESS, rev.value <= STRICTNESS,
                             label)


@dataclass
class WeakMaximalityReport:
    verdicts: list
    no_challenger_overtakes: bool
    warning: str | None
    scope: str = "evidence over the supplied challenger set, not a proof over all attainable paths"

    def to_dict(self) -> dict:
        return {"no_challenger_overtakes": self.no_challenger_overtakes, "warning": self.warning,
                "scope": self.scope, "challengers": [v.to_dict() for v in self.verdicts]}


def verify_weak_maximality(limit: LimitPath, challengers, p: Problem, horizons,
                           rule=Rule.SIMPSON, tail_fraction: float = 0.5,
                           attain_tol: float = 1e-6) -> WeakMaximalityReport:
    """Run ``overtakes(challenger, limit)`` for every challenger."""
    challengers = list(challengers)
    verdicts = []
    for i, ch in enumerate(challengers):
        label = f"challenger {i}"
        if isinstance(ch, Trajectory):
            label = ch.info.get("label", label)
        verdicts.append(overtakes(ch, limit, p, horizons, rule, tail_fraction, attain_tol, label))
    warning = None if challengers else "no challengers supplied; the summary is vacuous"
    return WeakMaximalityReport(verdicts, not any(v.overtakes for v in verdicts), warning)


# ---------------------------------------------------------------------------
# Algebraic checks

def ratio_decomposition_check(W_cand, W_ladder, W_limit) -> float:
    """Max relative error of ``Wc/Wl = (Wc/Wlad) * (Wlad/Wl)`` over the horizons."""
    Wc = np.atleast_1d(np.asarray(W_cand, dtype=float))
    Wd = np.atleast_1d(np.asarray(W_ladder, dtype=float))
    Wl = np.atleast_1d(np.asarray(W_limit, dtype=float))
    if not Wc.shape == Wd.shape == Wl.shape:
        raise ValueError("value sequences must have equal length")
    for name, arr in (("ladder", Wd), ("limit", Wl)):
        zero = np.flatnonzero(arr == 0.0)
        if zero.size:
            raise ZeroDivisionError(f"{name} value is zero at horizon index {zero[0]}")
    direct = Wc / Wl
    split = (Wc / Wd) * (Wd / Wl)
    scale = np.maximum(np.abs(direct), np.finfo(float).tiny)
    err = np.abs(direct - split) / scale
    return float(np.max(err)) if err.size else 0.0


@dataclass
class ProductCheckReport:
    liminf_ab: float
    liminf_a: float
    limit_b: float
    unrestricted_product: float
    discrepancy: float
    b_convergent: bool
    verified: bool
    status: str
    tol: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def liminf_product_check(a: SampledSequence, b: SampledSequence, tail_fraction: float = 0.5,
                         tol: float = 1e-2) -> ProductCheckReport:
    """``liminf(a*b) = liminf(a) * lim(b)`` for positive ``a`` and convergent ``b``.

    ``b`` counts as convergent when its tail spread is within ``tol``.  For
    other inputs the identity is reported unverified, alongside the gap
    between ``liminf(a*b)`` and ``liminf(a) * liminf(b)``.
    """
    if a.T.shape != b.T.shape or np.any(a.T != b.T):
        raise ValueError("sequences must share the same index set")
    la = liminf_estimate(a, tail_fraction)
    lb = liminf_estimate(b, tail_fraction)
    if not (la.estimate > 0 and lb.estimate > 0):
        raise ValueError("both liminf estimates must be positive")
    lab = liminf_estimate(SampledSequence(a.T, a.s * b.s), tail_fraction)
    tail_b = b.s[len(b) - lb.tail_size:]
    convergent = float(np.ptp(tail_b)) <= tol
    lim_b = float(b.s[-1])
    unrestricted = la.estimate * lb.estimate
    if convergent:
        rhs = la.estimate * lim_b
        gap = abs(lab.estimate - rhs)
        ok = gap <= tol
        status = "verified" if ok else f"failed: |liminf(ab) - liminf(a)*lim(b)| = {gap:.3g}"
    else:
        gap = abs(lab.estimate - unrestricted)
        ok = False
        status = (f"unverified: b not convergent (liminf(ab) = {lab.estimate:g}, "
                  f"liminf(a)*liminf(b) = {unrestricted:g})")
    return ProductCheckReport(lab.estimate, la.estimate, lim_b, unrestricted, gap, convergent,
                              ok, status, tol)
