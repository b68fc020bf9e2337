import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_limit.cli import generate_challengers
from horizon_limit.criterion import (CAVEAT, STRICTNESS, AttainabilityError, SampledSequence, Trend,
                                     Verdict, check_theorem_condition, classify_ratios,
                                     condition_ratio, liminf_estimate, liminf_product_check,
                                     overtakes, ratio_decomposition_check, verify_weak_maximality)
from horizon_limit.ladder import HorizonLadder, LimitPath, build_ladder, extract_limit_path
from horizon_limit.problem import Grid, Problem, Trajectory, constant_path
from horizon_limit.solver import SolverOptions

HORIZONS = [5.0, 10.0, 20.0, 40.0]


def linear():
    """U = c with a frozen state, so every control path is attainable."""
    return Problem("c", "0", 1.0, (-math.inf, math.inf), -math.inf)


def const(p, level, T, per_unit=20):
    return constant_path(p, level, Grid(T, int(per_unit * T)))


def path(p, c, grid):
    k = np.full(len(grid), p.k0)
    return Trajectory(grid, np.asarray(c, dtype=float), k, np.zeros(len(grid)))


def synthetic_ladder(gap):
    """c° = 1 and c_T = 1 - gap(T) under U = c."""
    p = linear()
    ladder = HorizonLadder.from_trajectories(p, [const(p, 1.0 - gap(T), T) for T in HORIZONS])
    tail = const(p, 1.0, HORIZONS[-1])
    window = tail.restrict(2.5)
    limit = LimitPath((0.0, 2.5), window.grid, window.c, window.k, window.lam, True, [], tol=1e-6,
                      tail=tail)
    return ladder, limit


# ---------------------------------------------------------------------------
# condition ratio and the verdict

def test_geodesic_ratios(geo_ladder, geo_limit):
    for T in geo_ladder.horizons:
        s = condition_ratio(geo_ladder, geo_limit, T)
        assert s.numerator == 0.0 and s.ratio == 0.0
        assert s.denominator == pytest.approx(-T, rel=1e-13)
    rep = check_theorem_condition(geo_ladder, geo_limit)
    assert rep.verdict is Verdict.SATISFIED
    assert not rep.denominator_positive and rep.proof_step_warning
    assert rep.excluded_horizons == [40.0]


def test_identical_paths_give_zero_ratio():
    ladder, limit = synthetic_ladder(lambda T: 0.0)
    for T in HORIZONS:
        assert condition_ratio(ladder, limit, T).ratio == 0.0


def test_synthetic_ratio_is_one_over_T():
    ladder, limit = synthetic_ladder(lambda T: 1.0 / T)
    for T in HORIZONS:
        s = condition_ratio(ladder, limit, T)
        assert s.numerator == pytest.approx(1.0, rel=1e-12)
        assert s.denominator == pytest.approx(T, rel=1e-12)
        assert s.ratio == pytest.approx(1.0 / T, rel=1e-12)
        assert s.tail_surrogate and not s.self_reference
    rep = check_theorem_condition(ladder, limit, tol_zero=0.05)
    assert rep.verdict is Verdict.SATISFIED and rep.denominator_positive
    assert rep.proof_step_warning is None
    for num, den, r in zip(rep.numerators, rep.denominators, rep.ratios.s):
        assert abs(num / den - r) <= 1e-12


def test_constant_ratio_is_violated():
    ladder, limit = synthetic_ladder(lambda T: 0.3)
    rep = check_theorem_condition(ladder, limit)
    assert rep.verdict is Verdict.VIOLATED
    assert rep.limit_estimate == pytest.approx(0.3)


def test_classify_ratios():
    assert classify_ratios([1 / 5, 1 / 10, 1 / 20], 0.1) is Verdict.SATISFIED
    assert classify_ratios([0.3, 0.3, 0.3], 1e-6) is Verdict.VIOLATED
    assert classify_ratios([0.3, 0.1, 0.01], 1e-6) is Verdict.INCONCLUSIVE
    assert classify_ratios([0.0, math.nan, 0.0], 1e-6) is Verdict.INCONCLUSIVE
    assert classify_ratios([], 1e-6) is Verdict.INCONCLUSIVE


def test_condition_needs_three_entries(geo):
    lad = build_ladder(geo, 2.0, 2.0, 2, SolverOptions(nodes=10))
    with pytest.raises(ValueError):
        check_theorem_condition(lad, extract_limit_path(lad))


def test_condition_ratio_unknown_horizon(geo_ladder, geo_limit):
    with pytest.raises(Exception, match="no ladder entry"):
        condition_ratio(geo_ladder, geo_limit, 7.0)


# ---------------------------------------------------------------------------
# overtaking

def test_higher_constant_overtakes():
    p = linear()
    v = overtakes(const(p, 2.0, 40.0), const(p, 1.0, 40.0), p, HORIZONS)
    np.testing.assert_allclose(v.differences.s, [-T for T in HORIZONS], rtol=1e-13)
    assert v.liminf.unbounded_below and v.liminf.value == -math.inf
    assert v.liminf.trend is Trend.DECREASING
    assert v.overtakes


def test_identity_does_not_overtake():
    p = linear()
    a = const(p, 1.5, 40.0)
    v = overtakes(a, a, p, HORIZONS)
    assert np.all(v.differences.s == 0.0)
    assert not v.overtakes and v.weak_maximality_consistent
    assert v.liminf.caveat == CAVEAT


def test_sin_difference_pair():
    # candidate -cos(t) against 0 under U = c gives D(T) = sin(T)
    p = linear()

    def candidate(T):
        g = Grid(T, 2 * math.ceil(25 * T))
        return path(p, -np.cos(g.nodes), g)

    def reference(T):
        g = Grid(T, 2 * math.ceil(25 * T))
        return path(p, np.zeros(len(g)), g)

    horizons = np.linspace(1.0, 60.0, 240)
    v = overtakes(candidate, reference, p, horizons)
    np.testing.assert_allclose(v.differences.s, np.sin(horizons), atol=1e-7)
    assert v.liminf.trend is Trend.OSCILLATING
    tail = np.sin(horizons[len(horizons) - v.liminf.tail_size:])
    assert v.liminf.estimate == pytest.approx(tail.min(), abs=1e-7)
    assert v.liminf.estimate == pytest.approx(-1.0, abs=1e-2)
    assert not v.liminf.unbounded_below
    assert v.overtakes


def test_unattainable_family_is_named():
    p = Problem("c", "-c", 1.0, (0.0, 1.0), 0.0)
    bad = path(p, np.full(41, 0.5), Grid(4.0, 40))
    good = constant_path(p, 0.0, Grid(4.0, 40))
    with pytest.raises(AttainabilityError, match="candidate"):
        overtakes(bad, good, p, [2.0, 4.0])
    with pytest.raises(AttainabilityError, match="reference"):
        overtakes(good, const(p, 0.0, 2.0, 10), p, [2.0, 4.0])


def test_family_forms_agree():
    p = linear()
    long = const(p, 1.0, 40.0)
    by_T = {T: long.restrict(T) for T in HORIZONS}
    ref = const(p, 0.5, 40.0)
    a = overtakes(long, ref, p, HORIZONS).differences.s
    b = overtakes(by_T, ref, p, HORIZONS).differences.s
    c = overtakes(lambda T: long.restrict(T), ref, p, HORIZONS).differences.s
    assert np.array_equal(a, b) and np.array_equal(a, c)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 3))
def test_antisymmetry_is_bitwise(x, y, switch):
    p = linear()
    g = Grid(40.0, 400)
    a = path(p, np.where(g.nodes < 10 * switch, x, y), g)
    b = const(p, y, 40.0, 10)
    fwd = overtakes(a, b, p, HORIZONS).differences.s
    rev = overtakes(b, a, p, HORIZONS).differences.s
    assert np.array_equal(fwd, -rev)


# ---------------------------------------------------------------------------
# weak maximality

@functools.lru_cache(maxsize=None)
def geo_challengers(count, seed):
    from horizon_limit.problem import geodesic
    return generate_challengers(geodesic(5.0), Grid(40.0, 800), count, seed)


def test_geodesic_weak_maximality(geo, geo_limit):
    rep = verify_weak_maximality(geo_limit, geo_challengers(50, 7), geo, HORIZONS)
    assert rep.no_challenger_overtakes and rep.warning is None
    assert len(rep.verdicts) == 50
    for v in rep.verdicts:
        assert np.all(v.differences.s >= 0.0)
        assert v.reverse_liminf.value <= 1e-8
    assert "not a proof" in rep.scope


def test_empty_challenger_list(geo, geo_limit):
    rep = verify_weak_maximality(geo_limit, [], geo, HORIZONS)
    assert rep.no_challenger_overtakes and rep.warning


def test_limit_against_itself(geo, geo_limit):
    rep = verify_weak_maximality(geo_limit, [geo_limit], geo, HORIZONS)
    assert np.all(rep.verdicts[0].differences.s == 0.0)
    assert rep.no_challenger_overtakes


@functools.lru_cache(maxsize=None)
def quadratic_setup():
    # U = 1 - c^2 is maximized at c = 0 with positive accumulated utility
    p = Problem("1 - c^2", "c", 5.0, (-math.inf, math.inf), 0.0)
    lad = build_ladder(p, 5.0, 2.0, 4, SolverOptions(nodes=50))
    lim = extract_limit_path(lad, 0.5, 1e-8)
    return p, lim, check_theorem_condition(lad, lim)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_satisfied_condition_implies_no_overtaking(seed):
    p, lim, rep = quadratic_setup()
    assert rep.verdict is Verdict.SATISFIED and rep.denominator_positive
    challengers = generate_challengers(p, Grid(40.0, 400), 6, seed)
    for v in verify_weak_maximality(lim, challengers, p, HORIZONS).verdicts:
        assert v.reverse_liminf.value <= STRICTNESS


# ---------------------------------------------------------------------------
# liminf estimates

def test_liminf_oscillating():
    est = liminf_estimate(SampledSequence(np.arange(1.0, 7.0), [1, 0.5, 0.9, 0.5, 0.99, 0.5]), 1.0)
    assert est.estimate == 0.5 and est.trend is Trend.OSCILLATING
    assert not est.unbounded_below


def test_liminf_minus_T():
    T = np.array(HORIZONS)
    est = liminf_estimate(SampledSequence(T, -T), 1.0)
    assert est.unbounded_below and est.value == -math.inf
    assert est.trend is Trend.DECREASING


def test_liminf_one_over_T():
    T = np.array(HORIZONS)
    est = liminf_estimate(SampledSequence(T, 1 / T), 1.0)
    assert est.estimate == 1 / 40.0 and est.trend is Trend.DECREASING
    assert not est.unbounded_below


def test_liminf_errors():
    s = SampledSequence([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        liminf_estimate(s, 0.0)
    with pytest.raises(ValueError):
        liminf_estimate(s, 0.2)
    with pytest.raises(ValueError):
        SampledSequence([1.0], [0.0])
    with pytest.raises(ValueError):
        SampledSequence([1.0, 1.0], [0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=40), st.floats(0.1, 1.0),
       st.floats(0.1, 1.0))
def test_liminf_monotone_in_tail_fraction(values, f1, f2):
    s = SampledSequence(np.arange(len(values), dtype=float), values)
    lo, hi = sorted((f1, f2))
    if math.ceil(lo * len(values) - 1e-12) < 2:
        return
    est_small = liminf_estimate(s, lo)
    est_large = liminf_estimate(s, hi)
    assert est_large.estimate <= est_small.estimate
    tail = np.asarray(values)[len(values) - est_large.tail_size:]
    assert est_large.estimate == tail.min()


# ---------------------------------------------------------------------------
# algebraic checks

def test_ratio_decomposition():
    rng = np.random.default_rng(3)
    W = rng.uniform(0.1, 10.0, size=(3, 200))
    assert ratio_decomposition_check(*W) <= 1e-12
    T = np.array(HORIZONS)
    assert ratio_decomposition_check(-T, -T, -T) == 0.0
    with pytest.raises(ZeroDivisionError, match="index 2"):
        ratio_decomposition_check([1.0, 1.0, 1.0], [1.0, 2.0, 0.0], [1.0, 1.0, 1.0])


def test_product_check_constant_b():
    j = np.arange(1, 101, dtype=float)
    rep = liminf_product_check(SampledSequence(j, 2 + (-1) ** j * 0.5), SampledSequence(j, np.ones_like(j)))
    assert rep.verified and rep.b_convergent
    assert rep.liminf_ab == 1.5 and rep.liminf_a * rep.limit_b == 1.5


def test_product_check_convergent_b():
    j = np.arange(1, 10001, dtype=float)
    rep = liminf_product_check(SampledSequence(j, 1 + 1 / j), SampledSequence(j, 1 - 1 / j ** 2))
    assert rep.verified
    assert rep.liminf_ab == pytest.approx(1.0, abs=1e-2)
    assert rep.liminf_a * rep.limit_b == pytest.approx(1.0, abs=1e-2)


def test_product_check_counterexample():
    j = np.arange(1, 101, dtype=float)
    a = np.where(j % 2 == 1, 2.0, 1.0)
    b = np.where(j % 2 == 1, 1.0, 2.0)
    rep = liminf_product_check(SampledSequence(j, a), SampledSequence(j, b))
    assert not rep.verified and not rep.b_convergent
    assert rep.status == "unverified: b not convergent (liminf(ab) = 2, liminf(a)*liminf(b) = 1)"
    assert rep.liminf_ab == 2.0 and rep.unrestricted_product == 1.0


def test_product_check_index_mismatch():
    with pytest.raises(ValueError):
        liminf_product_check(SampledSequence([1.0, 2.0], [1.0, 1.0]),
                             SampledSequence([1.0, 3.0], [1.0, 1.0]))
