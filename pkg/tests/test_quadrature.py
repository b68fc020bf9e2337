import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horizon_limit.problem import Grid, Problem, Trajectory, constant_path
from horizon_limit.quadrature import (QuadratureError, Rule, accumulated_value, integrate,
                                      value_difference, weights)

IDENTITY = Problem("c", "0", 1.0, (-math.inf, math.inf), -math.inf)


def test_exactness_examples():
    g = Grid(1.0, 10)
    assert integrate(g.nodes, g, Rule.TRAPEZOID) == pytest.approx(0.5, abs=1e-15)
    g2 = Grid(2.0, 10)
    assert integrate(g2.nodes ** 3, g2, Rule.SIMPSON) == pytest.approx(4.0, abs=1e-14)


@pytest.mark.parametrize("N", [2, 4, 8, 16, 32])
def test_simpson_fourth_order(N):
    exact = math.e - 1
    e1 = abs(integrate(np.exp(Grid(1.0, N).nodes), Grid(1.0, N)) - exact)
    e2 = abs(integrate(np.exp(Grid(1.0, 2 * N).nodes), Grid(1.0, 2 * N)) - exact)
    assert 12 <= e1 / e2 <= 20


@pytest.mark.parametrize("N", [1, 2, 3, 7, 10])
@pytest.mark.parametrize("rule", list(Rule))
def test_weights_positive_and_sum_to_T(N, rule):
    w = weights(Grid(3.5, N), rule)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(3.5, rel=1e-14)


def test_odd_interval_count_uses_trapezoid_on_last_interval():
    g = Grid(3.0, 3)
    w = weights(g, Rule.SIMPSON)
    np.testing.assert_allclose(w, [1 / 3, 4 / 3, 1 / 3 + 0.5, 0.5])


def test_errors_and_zero_horizon():
    with pytest.raises(QuadratureError):
        integrate(np.zeros(3), Grid(1.0, 4))
    assert integrate([7.0], Grid(0.0, 0)) == 0.0


def test_accumulated_value_examples(geo, ram):
    g = Grid(10.0, 100)
    tr = Trajectory(g, np.zeros(101), np.full(101, 5.0), np.zeros(101))
    assert accumulated_value(tr, geo) == pytest.approx(-10.0, rel=1e-15)
    assert tr.value == accumulated_value(tr, geo)
    g1 = Grid(1.0, 10)
    tr = Trajectory(g1, g1.nodes, np.ones(11), np.zeros(11))
    assert accumulated_value(tr, IDENTITY) == pytest.approx(0.5, abs=1e-15)
    ss = constant_path(ram, 0.5, Grid(4.0, 40))
    assert ss.value == pytest.approx(4 * 2 * math.sqrt(0.5), rel=1e-14)


def test_utility_domain_error_names_node(ram):
    g = Grid(1.0, 4)
    tr = Trajectory(g, [0.1, 0.2, -0.3, 0.1, 0.1], np.ones(5), np.zeros(5))
    with pytest.raises(QuadratureError, match="node 2"):
        accumulated_value(tr, ram)


def test_value_difference_examples(geo):
    g = Grid(7.0, 70)
    one = Trajectory(g, np.ones(71), np.ones(71), np.zeros(71))
    two = Trajectory(g, np.full(71, 2.0), np.ones(71), np.zeros(71))
    assert value_difference(one, two, IDENTITY) == pytest.approx(-7.0, rel=1e-14)
    assert value_difference(one, one, IDENTITY) == 0.0
    with pytest.raises(QuadratureError):
        value_difference(one, Trajectory(Grid(7.0, 10), np.ones(11), np.ones(11), np.zeros(11)),
                         IDENTITY)
    gg = Grid(2 * math.pi, 400)
    wave = Trajectory(gg, np.sin(gg.nodes), np.zeros(401), np.zeros(401))
    rest = Trajectory(gg, np.zeros(401), np.zeros(401), np.zeros(401))
    assert value_difference(wave, rest, geo) < 0


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=9, max_size=9)


@given(samples, samples, st.floats(-10, 10), st.floats(-10, 10), st.sampled_from(list(Rule)))
def test_linearity(a, b, alpha, beta, rule):
    g = Grid(2.0, 8)
    a, b = np.array(a), np.array(b)
    lhs = integrate(alpha * a + beta * b, g, rule)
    rhs = alpha * integrate(a, g, rule) + beta * integrate(b, g, rule)
    scale = (abs(alpha) * np.abs(a).sum() + abs(beta) * np.abs(b).sum()) * g.h + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from(list(Rule)))
def test_interval_additivity(m1, m2, rule):
    h = 0.125
    n1, n2 = 2 * m1, 2 * m2
    full = Grid((n1 + n2) * h, n1 + n2)
    f = np.cos(full.nodes) + full.nodes ** 2
    left = integrate(f[:n1 + 1], Grid(n1 * h, n1), rule)
    right = integrate(f[n1:], Grid(n2 * h, n2), rule)
    total = integrate(f, full, rule)
    assert abs(left + right - total) <= 1e-12 * max(1.0, abs(total))


@given(samples, samples)
def test_difference_antisymmetric_bitwise(a, b):
    g = Grid(2.0, 8)
    ta = Trajectory(g, a, np.ones(9), np.zeros(9))
    tb = Trajectory(g, b, np.ones(9), np.zeros(9))
    d1 = value_difference(ta, tb, IDENTITY)
    d2 = value_difference(tb, ta, IDENTITY)
    assert d1 == -d2
    assert value_difference(ta, ta, IDENTITY) == 0.0
