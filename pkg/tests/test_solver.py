import logging
import math

import numpy as np
import pytest

from horizon_limit import solver as S
from horizon_limit.cli import generate_challengers
from horizon_limit.problem import (Grid, Problem, ProblemError, Trajectory, constant_path,
                                   is_attainable)
from horizon_limit.quadrature import Rule
from horizon_limit.solver import (Method, SolverError, SolverOptions, collocation_objective,
                                  dp_oracle, hamiltonian_residuals, recover_control,
                                  solve_finite_horizon)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(nodes=1)
    with pytest.raises(ValueError):
        SolverOptions(newton_tol=0.0)
    assert SolverOptions(method="PmpShooting").method is Method.PMP_SHOOTING
    assert SolverOptions(method="collocation").method is Method.COLLOCATION


@pytest.mark.parametrize("T", [10.0, 0.5, 3.0, 27.5])
def test_geodesic_solution_is_constant(geo, T):
    tr = solve_finite_horizon(geo, T, SolverOptions(nodes=100))
    assert np.max(np.abs(tr.c)) <= 1e-8
    assert np.max(np.abs(tr.k - 5.0)) <= 1e-8
    assert np.max(np.abs(tr.lam)) <= 1e-8
    assert tr.value == pytest.approx(-T, rel=1e-13)


def test_ramsey_matches_oracle(ram, derived):
    tr = solve_finite_horizon(ram, 5.0, SolverOptions(nodes=100))
    dp = derived["ramsey_T5_dp"]["value"]
    assert abs(tr.value - dp) <= 0.02 * abs(dp)
    # with the state bound active the terminal condition is k(T) = 0, lambda(T) >= 0
    assert tr.info["terminal"] == "state_bound"
    assert abs(tr.k[-1]) <= 1e-8
    assert tr.lam[-1] > 0
    assert hamiltonian_residuals(tr, ram).max() <= 1e-6


def test_ramsey_closed_form(ram, derived):
    # interior optimum c(t) = c0 exp(2 r t) with k(T) = 0
    tr = solve_finite_horizon(ram, 5.0, SolverOptions(nodes=400))
    c0 = 0.05 * 10.0 / (math.exp(0.25) - 1)
    np.testing.assert_allclose(tr.c, c0 * np.exp(0.1 * tr.t), rtol=2e-4)
    assert tr.value == pytest.approx(derived["ramsey_T5_closed_form"], rel=1e-5)


def test_short_horizon_keeps_free_terminal_state(ram):
    # for T = 1 consumption sits at its upper bound and capital is left over
    tr = solve_finite_horizon(ram, 1.0, SolverOptions(nodes=50))
    assert tr.info["terminal"] == "free"
    assert np.all(tr.c == 3.0)
    assert tr.lam[-1] == 0.0 and tr.k[-1] > 0


def test_residual_examples(geo, ram):
    g = Grid(10.0, 100)
    exact = Trajectory(g, np.zeros(101), np.full(101, 5.0), np.zeros(101))
    rep = hamiltonian_residuals(exact, geo)
    assert rep.max() <= 1e-12
    lam = np.zeros(101)
    lam[-1] = 0.1
    rep = hamiltonian_residuals(Trajectory(g, exact.c, exact.k, lam), geo)
    assert rep.transversality_residual == pytest.approx(0.1)
    assert all(v >= 0 for v in rep.to_dict().values())
    other = constant_path(ram, 0.5, Grid(5.0, 100))
    assert hamiltonian_residuals(other, ram).stationarity_residual > 1e-3


def test_residual_domain_error_names_node():
    p = Problem("log(c + 2)", "0.1*k - c", 1.0, (-1.0, 1.0))
    g = Grid(1.0, 4)
    c = np.array([0.0, 0.0, 0.0, -0.7, 0.0])
    tr = Trajectory(g, c, np.ones(5), np.zeros(5))
    hamiltonian_residuals(tr, p)
    p2 = Problem("sqrt(c + 0.5)", "0.1*k - c", 1.0, (-1.0, 1.0))
    with pytest.raises(SolverError, match="node 3"):
        hamiltonian_residuals(tr, p2)


def test_rejects_nonpositive_horizon(ram):
    with pytest.raises(ValueError):
        solve_finite_horizon(ram, 0.0)


def test_unreachable_state_bound_is_reported():
    # capital falls at least one unit per period, so k(5) >= 0 is impossible
    p = Problem("sqrt(c)", "-c - 1", 1.0, (0.0, 1.0))
    with pytest.raises(S.StateBoundViolation, match="node"):
        solve_finite_horizon(p, 5.0, SolverOptions(nodes=50))


def test_control_recovery_clips_and_picks_best_root(caplog):
    ram = Problem("2*sqrt(c)", "0.05*k - c", 10.0, (0.0, 3.0))
    assert recover_control(ram, 10.0, 0.0) == 3.0
    assert recover_control(ram, 10.0, 1.0) == pytest.approx(1.0)
    assert recover_control(ram, 10.0, 100.0) == pytest.approx(1e-4)
    wavy = Problem("c + 2*sin(c)", "0", 1.0, (0.0, 10.0), -math.inf)
    with caplog.at_level(logging.WARNING, logger="horizon_limit.solver"):
        c = recover_control(wavy, 1.0, 0.0, scan=64)
    assert c == pytest.approx(8 * math.pi / 3, rel=1e-10)
    assert "roots" in caplog.text


def test_collocation_agrees_with_shooting(ram):
    opts = SolverOptions(nodes=100, method="collocation", polish=False)
    raw = solve_finite_horizon(ram, 5.0, opts)
    shot = solve_finite_horizon(ram, 5.0, SolverOptions(nodes=100, method="pmp_shooting"))
    assert raw.info["method"] == "collocation"
    assert is_attainable(raw, ram, 1e-6)[0]
    assert raw.value == pytest.approx(shot.value, rel=1e-4)
    polished = solve_finite_horizon(ram, 5.0, SolverOptions(nodes=100, method="collocation"))
    assert polished.info["method"] == "collocation+shooting"
    np.testing.assert_allclose(polished.c, shot.c, rtol=1e-8)


def test_auto_falls_back_to_collocation(ram, monkeypatch):
    calls = []

    def broken(p, grid, opts, extra_guesses=()):
        calls.append(extra_guesses)
        raise S.NewtonDivergence("forced")

    monkeypatch.setattr(S, "_shooting", broken)
    tr = solve_finite_horizon(ram, 5.0, SolverOptions(nodes=60))
    assert tr.info["method"] == "collocation"
    assert len(calls) == 2  # the first attempt and the polish


def test_collocation_gradient_matches_finite_differences(ram):
    grid = Grid(5.0, 40)
    rng = np.random.default_rng(11)
    c = rng.uniform(0.5, 2.0, 41)
    mu = rng.uniform(0.0, 1.0, 41)
    for rule, rho in ((Rule.TRAPEZOID, 0.0), (Rule.TRAPEZOID, 5.0), (Rule.SIMPSON, 5.0)):
        P, grad, k, _ = collocation_objective(ram, grid, c, rule, mu, rho)
        for _ in range(5):
            d = rng.standard_normal(41)
            eps = 1e-6
            Pp = collocation_objective(ram, grid, c + eps * d, rule, mu, rho, want_grad=False)[0]
            Pm = collocation_objective(ram, grid, c - eps * d, rule, mu, rho, want_grad=False)[0]
            fd = (Pp - Pm) / (2 * eps)
            assert abs(fd - grad @ d) <= 1e-5 * max(1.0, abs(fd))


def test_dp_oracle_examples(geo, derived):
    value, traj = dp_oracle(geo.with_bounds(-1.0, 1.0), 2.0, 51, 21, 40)
    assert value == pytest.approx(-2.0, abs=0.02)
    assert np.all(traj.c == 0.0)
    assert value == pytest.approx(derived["geodesic_T2_dp"]["value"], abs=1e-12)
    assert dp_oracle(geo.with_bounds(-1.0, 1.0), 0.0, 5, 5, 5) == (0.0, None) or \
        tuple(dp_oracle(geo.with_bounds(-1.0, 1.0), 0.0, 5, 5, 5)) == (0.0, None)


def test_dp_oracle_errors(geo, ram):
    with pytest.raises(ValueError):
        dp_oracle(geo, 2.0, 11, 11, 10)
    with pytest.raises(ValueError):
        dp_oracle(ram, 2.0, 1, 11, 10)


def test_dp_oracle_reproduces_frozen_value(ram, derived):
    res = dp_oracle(ram, 5.0, 201, 61, 50)
    assert res.value == derived["ramsey_T5_dp"]["value"]
    # independent cross-check: within the oracle's own error bound of the closed form
    assert abs(res.value - derived["ramsey_T5_closed_form"]) <= res.error_bound


@pytest.mark.parametrize("T", [1.0, 2.0, 5.0])
@pytest.mark.parametrize("model", ["geodesic", "ramsey"])
def test_solver_never_loses_to_oracle(T, model, geo, ram):
    p = geo.with_bounds(-1.0, 1.0) if model == "geodesic" else ram
    tr = solve_finite_horizon(p, T, SolverOptions(nodes=100))
    res = dp_oracle(p, T, 201, 61, 50)
    assert tr.value >= res.value - res.error_bound
    assert hamiltonian_residuals(tr, p).max() <= 1e-6


@pytest.mark.parametrize("model", ["geodesic", "ramsey"])
def test_random_paths_never_beat_the_solver(model, geo, ram):
    p = geo if model == "geodesic" else ram
    T = 5.0
    tr = solve_finite_horizon(p, T, SolverOptions(nodes=100))
    for ch in generate_challengers(p, tr.grid, 50, seed=7):
        assert ch.value <= tr.value + 1e-6


def test_transversality_for_every_free_end_solve(geo, ram):
    for p, T in ((geo, 4.0), (ram, 1.0), (ram, 2.0)):
        tr = solve_finite_horizon(p, T, SolverOptions(nodes=80))
        assert tr.info["terminal"] == "free"
        assert abs(tr.lam[-1]) <= 1e-10


def test_concave_technology_with_binding_state_bound():
    p = Problem("log(c)", "0.3*k^0.5 - 0.1*k - c", 2.0, (0.01, 5.0), 1.0)
    tr = solve_finite_horizon(p, 1.0, SolverOptions(nodes=100))
    assert tr.info["terminal"] == "state_bound"
    assert abs(tr.k[-1] - 1.0) <= 1e-8 and tr.lam[-1] > 0.0
    assert hamiltonian_residuals(tr, p).max() <= 1e-6


def test_collocation_domain_failures_become_solver_errors(ram, monkeypatch):
    def broken(p, grid, opts):
        raise ProblemError("implicit state step did not converge")

    monkeypatch.setattr(S, "_collocation_then_polish", broken)
    with pytest.raises(S.SolverError, match="collocation"):
        solve_finite_horizon(ram, 5.0, SolverOptions(method="collocation", nodes=20))
