import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from marginrobust import oracles
from marginrobust.dro import DEFAULT_RHOS, chi2_distance, dro_curve, project_simplex, solve_dro_weights, write_curve_csv
from marginrobust.exceptions import DomainError

losses_st = arrays(np.float64, st.integers(2, 10), elements=st.floats(-5, 5))


def test_zero_budget_is_uniform_mean():
    l = np.array([0.3, 1.7, 0.2, 4.0])
    s = solve_dro_weights(l, 0.0)
    assert np.array_equal(s.weights, np.full(4, 0.25)) and s.objective == math.fsum(l) / 4


def test_saturated_budget_is_point_mass():
    l = np.array([0.3, 1.7, 0.2, 4.0])
    rho = chi2_distance(np.eye(4)[3], 4) * 4
    for r in (rho, rho * 1.5, 10.0):
        s = solve_dro_weights(l, r)
        assert s.objective == 4.0 and np.array_equal(s.weights, np.eye(4)[3])


def test_three_losses_against_grid():
    assert solve_dro_weights([1, 2, 4], 0.05).objective == pytest.approx(oracles.dro_grid_3([1, 2, 4], 0.05), abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-3, 3)), st.floats(0.001, 1.2))
def test_three_losses_against_grid_random(l, rho):
    assert abs(solve_dro_weights(l, rho).objective - oracles.dro_grid_3(l, rho)) < 1e-4


def test_against_conic_solver():
    pytest.importorskip("cvxpy")
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 11))
        l = rng.normal(size=n)
        rho = float(rng.uniform(0, 0.6 * (n - 1) / 2))
        assert abs(solve_dro_weights(l, rho).objective - oracles.dro_qp(l, rho)[0]) < 1e-6


@settings(max_examples=60, deadline=None)
@given(losses_st, st.floats(0, 6))
def test_solution_is_feasible(l, rho):
    s = solve_dro_weights(l, rho)
    n = len(l)
    assert np.all(s.weights >= 0) and math.isclose(s.weights.sum(), 1.0, rel_tol=1e-12)
    assert chi2_distance(s.weights, n) <= rho / n + 1e-12
    assert s.objective >= math.fsum(l) / n - 1e-12
    assert s.objective <= l.max() + 1e-12


@settings(max_examples=40, deadline=None)
@given(losses_st)
def test_objective_nondecreasing_in_rho(l):
    vals = [solve_dro_weights(l, r).objective for r in (0.0,) + DEFAULT_RHOS]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


@settings(max_examples=40, deadline=None)
@given(losses_st, st.floats(0.01, 2), st.floats(0.1, 10), st.floats(-3, 3))
def test_positive_affine_covariance(l, rho, a, b):
    base = solve_dro_weights(l, rho)
    moved = solve_dro_weights(a * l + b, rho)
    assert moved.objective == pytest.approx(a * base.objective + b, abs=1e-9 * (1 + abs(a) + abs(b)) * (1 + np.abs(l).max()))


def test_single_loss():
    s = solve_dro_weights([2.5], 0.3)
    assert s.objective == 2.5 and list(s.weights) == [1.0]


def test_argument_errors():
    with pytest.raises(DomainError):
        solve_dro_weights([1.0, 2.0], -0.1)
    with pytest.raises(DomainError):
        solve_dro_weights([], 0.1)
    with pytest.raises(DomainError):
        solve_dro_weights([1.0, np.nan], 0.1)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-10, 10)))
def test_projection_lands_on_simplex(v):
    p = project_simplex(v)
    assert np.all(p >= 0) and math.isclose(p.sum(), 1.0, rel_tol=1e-12)


def test_curve_rows(tmp_path):
    l = np.array([0.1, 2.0, 0.4, 0.3, 1.1])
    ind = np.array([1, 0, 1, 1, 0])
    rows = dro_curve(l, ind, (0.0,))
    assert rows == [{"rho": 0.0, "weighted_loss": math.fsum(l) / 5, "weighted_accuracy": 3 / 5}]
    rows = dro_curve(l, ind)
    assert [r["rho"] for r in rows] == list(DEFAULT_RHOS)
    write_curve_csv(rows, tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 9
    with pytest.raises(DomainError):
        dro_curve(l, ind, (0.5, 0.1))


@settings(max_examples=60, deadline=None)
@given(losses_st, st.floats(0.001, 3), st.floats(0.01, 100))
def test_weights_invariant_to_loss_scaling(l, rho, c):
    base = solve_dro_weights(l, rho).weights
    assert np.allclose(solve_dro_weights(c * l, rho).weights, base, rtol=0, atol=1e-12)
    # power-of-two scales are exact in floating point, so the weights agree bitwise
    assert np.array_equal(solve_dro_weights(4.0 * l, rho).weights, base)


def test_curve_endpoints_match_solver_extremes():
    l = np.array([0.5, 0.1, 3.0, 0.7])
    sat = 4 * chi2_distance(np.eye(4)[2], 4)
    rows = dro_curve(l, np.ones(4), (0.0, sat))
    assert rows[0]["weighted_loss"] == math.fsum(l) / 4 and rows[1]["weighted_loss"] == 3.0
