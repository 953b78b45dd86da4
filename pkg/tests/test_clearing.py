import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batches import random_strict_batch, two_token_instance
from walraswap.amm import AmmSystem, Arc, ConstantProductAmm, Line, PiecewiseAmm, SystemAmm, in_amounts
from walraswap.clearing import (
    CERTIFIED,
    FAILED,
    ClearingError,
    amm_objective,
    amm_surplus_terms,
    compute_surplus,
    settle,
    surplus_via_theorem,
    total_value,
    verify_optimality,
)
from walraswap.solver import EquilibriumProblem, SolverConfig, residual, solve


@pytest.fixture(scope="module")
def solved():
    problem = two_token_instance()
    return problem, solve(problem)


def test_no_trade_leaves_no_surplus():
    problem = two_token_instance()
    p = np.array([0.45, 0.55])  # rate 0.82 is below the sell band, x = 0
    assert np.allclose(compute_surplus(problem, p, [0.0]), 0.0)


def test_surplus_lands_on_the_amm_out_token(solved):
    problem, result = solved
    p = result.price
    s = compute_surplus(problem, p, in_amounts(problem.amm_system, p))
    assert abs(p[0] * s[0]) <= 1e-8
    assert s[1] > 0
    r = p[0] / p[1]
    amm = problem.amm_system.amms[0].amm
    h = float(amm.h(r))
    assert s[1] == pytest.approx(float(amm.f(h)) - r * h, abs=1e-6)
    assert np.allclose(surplus_via_theorem(problem, p), [0.0, float(amm.f(h)) - r * h])


def test_theorem_path_refuses_non_equilibria(solved):
    problem, result = solved
    with pytest.raises(ClearingError):
        surplus_via_theorem(problem, result.price * [1.05, 1.0])


def test_total_value_is_price_dot_surplus(solved):
    problem, result = solved
    outcome = settle(problem, result)
    p, s = outcome.price, outcome.surplus
    assert outcome.total_value == pytest.approx(p[0] * s[0] + p[1] * s[1], rel=1e-12)
    assert total_value([0.5, 0.5], [0.0, 0.0]) == 0.0
    with pytest.raises(ClearingError):
        total_value([1.0, 2.0], [1.0])


def test_raising_an_amm_input_lowers_the_value(solved):
    problem, result = solved
    p = result.price
    x = in_amounts(problem.amm_system, p)
    v = total_value(p, compute_surplus(problem, p, x))
    for bump in (1e-3, 1.0, 10.0):
        assert total_value(p, compute_surplus(problem, p, x + bump)) < v


def test_grid_argmax_matches_h_for_constant_product():
    amm = ConstantProductAmm(100.0, 100.0)
    xs = np.arange(0, 400.0001, 0.01)
    assert xs[np.argmax(amm.f(xs) - 0.25 * xs)] == pytest.approx(100.0, abs=0.01)
    assert float(amm.h(0.25)) == pytest.approx(100.0)


def test_optimality_above_spot_is_zero_input():
    problem = EquilibriumProblem(2, (), AmmSystem((SystemAmm(ConstantProductAmm(100.0, 100.0), 0, 1),)))
    p = np.array([0.6, 0.4])
    assert in_amounts(problem.amm_system, p)[0] == 0.0
    assert verify_optimality(problem, p).ok


def test_plateau_amm_optimum():
    amm = PiecewiseAmm.from_lengths([(50.0, Arc(100.0, 100.0)), Line(0.0)])
    problem = EquilibriumProblem(2, (), AmmSystem((SystemAmm(amm, 0, 1),)))
    p = np.array([0.1, 0.9])
    report = verify_optimality(problem, p, delta=1e-4)
    assert report.ok, report.violations
    x = in_amounts(problem.amm_system, p)[0]
    assert x == pytest.approx(50.0)
    assert amm_objective(problem, p, 0, x + 5.0) < amm_objective(problem, p, 0, x)


def test_optimality_detects_a_wrong_input():
    problem = two_token_instance()
    p = np.array([0.3, 0.7])
    report = verify_optimality(problem, p, x_star=np.array([0.0]))
    assert not report.ok
    assert report.violations[0][0] == 0


def test_settle_certifies_the_equilibrium(solved):
    problem, result = solved
    outcome = settle(problem, result)
    assert outcome.status == CERTIFIED and outcome.certified
    assert np.all(outcome.price * outcome.surplus >= -1e-8)
    assert outcome.negative_tokens == []
    assert outcome.order_fills.shape == (1, 2)
    leg = outcome.amm_legs[0]
    assert (leg.in_token, leg.out_token) == (0, 1)
    assert leg.out_amount == pytest.approx(float(problem.amm_system.amms[0].amm.f(leg.in_amount)))


def test_settle_fails_five_percent_off(solved):
    problem, result = solved
    outcome = settle(problem, result.price * [1.05, 1.0])
    assert outcome.status == FAILED
    assert outcome.negative_tokens == [1]
    assert any("negative surplus" in d for d in outcome.diagnostics)
    assert any("residual" in d for d in outcome.diagnostics)


def test_empty_batch_settles_to_nothing():
    outcome = settle(EquilibriumProblem(3), np.ones(3))
    assert outcome.status == CERTIFIED
    assert np.all(outcome.surplus == 0) and outcome.total_value == 0


def test_settle_rejects_boundary_prices(solved):
    problem, _ = solved
    with pytest.raises(ClearingError):
        settle(problem, np.array([0.0, 1.0]))
    with pytest.raises(ClearingError):
        compute_surplus(problem, [0.5, 0.5], [-1.0])


@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_value_identity_at_any_price(seed, a):
    problem, _ = random_strict_batch(np.random.default_rng(seed), n=2)
    p = np.array([a, 1 - a])
    x = np.random.default_rng(seed).uniform(0, 50, len(problem.amm_system))
    s = compute_surplus(problem, p, x)
    amm_part = sum(float(amm_objective(problem, p, k, xk)) for k, xk in enumerate(x))
    assert p @ s == pytest.approx(amm_part, abs=1e-9 * (1 + np.abs(p * s).sum()))


@pytest.mark.parametrize("seed", range(6))
def test_random_batches_certify_both_ways(seed):
    problem, _ = random_strict_batch(np.random.default_rng(900 + seed))
    result = solve(problem)
    outcome = settle(problem, result)
    assert outcome.certified, outcome.diagnostics
    n_max = problem.n * max(1.0, float(np.max(np.abs(problem.aggregate.upper_bounds))))
    gap = np.abs(outcome.surplus - outcome.surplus_theorem)
    assert np.all(gap <= 10 * max(result.residual, 1e-12) * n_max / outcome.price)
    assert np.all(amm_surplus_terms(problem, outcome.price) >= -1e-12)
    outs = {c.out_token for c in problem.amm_system}
    for i in set(range(problem.n)) - outs:
        assert abs(outcome.price[i] * outcome.surplus[i]) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_random_perturbations_never_beat_the_chosen_inputs(seed):
    problem, _ = random_strict_batch(np.random.default_rng(300 + seed), n=3, max_amms=4)
    p = solve(problem).price
    x = in_amounts(problem.amm_system, p)
    rng = np.random.default_rng(seed)
    for k in range(len(x)):
        base = float(amm_objective(problem, p, k, x[k]))
        trials = np.maximum(x[k] + rng.normal(0, 1 + x[k], 1000), 0.0)
        assert np.all(amm_objective(problem, p, k, trials) <= base + 1e-12 * max(1, abs(base)))
