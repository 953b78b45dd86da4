import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batches import cycle_instance, random_strict_batch, star_instance, two_token_instance, two_token_rate_oracle
from walraswap.amm import AmmSystem, ConstantProductPool, SystemAmm
from walraswap.orders import LimitBuyOrder, LimitSellOrder, order_supply
from walraswap.solver import (
    BoundaryRoot,
    EmptyProblem,
    EquilibriumProblem,
    EquilibriumResult,
    NoEquilibriumBracket,
    NotStrict,
    SolverConfig,
    SolverError,
    _repair_boundary,
    decompose,
    normalize,
    on_boundary,
    residual,
    rho_map,
    solve,
    solve_bisection2,
    solve_rho_iteration,
    solve_simplicial,
    upper_bounds,
)

SINGLE = dict(decompose=False)


def ratio(result):
    return result.price[0] / result.price[1]


def test_bisection_matches_scalar_oracle():
    result = solve_bisection2(two_token_instance())
    assert ratio(result) == pytest.approx(two_token_rate_oracle(), rel=1e-9)
    assert result.residual <= 1e-8


@pytest.mark.parametrize("strategy", ["bisection2", "rho_iteration", "simplicial"])
def test_every_strategy_solves_the_two_token_instance(strategy):
    result = solve(two_token_instance(), SolverConfig(strategy=strategy, **SINGLE))
    assert ratio(result) == pytest.approx(two_token_rate_oracle(), rel=1e-5)
    assert result.residual <= 1e-8
    assert result.strategy_used == strategy


def test_symmetric_cycle_clears_at_equal_prices():
    for strategy in ("rho_iteration", "simplicial"):
        result = solve(cycle_instance(), SolverConfig(strategy=strategy))
        assert np.allclose(result.price, 1 / 3, atol=1e-9)


def test_empty_problem():
    with pytest.raises(EmptyProblem):
        solve(EquilibriumProblem(3))


def test_lone_sell_order_has_no_bracket():
    problem = EquilibriumProblem(2, (order_supply(LimitSellOrder(0, 1, 5.0, 1.0, 1.01), 2),))
    with pytest.raises(NoEquilibriumBracket) as err:
        solve(problem)
    assert "p[0]=0" in str(err.value)
    assert err.value.strictness.failing_faces == [0]


def test_strict_required_refuses_non_strict_batch():
    with pytest.raises(NotStrict):
        solve(two_token_instance(), SolverConfig(strict_required=True))


def test_warm_start_at_the_equilibrium_returns_immediately():
    problem = cycle_instance()
    for strategy in ("rho_iteration", "simplicial"):
        result = solve(problem, SolverConfig(strategy=strategy, warm_start=(1, 1, 1)))
        assert result.iterations <= 2
    eq = solve(two_token_instance()).price
    result = solve(two_token_instance(), SolverConfig(warm_start=tuple(eq)))
    assert result.iterations <= 2


def test_scaling_the_warm_start_changes_nothing():
    problem, _ = random_strict_batch(np.random.default_rng(11), n=3)
    base = solve(problem, SolverConfig(warm_start=(0.2, 0.3, 0.5)))
    scaled = solve(problem, SolverConfig(warm_start=(2.0, 3.0, 5.0)))
    assert np.allclose(base.price, scaled.price, rtol=1e-9)


@given(st.lists(st.floats(0, 10), min_size=3, max_size=3), st.integers(0, 50))
def test_rho_map_stays_on_the_simplex(q, seed):
    problem, _ = random_strict_batch(np.random.default_rng(seed), n=3)
    q = np.array(q)
    if q.sum() == 0:
        q[0] = 1.0
    q = q / q.sum()
    out = rho_map(problem, q)
    assert np.all(out >= -1e-12)
    assert abs(out.sum() - 1) <= 1e-12


def test_fixed_point_of_rho_is_an_equilibrium():
    problem, _ = random_strict_batch(np.random.default_rng(5), n=3)
    M = upper_bounds(problem)
    result = solve(problem)
    q = normalize(M * result.price)
    moved = np.max(np.abs(rho_map(problem, q, M) - q))
    assert residual(problem, q / M) <= max(moved, 1e-8) * 10


@pytest.mark.parametrize("seed", range(8))
def test_cross_strategy_agreement_on_random_pairs(seed):
    problem, _ = random_strict_batch(np.random.default_rng(100 + seed), n=2)
    ratios = [ratio(solve(problem, SolverConfig(strategy=s, **SINGLE)))
              for s in ("bisection2", "rho_iteration", "simplicial")]
    assert max(ratios) / min(ratios) - 1 <= 1e-5


def test_decomposition_splits_the_star():
    subs = decompose(star_instance(), hub=0)
    assert len(subs) == 4
    assert all(0 in sub.tokens and len(sub.tokens) == 2 for sub in subs)


def test_decomposed_and_direct_solutions_agree():
    problem = star_instance()
    split = solve(problem, SolverConfig())
    whole = solve(problem, SolverConfig(decompose=False))
    assert split.residual <= 1e-8 and whole.residual <= 1e-8
    assert np.allclose(split.rates, whole.rates, rtol=1e-6)
    assert split.subproblem_trace[0]["parallel_subsolves"] == 4
    subs = [t["residual"] for t in split.subproblem_trace[1:]]
    assert residual(problem, split.price) <= 2 * max(max(subs), 1e-12) or residual(problem, split.price) <= 1e-8


def test_decomposed_result_independent_of_scheduling():
    problem = star_instance()
    one = solve(problem, SolverConfig(max_workers=1))
    many = solve(problem, SolverConfig(max_workers=4))
    assert np.array_equal(one.price, many.price)


def test_config_validation():
    for bad in (dict(strategy="newton"), dict(residual_tol=0), dict(damping=0), dict(mesh_depth=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = SolverConfig(warm_start=[1, 2])
    assert cfg.warm_start == (1.0, 2.0)
    assert dataclasses.replace(cfg, strategy="simplicial").strategy == "simplicial"


def test_problem_rejects_out_of_range_tokens():
    from walraswap.amm import ConstantProductAmm, SystemAmm

    with pytest.raises(ValueError):
        EquilibriumProblem(2, (), AmmSystem((SystemAmm(ConstantProductAmm(1, 1), 0, 2),)))
    with pytest.raises(ValueError):
        EquilibriumProblem(3, (order_supply(LimitSellOrder(0, 1, 1, 1, 2), 2),))


def unsold_corner_instance():
    """Three tokens cleared by a cycle, plus token 3 that nobody sells: its
    corner is a zero of the value form and large p3 is an equilibrium ray."""
    orders = [LimitSellOrder(i, (i + 1) % 3, 10.0, 0.9, 1.1) for i in range(3)]
    orders.append(LimitSellOrder(0, 3, 5.0, 1.9, 2.0))
    pool = SystemAmm(ConstantProductPool(100.0, 300.0, 0.99).split()[0], 3, 1)
    return EquilibriumProblem(4, tuple(order_supply(o, 4) for o in orders), AmmSystem((pool,)))


def test_value_form_vanishes_at_unsold_corner():
    problem = unsold_corner_instance()
    assert np.all(problem.aggregate.value_form(np.array([0.0, 0.0, 0.0, 1.0])) == 0)


def test_boundary_root_is_repaired_into_interior_equilibrium():
    problem = unsold_corner_instance()
    corner = normalize(np.array([1e-10, 1e-10, 1e-10, 1.0]))
    assert residual(problem, corner) <= 1e-8  # would pass the residual alone
    exc = BoundaryRoot("test", EquilibriumResult(corner, residual(problem, corner), 0, "simplicial"))
    fixed = _repair_boundary(problem, exc, SolverConfig())
    assert fixed is not None
    assert not on_boundary(fixed.price, 1e-8)
    assert fixed.residual <= 1e-8
    assert np.allclose(fixed.price[:3] / fixed.price[0], 1.0, rtol=1e-6)


def test_repair_gives_up_without_small_block():
    problem = unsold_corner_instance()
    p = np.full(4, 0.25)
    exc = BoundaryRoot("test", EquilibriumResult(p, residual(problem, p), 0, "simplicial"))
    assert _repair_boundary(problem, exc, SolverConfig()) is None


@pytest.mark.parametrize("strategy", ["auto", "simplicial"])
def test_solve_never_returns_boundary_price(strategy):
    rng = np.random.default_rng(11)
    for _ in range(8):
        problem, _ = random_strict_batch(rng, n=int(rng.integers(3, 5)))
        try:
            result = solve(problem, SolverConfig(strategy=strategy, decompose=False))
        except SolverError:
            continue  # failures are reported, never certified
        assert not on_boundary(result.price, 1e-8)
        assert result.residual <= 1e-8


def test_unsold_corner_instance_solves_to_interior_point():
    problem = unsold_corner_instance()
    for strategy in ("auto", "simplicial", "rho_iteration"):
        result = solve(problem, SolverConfig(strategy=strategy, decompose=False))
        assert result.residual <= 1e-8
        assert not on_boundary(result.price, 1e-8)


def test_repair_handles_orders_across_the_blocks():
    # token 0 is bought with token 1 and sold for token 2, so every mix with
    # a small token-0 price leaves it in deficit until the two orders meet
    orders = [LimitSellOrder(1, 2, 10.0, 0.9, 1.1), LimitSellOrder(2, 1, 10.0, 0.9, 1.1),
              LimitBuyOrder(0, 1, 5.0, 0.9, 1.1), LimitSellOrder(0, 2, 5.0, 0.9, 1.1)]
    problem = EquilibriumProblem(3, tuple(order_supply(o, 3) for o in orders))
    corner = normalize(np.array([1e-10, 0.5, 0.5]))
    assert residual(problem, corner) <= 1e-8
    exc = BoundaryRoot("test", EquilibriumResult(corner, residual(problem, corner), 0, "simplicial"))
    fixed = _repair_boundary(problem, exc, SolverConfig())
    assert fixed is not None
    assert fixed.residual <= 1e-8 and not on_boundary(fixed.price, 1e-8)
    assert "repair" in fixed.subproblem_trace[0]
