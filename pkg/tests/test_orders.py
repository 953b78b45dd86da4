import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walraswap.orders import (
    LimitBuyOrder,
    LimitSellOrder,
    OrderError,
    buy_curve,
    involution,
    order_supply,
    sell_curve,
    walraswap_condition,
)

rates = st.floats(1e-3, 1e3)


def sell_fill(amount, r1, r2, r):
    return amount * min(max((r - r1) / (r2 - r1), 0.0), 1.0)


@given(rates)
def test_sell_order_fills_linearly_over_its_band(r):
    order = LimitSellOrder(0, 1, 8.0, 0.9, 1.2)
    phi = order_supply(order, 2).evaluate([r, 1.0])
    sold = sell_fill(8.0, 0.9, 1.2, r)
    assert phi[0] == pytest.approx(sold, abs=1e-12)
    assert phi[1] == pytest.approx(-r * sold, abs=1e-12)


@given(rates)
def test_buy_order_buys_fully_below_band_and_nothing_above(s):
    order = LimitBuyOrder(1, 0, 6.0, 0.8, 1.0)
    phi = order_supply(order, 2).evaluate([1.0, s])
    bought = 6.0 * min(max((1.0 - s) / 0.2, 0.0), 1.0) if s > 0.8 else 6.0
    assert -phi[1] == pytest.approx(bought, abs=1e-12)
    assert phi[0] == pytest.approx(s * bought, abs=1e-12)


def test_order_supply_on_more_tokens_leaves_others_untouched():
    phi = order_supply(LimitSellOrder(2, 0, 3.0, 0.5, 0.6), 4).evaluate([1.0, 9.0, 1.0, 5.0])
    assert phi[1] == 0 and phi[3] == 0
    assert phi[2] == pytest.approx(3.0)
    assert phi[0] == pytest.approx(-3.0)


@given(rates)
def test_involution_is_its_own_inverse(r):
    curve = sell_curve(LimitSellOrder(0, 1, 2.0, 0.7, 1.3))
    twice = involution(involution(curve.g))
    assert float(twice(r)) == pytest.approx(float(curve.g(r)), rel=1e-12, abs=1e-15)


@given(rates)
def test_buy_curve_is_the_involution_of_its_fill(r):
    order = LimitBuyOrder(1, 0, 4.0, 0.5, 0.7)
    curve = buy_curve(order)

    def taken(s):  # signed supply of the buy token: negative while buying
        s = np.asarray(s, dtype=float)
        return -4.0 * np.clip((0.7 - s) / 0.2, 0.0, 1.0)

    assert float(curve.g(r)) == pytest.approx(float(involution(taken)(r)), rel=1e-12, abs=1e-12)


@given(rates, rates)
def test_pair_value_matches_amount_form(p1, p2):
    for curve in (sell_curve(LimitSellOrder(0, 1, 2.0, 0.7, 1.3)), buy_curve(LimitBuyOrder(1, 0, 3.0, 0.4, 2.5))):
        assert curve.value_pair(p1, p2) == pytest.approx(p1 * float(curve.g(p1 / p2)), rel=1e-12, abs=1e-12)


def test_value_pair_on_faces():
    sell = sell_curve(LimitSellOrder(0, 1, 2.0, 0.7, 1.3))
    assert sell.value_pair(0.0, 1.0) == 0.0
    assert sell.value_pair(1.0, 0.0) == pytest.approx(2.0)  # everything sold at an infinite rate
    buy = buy_curve(LimitBuyOrder(1, 0, 3.0, 0.4, 2.5))
    assert buy.value_pair(1.0, 0.0) == pytest.approx(0.0)  # buy token is free: full fill, pay nothing
    assert buy.value_pair(0.0, 1.0) == 0.0


def test_at_limit_bands_never_cross_the_limit():
    s = LimitSellOrder.at_limit(0, 1, 1.0, 2.0, 0.01)
    assert (s.r1, s.r2) == (2.0, pytest.approx(2.02))
    b = LimitBuyOrder.at_limit(1, 0, 1.0, 2.0, 0.01)
    assert (b.r1, b.r2) == (pytest.approx(1.98), 2.0)


@pytest.mark.parametrize("args", [(0, 1, 0.0, 1.0, 2.0), (0, 1, 1.0, 2.0, 1.0), (0, 0, 1.0, 1.0, 2.0),
                                  (0, 1, -3.0, 1.0, 2.0), (0, 1, 1.0, 0.0, 2.0), (0, 1, float("nan"), 1, 2)])
def test_invalid_orders_rejected(args):
    with pytest.raises(OrderError):
        LimitSellOrder(*args)
    with pytest.raises(OrderError):
        LimitBuyOrder(*args)


def test_walraswap_condition_lists_unbought_tokens():
    orders = [LimitSellOrder(0, 1, 1, 1, 2), LimitBuyOrder(2, 0, 1, 1, 2)]
    assert walraswap_condition(orders, 3) == [0, 2]
    orders += [LimitSellOrder(1, 0, 1, 1, 2), LimitSellOrder(0, 2, 1, 1, 2)]
    assert walraswap_condition(orders, 3) == []
