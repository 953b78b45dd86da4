"""Continuous limit orders on a token pair.

A limit sell order sells ``amount`` of ``sell_token`` for ``buy_token`` and
is filled progressively as the exchange rate ``r = p_sell / p_buy`` rises
through the band ``[r1, r2]``. A limit buy order buys ``amount`` of
``buy_token`` paying with ``pay_token``; its fill falls from full to zero as
the buy token's price ``s = p_buy / p_pay`` rises through ``[r1, r2]``.
Interpolation inside the band is linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .market import CurveSupply, PairCurve, SupplyError, SupplyFunction, extend_support

DEFAULT_BAND = 1e-3


class OrderError(ValueError):
    pass


def _ramp(x, lo, hi):
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def _check_band(amount, r1, r2, a, b):
    if not (np.isfinite(amount) and amount > 0):
        raise OrderError(f"amount must be positive, got {amount}")
    if not (0 < r1 < r2 < np.inf):
        raise OrderError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    if a == b:
        raise OrderError("an order must involve two different tokens")


@dataclass(frozen=True)
class LimitSellOrder:
    sell_token: int
    buy_token: int
    amount: float
    r1: float
    r2: float

    def __post_init__(self):
        _check_band(self.amount, self.r1, self.r2, self.sell_token, self.buy_token)

    @classmethod
    def at_limit(cls, sell_token, buy_token, amount, limit_price, band_fraction=DEFAULT_BAND):
        """Never sells below ``limit_price``; fully filled at ``limit_price * (1 + band)``."""
        if not band_fraction > 0:
            raise OrderError("band_fraction must be positive")
        return cls(sell_token, buy_token, amount, limit_price, limit_price * (1 + band_fraction))


@dataclass(frozen=True)
class LimitBuyOrder:
    buy_token: int
    pay_token: int
    amount: float
    r1: float
    r2: float

    def __post_init__(self):
        _check_band(self.amount, self.r1, self.r2, self.buy_token, self.pay_token)

    @classmethod
    def at_limit(cls, buy_token, pay_token, amount, limit_price, band_fraction=DEFAULT_BAND):
        """Never pays above ``limit_price``; fully filled at ``limit_price * (1 - band)``."""
        if not 0 < band_fraction < 1:
            raise OrderError("band_fraction must be in (0, 1)")
        return cls(buy_token, pay_token, amount, limit_price * (1 - band_fraction), limit_price)


Order = Union[LimitSellOrder, LimitBuyOrder]


class OrderCurve(PairCurve):
    """Supply of the first token of a pair as a function of its relative price."""


@dataclass(frozen=True)
class SellCurve(OrderCurve):
    amount: float
    r1: float
    r2: float

    @property
    def g_inf(self) -> float:
        return self.amount

    @property
    def g_sup(self) -> float:
        return self.amount

    def g(self, r):
        return self.amount * _ramp(np.asarray(r, dtype=float), self.r1, self.r2)

    def value_pair(self, p1, p2):
        if p2 == 0:
            return p1 * self.amount
        r = p1 / p2
        if r <= self.r1:
            return 0.0
        if r >= self.r2:
            return p1 * self.amount
        return p1 * self.amount * (r - self.r1) / (self.r2 - self.r1)


@dataclass(frozen=True)
class BuyCurve(OrderCurve):
    """``g(r) = -(1/r) hbar(1/r)`` for the buy-side function ``hbar``."""

    amount: float
    r1: float
    r2: float

    def hbar(self, s):
        """Signed amount of the buy token taken at its relative price ``s``."""
        return -self.amount * (1.0 - _ramp(np.asarray(s, dtype=float), self.r1, self.r2))

    @property
    def g_inf(self) -> float:
        return 0.0

    @property
    def g_sup(self) -> float:
        # max over s of s * fill(s): either the flat part ends at r1, or the
        # parabola s (r2 - s) / (r2 - r1) peaks at r2 / 2
        peak = min(max(self.r2 / 2, self.r1), self.r2)
        return self.amount * max(self.r1, peak * (self.r2 - peak) / (self.r2 - self.r1))

    def g(self, r):
        r = np.asarray(r, dtype=float)
        pos = r > 0
        s = np.divide(1.0, r, out=np.full_like(r, np.inf), where=pos)
        return np.where(pos, -np.where(pos, s, 0.0) * self.hbar(s), 0.0)

    def rg(self, r):
        r = np.asarray(r, dtype=float)
        s = np.divide(1.0, r, out=np.full_like(r, np.inf), where=r > 0)
        return -self.hbar(s)

    def value_pair(self, p1, p2):
        # p1 g(p1/p2) = -p2 hbar(p2/p1): the pay-token value of the purchase
        if p1 == 0:
            return 0.0
        s = p2 / p1
        if s <= self.r1:
            return p2 * self.amount
        if s >= self.r2:
            return 0.0
        return p2 * self.amount * (self.r2 - s) / (self.r2 - self.r1)


def involution(fn: Callable) -> Callable:
    """The map ``h -> g``, ``g(r) = -(1/r) h(1/r)``; it is its own inverse."""

    def mapped(r):
        r = np.asarray(r, dtype=float)
        return -fn(1.0 / r) / r

    return mapped


def sell_curve(order: LimitSellOrder) -> SellCurve:
    return SellCurve(order.amount, order.r1, order.r2)


def buy_curve(order: LimitBuyOrder) -> BuyCurve:
    return BuyCurve(order.amount, order.r1, order.r2)


def order_to_supply(curve: PairCurve, first: int, second: int, n: int) -> SupplyFunction:
    """``phi_first = g(p_first/p_second)``, ``phi_second = -(p_first/p_second) g``, zero elsewhere."""
    if first == second:
        raise SupplyError("first and second token must differ")
    return extend_support(CurveSupply(curve), (first, second), n)


def order_supply(order: Order, n: int) -> SupplyFunction:
    if isinstance(order, LimitSellOrder):
        return order_to_supply(sell_curve(order), order.sell_token, order.buy_token, n)
    if isinstance(order, LimitBuyOrder):
        return order_to_supply(buy_curve(order), order.pay_token, order.buy_token, n)
    raise TypeError(f"unknown order type {type(order).__name__}")


def walraswap_condition(orders, n: int) -> list:
    """Tokens not bought by any sell order; empty means the order set is strict."""
    bought = {o.buy_token for o in orders if isinstance(o, LimitSellOrder)}
    return [i for i in range(n) if i not in bought]
