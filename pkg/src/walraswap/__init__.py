"""Uniform-price batch clearing with AMM liquidity."""

from .amm import (
    AmmSystem,
    ConcentratedPool,
    ConstantProductAmm,
    ConstantProductPool,
    PiecewiseAmm,
    SystemAmm,
    split_bidirectional_pool,
)
from .market import SupplyFunction, check_admissibility, check_strictness
from .orders import LimitBuyOrder, LimitSellOrder, order_supply
from .solver import EquilibriumProblem, EquilibriumResult, SolverConfig, SolverError, solve

__version__ = "0.1.0"
