"""Sweep the sell order's size in the two-token instance and print the clearing rate.

Each row compares the solver against a brentq root of the same market balance.
"""

import argparse

import numpy as np
from scipy.optimize import brentq

from walraswap.amm import AmmSystem, ConstantProductPool, SystemAmm
from walraswap.clearing import settle
from walraswap.orders import LimitSellOrder, order_supply
from walraswap.solver import EquilibriumProblem, solve


def oracle(amount, r1, r2, reserve):
    def balance(r):
        sold = amount * min(1.0, max(0.0, (r - r1) / (r2 - r1))) if r >= r1 else 0.0
        return sold - max(0.0, np.sqrt(reserve * reserve / r) - reserve)

    return brentq(balance, r1 * 0.5, r2, xtol=1e-14)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reserve", type=float, default=1000.0)
    parser.add_argument("--points", type=int, default=12)
    args = parser.parse_args()
    print(f"{'amount':>10} {'rate':>14} {'oracle':>14} {'residual':>10} {'status':>12}")
    for amount in np.geomspace(0.1, 500.0, args.points):
        order = LimitSellOrder(0, 1, float(amount), 0.95, 1.05)
        pool = SystemAmm(ConstantProductPool(args.reserve, args.reserve).split()[0], 0, 1)
        problem = EquilibriumProblem(2, (order_supply(order, 2),), AmmSystem((pool,)))
        result = solve(problem)
        outcome = settle(problem, result)
        rate = result.price[0] / result.price[1]
        print(f"{amount:>10.4g} {rate:>14.10f} {oracle(amount, 0.95, 1.05, args.reserve):>14.10f} "
              f"{result.residual:>10.1e} {outcome.status:>12}")


if __name__ == "__main__":
    main()
