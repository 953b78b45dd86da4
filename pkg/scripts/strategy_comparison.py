"""Compare the three solver strategies on random batches: iterations, wall time, agreement."""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from batches import random_strict_batch  # noqa: E402
from walraswap.solver import SolverConfig, SolverError, solve  # noqa: E402

STRATEGIES = ("bisection2", "rho_iteration", "simplicial")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batches", type=int, default=20)
    parser.add_argument("--tokens", type=int, default=2, help="bisection2 only runs when this is 2")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    strategies = STRATEGIES if args.tokens == 2 else STRATEGIES[1:]
    stats = {s: {"iters": [], "secs": [], "fail": 0} for s in strategies}
    spread = []
    for _ in range(args.batches):
        problem, _ = random_strict_batch(rng, n=args.tokens)
        prices = []
        for s in strategies:
            start = time.perf_counter()
            try:
                result = solve(problem, SolverConfig(strategy=s, decompose=False))
            except SolverError:
                stats[s]["fail"] += 1
                continue
            stats[s]["secs"].append(time.perf_counter() - start)
            stats[s]["iters"].append(result.iterations)
            prices.append(result.price)
        if len(prices) > 1:
            spread.append(max(float(np.max(np.abs(p / prices[0] - 1))) for p in prices))
    print(f"{'strategy':<14} {'median iters':>12} {'median ms':>10} {'max ms':>9} {'failures':>9}")
    for s, st in stats.items():
        if st["secs"]:
            print(f"{s:<14} {np.median(st['iters']):>12.0f} {1e3 * np.median(st['secs']):>10.2f} "
                  f"{1e3 * max(st['secs']):>9.1f} {st['fail']:>9}")
        else:
            print(f"{s:<14} {'-':>12} {'-':>10} {'-':>9} {st['fail']:>9}")
    if spread:
        print(f"max relative price spread across strategies: {max(spread):.2e}")


if __name__ == "__main__":
    main()
