"""Solve and settle many random batches; report certification rate and surplus bounds."""

import argparse
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from batches import random_strict_batch  # noqa: E402
from walraswap.clearing import settle  # noqa: E402
from walraswap.solver import SolverError, solve  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batches", type=int, default=200)
    parser.add_argument("--max-tokens", type=int, default=4)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    statuses, strategies = Counter(), Counter()
    worst_value, worst_residual, times = 0.0, 0.0, []
    for _ in range(args.batches):
        n = int(rng.integers(2, args.max_tokens + 1))
        problem, _ = random_strict_batch(rng, n=n)
        start = time.perf_counter()
        try:
            result = solve(problem)
        except SolverError as exc:
            statuses[type(exc).__name__] += 1
            continue
        outcome = settle(problem, result)
        times.append(time.perf_counter() - start)
        statuses[outcome.status] += 1
        strategies[result.strategy_used] += 1
        worst_value = min(worst_value, float(np.min(outcome.price * outcome.surplus)))
        worst_residual = max(worst_residual, result.residual)
    print("status counts:", dict(statuses))
    print("strategy used:", dict(strategies))
    print(f"worst residual {worst_residual:.2e}, most negative p*s {worst_value:.2e}")
    if times:
        print(f"solve+settle: median {1e3 * np.median(times):.1f} ms, p95 {1e3 * np.percentile(times, 95):.1f} ms")


if __name__ == "__main__":
    main()
