"""Acceptance criteria 1-9. Each prints one PASS/FAIL line with its timing.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from batches import random_strict_batch, star_instance, two_token_instance, two_token_rate_oracle  # noqa: E402
from walraswap.amm import (  # noqa: E402
    Arc,
    ConcentratedPool,
    ConstantProductAmm,
    Line,
    PiecewiseAmm,
    SystemAmm,
    h_by_bisection,
    in_amounts,
    virtual_agent_supply,
)
from walraswap.clearing import CERTIFIED, compute_surplus, settle  # noqa: E402
from walraswap.cli import main  # noqa: E402
from walraswap.market import check_admissibility, extend_support, face_samples, interior_samples  # noqa: E402
from walraswap.market import restrict_support, supply_sum  # noqa: E402
from walraswap.orders import LimitBuyOrder, LimitSellOrder, order_supply  # noqa: E402
from walraswap.solver import SolverConfig, residual, solve  # noqa: E402

EXAMPLES = Path(__file__).resolve().parents[1] / "docs" / "examples"
RATE_GRID = np.logspace(-6, 6, 10_000)


def piecewise_family():
    pool = ConcentratedPool(1.0, ((0.5, 0.9, 300.0), (0.9, 1.1, 2000.0), (1.1, 2.0, 500.0)), 0.997)
    return [
        *pool.split(),
        PiecewiseAmm.from_lengths([(50.0, Arc(100.0, 100.0)), (30.0, Arc(40.0, 10.0)), Line(0.0)]),
        PiecewiseAmm.from_lengths([(10.0, Line(2.0)), (30.0, Arc(50.0, 80.0)), Line(0.0)]),
    ]


def criterion_1():
    amm = ConstantProductAmm(100.0, 100.0, 1.0)
    start = time.perf_counter()
    generic = h_by_bisection(amm, RATE_GRID)
    elapsed = time.perf_counter() - start
    closed = np.maximum(0.0, np.sqrt(100.0 * 100.0 / RATE_GRID) - 100.0)
    rel = np.abs(generic - closed) / np.maximum(np.abs(closed), 1e-300)
    rel = np.where(closed == 0, np.abs(generic), rel)
    worst = float(np.max(rel))
    return worst <= 1e-9 and elapsed < 1.0, f"max rel err {worst:.2e}, bisection {elapsed:.3f}s"


def criterion_2():
    worst = np.inf
    amms = [ConstantProductAmm(100.0, 100.0), ConstantProductAmm(30.0, 900.0, 0.997)] + piecewise_family()
    for amm in amms:
        x = amm.h(RATE_GRID)
        worst = min(worst, float(np.min(amm.f(x) - RATE_GRID * x)))
    return worst >= -1e-12 and len(amms) - 2 >= 3, f"{len(amms)} AMMs, min f(h)-r*h = {worst:.2e}"


def criterion_3():
    start = time.perf_counter()
    problem = two_token_instance()
    result = solve(problem)
    outcome = settle(problem, result)
    elapsed = time.perf_counter() - start
    r = result.price[0] / result.price[1]
    amm = problem.amm_system.amms[0].amm
    h = float(amm.h(r))
    s2_theorem = float(amm.f(h)) - r * h
    s = compute_surplus(problem, result.price, in_amounts(problem.amm_system, result.price))
    ok = (abs(r - 0.9916) <= 1e-3 and abs(r - two_token_rate_oracle()) <= 1e-9 and result.residual <= 1e-8
          and s2_theorem > 0 and abs(s[1] - s2_theorem) <= 1e-6 and outcome.status == CERTIFIED and elapsed < 1.0)
    return ok, (f"p1/p2 = {r:.10f}, residual {result.residual:.1e}, s2 = {s2_theorem:.6f} "
                f"(definition {s[1]:.6f}), {elapsed:.3f}s")


def random_amm(rng):
    kind = rng.integers(3)
    if kind == 0:
        return ConstantProductAmm(*rng.uniform(10, 1000, 2), float(rng.choice([1.0, 0.997, 0.99])))
    if kind == 1:
        lo = rng.uniform(0.2, 0.8)
        pool = ConcentratedPool(1.0, ((lo, 1.0, rng.uniform(50, 500)), (1.0, 1 / lo, rng.uniform(50, 500))),
                                float(rng.choice([1.0, 0.997])))
        return pool.split()[int(rng.integers(2))]
    a, b = rng.uniform(20, 200, 2)
    t = rng.uniform(5, 50)
    end_slope = a * b / (a + t) ** 2
    a2 = rng.uniform(10, 100)
    return PiecewiseAmm.from_lengths([(t, Arc(a, b)), (rng.uniform(5, 50), Arc(a2, end_slope * a2 * 0.9)), Line(0.0)])


def criterion_4():
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = -np.inf
    for _ in range(20):
        amm = random_amm(rng)
        p_in, p_out = rng.uniform(0.05, 1.0, 2)
        r = p_in / p_out
        x_star = float(amm.h(r))
        x_max = max(float(amm.sup_out) / r, 2 * x_star, 1e-6)
        grid = np.arange(0.0, x_max + 1e-3 * x_max, 1e-3 * x_max)
        v_grid = p_out * amm.f(grid) - p_in * grid
        v_star = p_out * float(amm.f(x_star)) - p_in * x_star
        worst = max(worst, float(np.max(v_grid)) - v_star)
    elapsed = time.perf_counter() - start
    return worst <= 1e-9 and elapsed < 30, f"20 instances, max grid gain {worst:.2e}, {elapsed:.2f}s"


def criterion_5():
    rng = np.random.default_rng(2024)
    certified, worst_neg, worst_free, failures = 0, 0.0, 0.0, []
    for k in range(50):
        problem, _ = random_strict_batch(rng, max_orders=10, max_amms=4)
        try:
            outcome = settle(problem, solve(problem))
        except Exception as exc:  # report, never hide
            failures.append(f"batch {k}: {type(exc).__name__}")
            continue
        value = outcome.price * outcome.surplus
        worst_neg = min(worst_neg, float(value.min()))
        outs = {c.out_token for c in problem.amm_system}
        free = [i for i in range(problem.n) if i not in outs]
        if free:
            worst_free = max(worst_free, float(np.max(np.abs(value[free]))))
        if outcome.status == CERTIFIED:
            certified += 1
        else:
            failures.append(f"batch {k}: {outcome.diagnostics[:1]}")
    ok = certified == 50 and worst_neg >= -1e-8 and worst_free <= 1e-8
    detail = f"{certified}/50 certified, min p*s {worst_neg:.1e}, max |p*s| off AMM outputs {worst_free:.1e}"
    return ok, detail + (f"; {failures[:3]}" if failures else "")


def criterion_6():
    rng = np.random.default_rng(6)
    problems = [two_token_instance()] + [random_strict_batch(rng, n=2)[0] for _ in range(20)]
    worst = 0.0
    for problem in problems:
        ratios = []
        for strategy in ("bisection2", "rho_iteration", "simplicial"):
            price = solve(problem, SolverConfig(strategy=strategy, decompose=False)).price
            ratios.append(price[0] / price[1])
        worst = max(worst, max(ratios) / min(ratios) - 1)
    return worst <= 1e-5, f"{len(problems)} two-token instances, max relative spread {worst:.1e}"


def criterion_7():
    problem = star_instance()
    split = solve(problem, SolverConfig())
    whole = solve(problem, SolverConfig(decompose=False))
    r_split, r_whole = residual(problem, split.price), residual(problem, whole.price)
    spread = float(np.max(np.abs(split.rates / whole.rates - 1)))
    subs = split.subproblem_trace[0].get("parallel_subsolves", 0)
    ok = r_split <= 1e-8 and r_whole <= 1e-8 and spread <= 1e-6 and subs >= 2
    return ok, (f"residuals {r_split:.1e} / {r_whole:.1e}, rate spread {spread:.1e}, "
                f"{subs} parallel sub-solves")


def criterion_8(tmp_dir):
    out = Path(tmp_dir) / "remark2.report.json"
    start = time.perf_counter()
    code = main(["clear", str(EXAMPLES / "remark2.json"), "--out", str(out)])
    elapsed = time.perf_counter() - start
    report = json.loads(out.read_text())
    faces = report["strictness"]["failing_faces"]
    ok = code == 2 and report["status"] == "NO_EQUILIBRIUM" and faces == ["T1"] and elapsed < 10
    return ok, f"exit {code}, status {report['status']}, failing faces {faces}, {elapsed:.2f}s"


def supply_zoo():
    cp = SystemAmm(ConstantProductAmm(100.0, 250.0, 0.997), 1, 2)
    cl = SystemAmm(piecewise_family()[0], 0, 2)
    sell = order_supply(LimitSellOrder(0, 1, 5.0, 0.8, 1.2), 3)
    buy = order_supply(LimitBuyOrder(2, 0, 3.0, 0.5, 2.0), 3)
    mixed = supply_sum(sell, buy, virtual_agent_supply(cp, 3), virtual_agent_supply(cl, 3))
    return {
        "sell order": sell,
        "buy order": buy,
        "constant-product agent": virtual_agent_supply(cp, 3),
        "concentrated agent": virtual_agent_supply(cl, 3),
        "sum": mixed,
        "extended": extend_support(order_supply(LimitSellOrder(0, 1, 2.0, 0.9, 1.1), 2), (2, 0), 3),
        "restricted": restrict_support(supply_sum(sell, buy), (0, 1, 2)),
    }


def criterion_9():
    n, interior, per_face = 3, 9_001, 333
    grid = np.vstack([interior_samples(n, interior, seed=9)] + [face_samples(n, i, per_face, 9) for i in range(n)])
    start = time.perf_counter()
    bad = []
    for name, phi in supply_zoo().items():
        report = check_admissibility(phi, grid)
        if not report.ok:
            bad.append(f"{name}: {report.first_violation.check}")
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 60
    return ok, f"{len(supply_zoo())} supply functions x {len(grid)} samples, {elapsed:.1f}s" + (f"; {bad}" if bad else "")


def run(number, check, *args):
    start = time.perf_counter()
    try:
        ok, detail = check(*args)
    except Exception as exc:
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - start:.2f}s) {detail}"
    return ok, line


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_acceptance(number, capsys, tmp_path):
    args = (tmp_path,) if number == 8 else ()
    ok, line = run(number, CRITERIA[number], *args)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    import tempfile

    results = []
    with tempfile.TemporaryDirectory() as tmp:
        for number in sorted(CRITERIA):
            ok, line = run(number, CRITERIA[number], *((tmp,) if number == 8 else ()))
            print(line, flush=True)
            results.append(ok)
    sys.exit(0 if all(results) else 1)
