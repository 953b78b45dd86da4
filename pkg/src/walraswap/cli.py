"""``walraswap clear`` and ``walraswap verify``.

Exit codes: 0 certified / verified, 1 bad input or failed verification,
2 no equilibrium found, 3 equilibrium found but certification failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .amm import in_amounts
from .batchfile import Batch, BatchError, parse_batch
from .clearing import CERTIFIED, SURPLUS_TOL, compute_surplus, settle, surplus_via_theorem, verify_optimality
from .orders import LimitSellOrder
from .solver import SolverError, residual, solve

REPORT_SCHEMA = "walraswap_report_v1"
NO_EQUILIBRIUM = "NO_EQUILIBRIUM"
EXIT_OK, EXIT_INPUT, EXIT_NO_EQUILIBRIUM, EXIT_UNCERTIFIED = 0, 1, 2, 3

def _by_token(batch: Batch, values) -> dict:
    return {sym: float(v) for sym, v in zip(batch.tokens, values)}


def _strictness_json(batch: Batch, report) -> dict:
    return {
        "strict_ok": report.strict_ok,
        "structural_tokens": sorted(batch.tokens[i] for i in report.structural_tokens),
        "failing_faces": [batch.tokens[i] for i in report.failing_faces],
        "witnesses": [
            {"face": batch.tokens[tok], "price": [float(x) for x in price], "psi": val}
            for price, tok, val in report.witnesses
        ],
        "summary": report.describe(),
    }


def _order_json(batch: Batch, order, fill) -> dict:
    if isinstance(order, LimitSellOrder):
        give, get = order.sell_token, order.buy_token
        entry = {"kind": "sell", "sell_token": batch.tokens[give], "buy_token": batch.tokens[get]}
    else:
        give, get = order.pay_token, order.buy_token
        entry = {"kind": "buy", "buy_token": batch.tokens[get], "pay_token": batch.tokens[give]}
    entry.update(amount=order.amount, r1=order.r1, r2=order.r2,
                 gives=float(fill[give]), receives=float(-fill[get]))
    return entry


def build_report(batch: Batch, problem, result=None, outcome=None, error=None, tol=None) -> dict:
    report = {
        "schema": REPORT_SCHEMA,
        "input_sha256": batch.digest,
        "tokens": list(batch.tokens),
        "strictness": _strictness_json(batch, problem.strictness),
        "residual_tol": tol,
    }
    if error is not None:
        report["status"] = NO_EQUILIBRIUM
        report["error"] = f"{type(error).__name__}: {error}"
        best = getattr(error, "result", None)
        if best is not None:
            report["best_price"] = [float(x) for x in best.price]
            report["best_residual"] = best.residual
        return report
    p = outcome.price
    report.update(
        status=outcome.status,
        price=[float(x) for x in p],
        prices=_by_token(batch, p),
        rates_vs_first=_by_token(batch, p / p[0]),
        residual=outcome.residual,
        solver={"strategy": result.strategy_used, "iterations": result.iterations,
                "trace": json.loads(json.dumps(result.subproblem_trace, default=float))},
        orders=[_order_json(batch, o, f) for o, f in zip(batch.orders, outcome.order_fills)],
        amm_legs=[{"amm": c.name, "in_token": batch.tokens[leg.in_token], "out_token": batch.tokens[leg.out_token],
                   "in_amount": leg.in_amount, "out_amount": leg.out_amount}
                  for c, leg in zip(problem.amm_system, outcome.amm_legs)],
        surplus=_by_token(batch, outcome.surplus),
        surplus_theorem=None if outcome.surplus_theorem is None else _by_token(batch, outcome.surplus_theorem),
        total_value=outcome.total_value,
        diagnostics=list(outcome.diagnostics),
    )
    return report


def write_report(report: dict, path) -> None:
    if path is not None:
        Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def print_summary(batch: Batch, report: dict, out=None) -> None:
    out = sys.stdout if out is None else out
    print(f"status: {report['status']}", file=out)
    if report["status"] == NO_EQUILIBRIUM:
        print(f"reason: {report['error']}", file=out)
        print(f"strictness: {report['strictness']['summary']}", file=out)
        return
    print(f"residual: {report['residual']:.3e}   strategy: {report['solver']['strategy']}", file=out)
    width = max(len(t) for t in batch.tokens)
    print(f"{'token':<{width}}  {'price':>14}  {'rate':>14}  {'surplus':>14}", file=out)
    for t in batch.tokens:
        print(f"{t:<{width}}  {report['prices'][t]:>14.8g}  {report['rates_vs_first'][t]:>14.8g}  "
              f"{report['surplus'][t]:>14.6g}", file=out)
    for d in report["diagnostics"]:
        print(f"! {d}", file=out)


def run_clear(args) -> int:
    try:
        batch = parse_batch(args.batch)
    except (BatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    hub = args.hub_token
    if hub is not None:
        hub = batch.index(hub) if hub in batch.tokens else int(hub)
    overrides = {"strategy": args.strategy, "residual_tol": args.tol, "hub_token": hub}
    if args.strict_required:
        overrides["strict_required"] = True
    try:
        config = batch.solver_config(**overrides)
        problem = batch.problem(seed=args.seed)
    except (ValueError, BatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        result = solve(problem, config)
    except SolverError as exc:
        report = build_report(batch, problem, error=exc, tol=config.residual_tol)
        write_report(report, args.out)
        if args.summary:
            print_summary(batch, report)
        return EXIT_NO_EQUILIBRIUM
    outcome = settle(problem, result, residual_tol=config.residual_tol)
    report = build_report(batch, problem, result, outcome, tol=config.residual_tol)
    write_report(report, args.out)
    if args.summary:
        print_summary(batch, report)
    return EXIT_OK if outcome.status == CERTIFIED else EXIT_UNCERTIFIED


def _close(a, b, rel=1e-9, abs_=1e-12) -> bool:
    return abs(a - b) <= abs_ + rel * max(abs(a), abs(b))


def verify_report(batch_path, report_path) -> tuple:
    """Re-derive every certificate from the report's price. Returns ``(ok, message)``."""
    try:
        batch = parse_batch(batch_path)
        report = json.loads(Path(report_path).read_text(encoding="utf-8"))
    except (BatchError, OSError, json.JSONDecodeError) as exc:
        return False, f"cannot read inputs: {exc}"
    if report.get("schema") != REPORT_SCHEMA:
        return False, "not a walraswap report"
    if report.get("input_sha256") != batch.digest:
        return False, "digest mismatch: report was produced from a different batch file"
    if report.get("status") != CERTIFIED:
        return False, f"report status is {report.get('status')}, nothing to verify"
    problem = batch.problem()
    p = np.asarray(report["price"], dtype=float)
    if p.shape != (batch.n,) or not np.all(p > 0):
        return False, "price vector malformed"
    p = p / p.sum()
    tol = report.get("residual_tol") or 1e-8
    res = residual(problem, p)
    if res > tol:
        return False, f"residual check failed: {res:.3g} > {tol:g}"
    x = in_amounts(problem.amm_system, p) if len(problem.amm_system) else np.zeros(0)
    s = compute_surplus(problem, p, x)
    s_thm = surplus_via_theorem(problem, p, tol)
    for i, t in enumerate(batch.tokens):
        if not _close(s[i], report["surplus"][t], rel=1e-6, abs_=1e-9):
            return False, f"surplus check failed for {t}: recomputed {s[i]:.9g}, report {report['surplus'][t]:.9g}"
        if abs(p[i] * (s[i] - s_thm[i])) > 10 * res + 1e-12:
            return False, f"surplus paths disagree for {t}"
        if p[i] * s[i] < -SURPLUS_TOL:
            return False, f"negative surplus for {t}"
    for leg, xc in zip(report["amm_legs"], x):
        if not _close(leg["in_amount"], xc, rel=1e-6, abs_=1e-9):
            return False, f"AMM leg {leg['amm']} in-amount differs from recomputation"
    opt = verify_optimality(problem, p, x)
    if not opt.ok:
        k, xv, gain = opt.violations[0]
        return False, f"optimality check failed at AMM {k}: in-amount {xv:.6g} gains {gain:.3g}"
    return True, "all certificates re-verified"


def run_verify(args) -> int:
    ok, message = verify_report(args.batch, args.report)
    print(("ok: " if ok else "FAILED: ") + message)
    return EXIT_OK if ok else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="walraswap", description="Uniform-price batch clearing with AMMs.")
    sub = parser.add_subparsers(dest="command", required=True)
    clear = sub.add_parser("clear", help="solve a batch, settle it and write a report")
    clear.add_argument("batch", help="batch file (JSON, schema walraswap_batch_v1)")
    clear.add_argument("--out", help="report path (JSON)")
    clear.add_argument("--strategy", choices=["auto", "bisection2", "rho_iteration", "simplicial"])
    clear.add_argument("--tol", type=float, help="residual tolerance on max |psi| (default 1e-8)")
    clear.add_argument("--hub-token", help="hub token symbol or index for decomposition")
    clear.add_argument("--strict-required", action="store_true", help="refuse batches that are not strict")
    clear.add_argument("--summary", action="store_true", help="print a price and surplus table")
    clear.add_argument("--seed", type=int, default=0, help="seed for boundary sampling in the strictness check")
    clear.set_defaults(func=run_clear)
    verify = sub.add_parser("verify", help="re-check a report against its batch file")
    verify.add_argument("batch")
    verify.add_argument("report")
    verify.set_defaults(func=run_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
