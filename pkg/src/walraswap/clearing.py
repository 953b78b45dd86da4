"""Settlement at an equilibrium price: fills, AMM legs and auctioneer surplus.

Surplus of token ``i`` at prices ``p`` and AMM in-amounts ``x``::

    s_i = phi_i(p) - sum_{in(c)=i} x_c + sum_{out(c)=i} f_c(x_c)

where ``phi`` is the orders-only aggregate. At an equilibrium with
``x = h(p)`` it equals a sum of nonnegative per-AMM terms
``f_c(h_c(r_c)) - r_c h_c(r_c)`` with ``r_c = p_in / p_out``. The two
expressions differ by exactly ``psi_i(p) / p_i``, which makes their
agreement an end-to-end check on the solver.

Tolerances on surplus are in value units on the sum-normalised price,
i.e. they bound ``p_i * s_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .amm import in_amounts, relative_rates
from .solver import EquilibriumProblem, EquilibriumResult, normalize, residual

SURPLUS_TOL = 1e-8
CERTIFIED = "CERTIFIED"
FAILED = "FAILED"


class ClearingError(ValueError):
    pass


def _interior(problem: EquilibriumProblem, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (problem.n,):
        raise ClearingError(f"price must have {problem.n} coordinates, got shape {p.shape}")
    if not np.all(p > 0):
        raise ClearingError("settlement needs strictly positive prices")
    return normalize(p)


def amm_outputs(problem: EquilibriumProblem, x) -> np.ndarray:
    return np.array([float(c.amm.f(xc)) for c, xc in zip(problem.amm_system, x)])


def compute_surplus(problem: EquilibriumProblem, p, x) -> np.ndarray:
    """Token amounts left with the auctioneer after all fills and AMM legs."""
    p = _interior(problem, p)
    x = np.asarray(x, dtype=float)
    if x.shape != (len(problem.amm_system),):
        raise ClearingError(f"need one in-amount per AMM ({len(problem.amm_system)}), got {x.shape}")
    if np.any(x < 0):
        raise ClearingError("AMM in-amounts must be nonnegative")
    s = problem.order_supply.evaluate(p).astype(float)
    for c, xc, yc in zip(problem.amm_system, x, amm_outputs(problem, x)):
        s[c.in_token] -= xc
        s[c.out_token] += yc
    return s


def amm_surplus_terms(problem: EquilibriumProblem, p) -> np.ndarray:
    """``f(h(r)) - r h(r)`` per AMM at ``r = p_in / p_out``; nonnegative by concavity."""
    p = _interior(problem, p)
    if not len(problem.amm_system):
        return np.zeros(0)
    rates = relative_rates(problem.amm_system, p)
    terms = []
    for c, r in zip(problem.amm_system, rates):
        h = float(c.amm.h(r))
        terms.append(float(c.amm.f(h)) - r * h)
    return np.array(terms)


def surplus_via_theorem(problem: EquilibriumProblem, p, tol: float = 1e-8) -> np.ndarray:
    """Surplus at an equilibrium from the per-AMM terms alone.

    Raises :class:`ClearingError` when ``p`` is not an equilibrium within
    ``tol``, since the identity only holds where the aggregate vanishes.
    """
    p = _interior(problem, p)
    res = residual(problem, p)
    if res > tol:
        raise ClearingError(f"price is not an equilibrium: residual {res:.3g} > {tol:g}")
    s = np.zeros(problem.n)
    for c, term in zip(problem.amm_system, amm_surplus_terms(problem, p)):
        s[c.out_token] += term
    return s


def total_value(p, s) -> float:
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    if p.shape != s.shape:
        raise ClearingError(f"shape mismatch {p.shape} vs {s.shape}")
    return float(p @ s)


def amm_objective(problem: EquilibriumProblem, p, k: int, x) -> np.ndarray:
    """Value gained from AMM ``k`` alone at in-amount(s) ``x``: ``p_out f(x) - p_in x``.

    The total value is the sum of these over AMMs, so it is maximised one
    coordinate at a time.
    """
    c = problem.amm_system.amms[k]
    x = np.asarray(x, dtype=float)
    return p[c.out_token] * c.amm.f(x) - p[c.in_token] * x


@dataclass
class OptimalityReport:
    ok: bool
    violations: list = field(default_factory=list)  # (amm index, x, gain over x*)
    checked: int = 0


def verify_optimality(problem: EquilibriumProblem, p, x_star=None, delta: float = 1e-6,
                      grid_points: int = 1001, slack: float = 1e-12) -> OptimalityReport:
    """Check that ``x*`` maximises the total value, by ``+-delta`` perturbation and a
    grid over ``[0, X_max]`` per AMM (``X_max = M / r`` bounds where the
    objective can still be positive)."""
    p = _interior(problem, p)
    x_star = in_amounts(problem.amm_system, p) if x_star is None else np.asarray(x_star, dtype=float)
    report = OptimalityReport(True)
    rates = relative_rates(problem.amm_system, p) if len(problem.amm_system) else []
    for k, (c, xs, r) in enumerate(zip(problem.amm_system, x_star, rates)):
        base = float(amm_objective(problem, p, k, xs))
        tol = slack * max(1.0, abs(base))
        x_max = max(float(c.amm.sup_out) / r, 2.0 * xs, delta)
        trials = np.concatenate([[xs + delta, max(xs - delta, 0.0)], np.linspace(0.0, x_max, grid_points)])
        gains = amm_objective(problem, p, k, trials) - base
        report.checked += len(trials)
        worst = int(np.argmax(gains))
        if gains[worst] > tol:
            report.ok = False
            report.violations.append((k, float(trials[worst]), float(gains[worst])))
    return report


@dataclass(frozen=True)
class AmmLeg:
    in_token: int
    out_token: int
    in_amount: float
    out_amount: float


@dataclass
class ClearingOutcome:
    price: np.ndarray
    order_fills: np.ndarray  # one row per order: signed token amounts supplied
    amm_legs: list
    surplus: np.ndarray
    surplus_theorem: Optional[np.ndarray]
    total_value: float
    residual: float
    status: str
    diagnostics: list = field(default_factory=list)
    optimality: Optional[OptimalityReport] = None

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    @property
    def negative_tokens(self) -> list:
        return [i for i, v in enumerate(self.price * self.surplus) if v < -SURPLUS_TOL]


def settle(problem: EquilibriumProblem, result, surplus_tol: float = SURPLUS_TOL,
           residual_tol: float = 1e-8, delta: float = 1e-6) -> ClearingOutcome:
    """Execute all orders and AMM legs at the result's price and certify the outcome.

    ``result`` is an :class:`EquilibriumResult` or a bare price vector.
    Negative surplus is reported, never clipped.
    """
    price = result.price if isinstance(result, EquilibriumResult) else result
    p = _interior(problem, price)
    res = residual(problem, p)
    diagnostics = []
    fills = (np.array([o.evaluate(p) for o in problem.orders]) if problem.orders
             else np.zeros((0, problem.n)))
    x = in_amounts(problem.amm_system, p) if len(problem.amm_system) else np.zeros(0)
    y = amm_outputs(problem, x)
    legs = [AmmLeg(c.in_token, c.out_token, float(xc), float(yc))
            for c, xc, yc in zip(problem.amm_system, x, y)]
    s = compute_surplus(problem, p, x)
    if res > residual_tol:
        diagnostics.append(f"residual {res:.3g} exceeds {residual_tol:g}; not an equilibrium")
        s_thm = None
    else:
        s_thm = surplus_via_theorem(problem, p, residual_tol)
        gap = np.abs(p * (s - s_thm))
        bound = 10.0 * res + 1e-12
        for i in np.flatnonzero(gap > bound):
            diagnostics.append(f"token {i}: surplus paths disagree by {gap[i]:.3g} in value (bound {bound:.3g})")
    for i in np.flatnonzero(p * s < -surplus_tol):
        diagnostics.append(f"token {i}: negative surplus {s[i]:.6g} (value {p[i] * s[i]:.3g})")
    optimality = verify_optimality(problem, p, x, delta=delta)
    for k, xv, gain in optimality.violations:
        diagnostics.append(f"amm {k}: in-amount {xv:.6g} beats the chosen one by {gain:.3g}")
    return ClearingOutcome(
        price=p, order_fills=fills, amm_legs=legs, surplus=s, surplus_theorem=s_thm,
        total_value=total_value(p, s), residual=res,
        status=FAILED if diagnostics else CERTIFIED, diagnostics=diagnostics, optimality=optimality,
    )
