"""Equilibrium prices for aggregate supply functions.

Strategies:

* ``bisection2`` - two tokens, bisection on ``log(p1/p2)``.
* ``rho_iteration`` - damped iteration of ``rho(q) = q - psi(q / M)`` on the
  simplex; convergence is not guaranteed and failure is reported.
* ``simplicial`` - integer-labelled walk on a Freudenthal subdivision with
  restart refinement around the found cell.

``solve`` decomposes the token graph at a hub token, runs the sub-problems
in a thread pool and merges the prices.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .amm import AmmSystem, SystemAmm, system_supply
from .market import (
    StrictnessReport,
    SupplyFunction,
    ZeroSupply,
    check_strictness,
    restrict_support,
    supply_sum,
)
from .simplicial import find_completely_labeled

log = logging.getLogger(__name__)

STRATEGIES = ("auto", "bisection2", "rho_iteration", "simplicial")


@dataclass(frozen=True)
class SolverConfig:
    strategy: str = "auto"
    residual_tol: float = 1e-8
    max_iterations: int = 50_000
    damping: float = 1.0
    warm_start: Optional[tuple] = None
    mesh_depth: int = 52
    hub_token: int = 0
    decompose: bool = True
    max_workers: Optional[int] = None
    strict_required: bool = False
    stall_window: int = 40
    max_doublings: int = 64
    accept_weak_roots: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not self.residual_tol > 0:
            raise ValueError("residual_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.mesh_depth < 1:
            raise ValueError("mesh_depth must be at least 1")
        if self.warm_start is not None:
            object.__setattr__(self, "warm_start", tuple(float(x) for x in self.warm_start))


@dataclass(frozen=True, eq=False)
class EquilibriumProblem:
    """Orders plus an AMM system on ``n`` tokens and their aggregate supply."""

    n: int
    orders: tuple = ()
    amm_system: AmmSystem = AmmSystem()
    strictness_seed: int = 0
    order_supply: SupplyFunction = field(init=False, repr=False)
    aggregate: SupplyFunction = field(init=False, repr=False)
    strictness: StrictnessReport = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two tokens")
        orders = tuple(self.orders)
        object.__setattr__(self, "orders", orders)
        for o in orders:
            if o.n != self.n:
                raise ValueError(f"order supply on {o.n} tokens in a {self.n}-token problem")
        for c in self.amm_system:
            if not (0 <= c.in_token < self.n and 0 <= c.out_token < self.n):
                raise ValueError(f"AMM {c.name!r} refers to a token outside 0..{self.n - 1}")
        order_supply = supply_sum(*orders) if orders else ZeroSupply(self.n)
        aggregate = supply_sum(order_supply, system_supply(self.amm_system, self.n))
        object.__setattr__(self, "order_supply", order_supply)
        object.__setattr__(self, "aggregate", aggregate)
        object.__setattr__(self, "strictness", check_strictness(aggregate, seed=self.strictness_seed))

    @property
    def is_empty(self) -> bool:
        return not self.orders and not len(self.amm_system)

    def parts(self):
        """``(kind, index, support)`` for every order and AMM."""
        for k, o in enumerate(self.orders):
            yield "order", k, frozenset(o.support)
        for k, c in enumerate(self.amm_system):
            yield "amm", k, frozenset((c.in_token, c.out_token))


@dataclass
class EquilibriumResult:
    price: np.ndarray
    residual: float
    iterations: int
    strategy_used: str
    subproblem_trace: list = field(default_factory=list)

    @property
    def rates(self) -> np.ndarray:
        """Prices relative to token 0."""
        return self.price / self.price[0]


class SolverError(RuntimeError):
    def __init__(self, message, result=None, strictness=None):
        super().__init__(message)
        self.result = result
        self.strictness = strictness


class NoEquilibriumBracket(SolverError):
    pass


class IterationLimit(SolverError):
    pass


class MeshLimit(SolverError):
    pass


class EmptyProblem(SolverError):
    pass


class BoundaryRoot(SolverError):
    """The iteration settled where some price is numerically zero; such points
    clear only because every value there vanishes."""


class NotStrict(SolverError):
    pass


class ClusterFailure(SolverError):
    def __init__(self, message, tokens, cause):
        super().__init__(message, getattr(cause, "result", None), getattr(cause, "strictness", None))
        self.tokens = tokens
        self.cause = cause


def normalize(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum(axis=-1, keepdims=True)


def residual(problem: EquilibriumProblem, p) -> float:
    """``max_i |psi_i(p)|`` at the sum-normalised price."""
    return float(np.max(np.abs(problem.aggregate.value_form(normalize(p)))))


def on_boundary(p, tol: float) -> bool:
    """True when a sum-normalised price has a coordinate at or below ``tol``."""
    return bool(np.min(normalize(p)) <= tol)


def upper_bounds(problem: EquilibriumProblem) -> np.ndarray:
    """Per-token supply bounds; tokens nobody supplies are padded with 1."""
    M = np.asarray(problem.aggregate.upper_bounds, dtype=float)
    return np.where(M > 0, M, 1.0)


def rho_map(problem: EquilibriumProblem, q, M: Optional[np.ndarray] = None) -> np.ndarray:
    """``rho_i(q) = q_i (1 - phi_i(q/M) / M_i)``, written as ``q - psi(q/M)`` so it
    extends to the boundary of the simplex."""
    M = upper_bounds(problem) if M is None else M
    q = np.asarray(q, dtype=float)
    return q - problem.aggregate.value_form(q / M)


def _warm_price(problem, config) -> np.ndarray:
    if config.warm_start is None:
        return np.full(problem.n, 1.0 / problem.n)
    p = np.asarray(config.warm_start, dtype=float)
    if p.shape != (problem.n,) or not np.all(p > 0):
        raise ValueError(f"warm start must be {problem.n} positive prices")
    return normalize(p)


def _result(problem, p, iterations, strategy, **trace) -> EquilibriumResult:
    p = normalize(p)
    entry = {"tokens": list(range(problem.n)), "strategy": strategy, "iterations": iterations}
    entry.update(trace)
    res = residual(problem, p)
    entry["residual"] = res
    return EquilibriumResult(p, res, iterations, strategy, [entry])


def solve_bisection2(problem: EquilibriumProblem, config: SolverConfig = SolverConfig()) -> EquilibriumResult:
    """Root of ``r -> psi_1((r, 1) / (1 + r))`` inside a strict sign-change bracket.

    The bracket is searched geometrically around the warm start. Flat zero
    regions without a sign change (weak no-trade roots) are only accepted
    with ``accept_weak_roots``. ``iterations`` counts bisection steps only.
    """
    if problem.n != 2:
        raise ValueError("bisection2 needs exactly two tokens")
    tol = config.residual_tol
    psi = problem.aggregate

    def F(t):
        r = math.exp(t)
        p = np.array([r, 1.0]) / (1.0 + r)
        return float(psi.value_form(p)[0])

    p0 = _warm_price(problem, config)
    t0 = math.log(p0[0] / p0[1])
    f0 = F(t0)
    step = math.log(2.0)
    if config.accept_weak_roots and abs(f0) <= tol:
        return _result(problem, [math.exp(t0), 1.0], 0, "bisection2")
    neg = (t0, f0) if f0 < -tol else None
    pos = (t0, f0) if f0 > tol else None
    weak = None
    for k in range(1, config.max_doublings + 1):
        if neg and pos:
            break
        for t in (t0 - k * step, t0 + k * step):
            ft = F(t)
            if weak is None and abs(ft) <= tol:
                weak = t
            if neg is None and ft < -tol:
                neg = (t, ft)
            if pos is None and ft > tol:
                pos = (t, ft)
    if not (neg and pos) and config.accept_weak_roots and weak is not None:
        return _result(problem, [math.exp(weak), 1.0], 0, "bisection2", weak_root=True)
    if not (neg and pos):
        best = _result(problem, [math.exp(t0), 1.0], 0, "bisection2")
        missing = "positive" if pos is None else "negative"
        raise NoEquilibriumBracket(
            f"no {missing} value of psi_1 for p1/p2 within 2^+-{config.max_doublings} of the warm start; "
            f"{problem.strictness.describe()}",
            best, problem.strictness,
        )
    if abs(f0) <= tol:
        return _result(problem, [math.exp(t0), 1.0], 0, "bisection2")
    (a, fa), (b, fb) = neg, pos  # F(a) < 0 < F(b); a may lie above b
    best_t, best_f = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    steps = 0
    while True:
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        fm = F(mid)
        steps += 1
        if abs(fm) < abs(best_f):
            best_t, best_f = mid, fm
        if abs(fm) <= tol:
            break
        if fm < 0:
            a = mid
        else:
            b = mid
    result = _result(problem, [math.exp(best_t), 1.0], steps, "bisection2")
    if result.residual > tol:
        raise IterationLimit(f"bisection exhausted float resolution at residual {result.residual:.3g}",
                             result, problem.strictness)
    return result


def _lipschitz_estimate(problem, q, M, eta=1e-7) -> float:
    base = problem.aggregate.value_form(q / M)
    worst = 0.0
    for i in range(problem.n):
        d = -q.copy()
        d[i] += 1.0
        step = eta / max(np.max(np.abs(d)), 1e-300)
        moved = problem.aggregate.value_form(np.clip(q + step * d, 0, None) / M)
        worst = max(worst, float(np.max(np.abs(moved - base))) / eta)
    return worst


def solve_rho_iteration(problem: EquilibriumProblem, config: SolverConfig = SolverConfig()) -> EquilibriumResult:
    """Damped iteration ``q <- (1 - a) q + a rho(q)``; ``a`` halves whenever the
    residual stops improving for ``stall_window`` steps."""
    tol = config.residual_tol
    M = upper_bounds(problem)
    q = normalize(M * _warm_price(problem, config))
    value_form = problem.aggregate.value_form

    def measure(q):
        p = q / M
        v = value_form(p)
        return v, float(np.max(np.abs(v))) / float(p.sum())

    v, res = measure(q)
    if res <= tol:
        return _result(problem, q / M, 0, "rho_iteration", damping=config.damping)
    L = _lipschitz_estimate(problem, q, M)
    alpha = config.damping if L <= 0 else min(config.damping, 1.0 / L)
    best_q, best_res, last_gain = q, res, 0
    halvings = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        q = np.clip(q - alpha * v, 0.0, None)
        q /= q.sum()
        v, res = measure(q)
        if res < best_res:
            best_q, best_res, last_gain = q, res, it
        if res <= tol:
            if on_boundary(q / M, tol):
                best = _result(problem, q / M, it, "rho_iteration", damping=alpha, halvings=halvings)
                raise BoundaryRoot(f"rho iteration reached a boundary point {best.price}", best, problem.strictness)
            return _result(problem, q / M, it, "rho_iteration", damping=alpha, halvings=halvings)
        if it - last_gain >= config.stall_window:
            alpha *= 0.5
            halvings += 1
            q = best_q
            v, res = measure(q)
            last_gain = it
            if alpha < 1e-14:
                break
    best = _result(problem, best_q / M, it, "rho_iteration", damping=alpha, halvings=halvings)
    raise IterationLimit(f"rho iteration stopped at residual {best.residual:.3g} (tol {tol:g})",
                         best, problem.strictness)


_MAX_GRID = 1 << 16


def _local_frame(q, width):
    """Offset ``l >= 0`` with ``q = l + width * lam`` for a local barycentric
    point ``lam`` as central as the global boundary allows."""
    q = np.asarray(q, dtype=float)
    if width >= 1.0:
        return np.zeros_like(q)
    cap = q / width
    # water-fill lam = min(cap, tau) with sum(lam) = 1; sum(cap) = 1/width > 1
    lo, hi = 0.0, float(cap.max())
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.minimum(cap, tau).sum() < 1.0:
            lo = tau
        else:
            hi = tau
    lam = np.minimum(cap, hi)
    lam /= lam.sum()
    return np.clip(q - width * lam, 0.0, None)


def _regularized(problem, M, eps):
    """Value excess plus ``eps * (q - 1/n)``. The extra term keeps Walras' law
    and makes every face strictly underpriced, so corners where all values
    vanish stop attracting the walk; ``eps`` shrinks with the mesh."""
    value_form = problem.aggregate.value_form
    n = problem.n

    def excess(q):
        return value_form(q / M) + eps * (q - 1.0 / n)

    return excess


def _argmax_labeler(excess, offset, width, D):
    """Label a local grid point by the token with the largest excess among the
    coordinates that are positive in the local barycentric frame."""

    def point(a):
        return offset + width * (a / D)

    def label(a):
        v = excess(point(a))
        support = np.flatnonzero(a > 0)
        return int(support[np.argmax(v[support])])

    return label, point


def solve_simplicial(problem: EquilibriumProblem, config: SolverConfig = SolverConfig()) -> EquilibriumResult:
    """Completely labelled cell on the whole simplex, then repeated walks on
    shrinking local simplices around the previous cell.

    A local cell is accepted only if every vertex label is also the argmax of
    the value excess over the vertex's global support; a vertex on a local
    facet inside the simplex can fail this, and then the local simplex widens
    (at full width the check holds by construction).
    """
    tol = config.residual_tol
    n = problem.n
    M = upper_bounds(problem)
    value_form = problem.aggregate.value_form
    q0 = normalize(M * _warm_price(problem, config))

    def res_at(q):
        return residual(problem, q / M)

    if res_at(q0) <= tol:
        return _result(problem, q0 / M, 0, "simplicial", mesh=0.0)
    D_global, D_local = 32, 64
    pivots = 0
    # the value form vanishes at the corner of a token nobody sells, so start
    # the walk at the corner of the most supplied token instead
    start = int(np.argmax(problem.aggregate.upper_bounds))

    def walk(center, width, D):
        nonlocal pivots
        offset = _local_frame(center, width)
        excess = _regularized(problem, M, width / D)
        label, point = _argmax_labeler(excess, offset, width, D)
        verts, labels, piv = find_completely_labeled(
            lambda a: (label(np.roll(a, start)) - start) % n, n, D)
        verts = [np.roll(a, start) for a in verts]
        labels = [(lab + start) % n for lab in labels]
        pivots += piv
        genuine = True
        for a, lab in zip(verts, labels):
            q = point(a)
            if np.all((a > 0) | (q <= 0)):
                continue  # local support equals global support
            v = excess(q)
            if v[lab] < np.max(v[q > 0]):
                genuine = False
                break
        return normalize(np.mean([point(a) for a in verts], axis=0)), genuine

    q, _ = walk(q0, 1.0, D_global)
    best_q, best_res = q, res_at(q)
    mesh, width = 1.0 / D_global, 1.0
    levels = 1

    def give_up(reason):
        best = _result(problem, best_q / M, pivots, "simplicial", mesh=mesh, levels=levels)
        return MeshLimit(f"{reason} at residual {best.residual:.3g} (tol {tol:g})", best, problem.strictness)

    while best_res > tol:
        if -math.log2(mesh) >= config.mesh_depth:
            raise give_up(f"mesh 2^-{config.mesh_depth} reached")
        # every level shrinks the mesh 4x; the box only shrinks while the
        # cells it yields stay genuine
        target = mesh / 4.0
        w = max(D_local * target, width / 16.0)
        while True:
            D = int(round(min(w, 1.0) / target))
            if D > _MAX_GRID:
                raise give_up(f"grid of {D} steps needed")
            nq, genuine = walk(q, min(w, 1.0), D)
            levels += 1
            if genuine or w >= 1.0:
                break
            w *= 4.0
        q, mesh, width = nq, target, min(w, 1.0)
        r = res_at(q)
        if r < best_res:
            best_q, best_res = q, r
    if on_boundary(best_q / M, tol):
        best = _result(problem, best_q / M, pivots, "simplicial", mesh=mesh, levels=levels)
        raise BoundaryRoot(f"simplicial walk reached a boundary point {best.price}", best, problem.strictness)
    return _result(problem, best_q / M, pivots, "simplicial", mesh=mesh, levels=levels)


def _solve_auto(problem, config):
    if problem.n == 2:
        return solve_bisection2(problem, config)
    try:
        return solve_rho_iteration(problem, config)
    except (IterationLimit, BoundaryRoot) as exc:
        log.info("rho iteration failed (%s); falling back to simplicial", exc)
        usable = exc.result is not None and isinstance(exc, IterationLimit)
        warm = tuple(exc.result.price) if usable else config.warm_start
        out = solve_simplicial(problem, replace(config, warm_start=warm))
        out.strategy_used = "rho_iteration+simplicial"
        out.subproblem_trace[0]["strategy"] = out.strategy_used
        out.iterations += exc.result.iterations if exc.result is not None else 0
        return out


_DISPATCH = {
    "auto": _solve_auto,
    "bisection2": solve_bisection2,
    "rho_iteration": solve_rho_iteration,
    "simplicial": solve_simplicial,
}


@dataclass
class SubProblem:
    tokens: tuple
    problem: EquilibriumProblem
    attached: bool  # True when the hub token is part of ``tokens``


def restrict_problem(problem: EquilibriumProblem, tokens, order_idx, amm_idx) -> EquilibriumProblem:
    pos = {t: j for j, t in enumerate(tokens)}
    orders = tuple(restrict_support(problem.orders[k], tokens) for k in order_idx)
    amms = tuple(
        SystemAmm(c.amm, pos[c.in_token], pos[c.out_token], c.name)
        for c in (problem.amm_system.amms[k] for k in amm_idx)
    )
    return EquilibriumProblem(len(tokens), orders, AmmSystem(amms))


def decompose(problem: EquilibriumProblem, hub: int = 0) -> list:
    """Split at ``hub``: one sub-problem per connected component of the token
    graph with the hub removed, each joined with the hub when it trades
    against it."""
    n = problem.n
    if not 0 <= hub < n:
        raise ValueError(f"hub token {hub} out of range")
    rows, cols = [], []
    parts = list(problem.parts())
    for _, _, support in parts:
        others = sorted(support - {hub})
        for a in others:
            for b in others:
                rows.append(a)
                cols.append(b)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups: dict = {}
    for t in range(n):
        if t != hub:
            groups.setdefault(comp[t], []).append(t)
    subs = []
    for members in sorted(groups.values()):
        mset = set(members)
        order_idx = [k for kind, k, s in parts if kind == "order" and s - {hub} and s - {hub} <= mset]
        amm_idx = [k for kind, k, s in parts if kind == "amm" and s - {hub} and s - {hub} <= mset]
        touches_hub = any(hub in s for kind, k, s in parts
                          if (kind == "order" and k in order_idx) or (kind == "amm" and k in amm_idx))
        tokens = tuple(sorted(mset | {hub})) if touches_hub or len(groups) == 1 else tuple(members)
        if len(tokens) == 1:
            tokens = tuple(sorted(mset | {hub}))
        subs.append(SubProblem(tokens, restrict_problem(problem, tokens, order_idx, amm_idx), hub in tokens))
    return subs


def _face_price(problem, tokens, config):
    """Sum-normalised equilibrium price of the parts living inside ``tokens``."""
    tset = set(tokens)
    parts = list(problem.parts())
    order_idx = [k for kind, k, sup in parts if kind == "order" and sup <= tset]
    amm_idx = [k for kind, k, sup in parts if kind == "amm" and sup <= tset]
    if len(tokens) == 1 or not (order_idx or amm_idx):
        return np.full(len(tokens), 1.0 / len(tokens)), "trivial"
    sub = restrict_problem(problem, tokens, order_idx, amm_idx)
    out = _solve_one(sub, replace(config, warm_start=None, accept_weak_roots=True))
    return out.price, out.strategy_used


def _repair_boundary(problem, exc, config):
    """Turn a root whose small prices vanish into an interior one.

    The tokens priced at or below the tolerance and the rest are cleared
    separately and mixed with weights ``c`` and ``1 - c``. A grid of ``c`` is
    tried first; orders across the two blocks can keep every grid mix out of
    balance, so a sign flip of the value excess along the mix is bisected,
    and as a last resort rho iteration restarts from that crossing (or c = 1/2).
    Returns None when nothing clears.
    """
    tol = config.residual_tol
    p = normalize(exc.result.price)
    small = list(np.flatnonzero(p <= tol))
    big = list(np.flatnonzero(p > tol))
    if not small or not big:
        return None
    block_cfg = replace(config, residual_tol=tol / 2)
    try:
        p_small, s_small = _face_price(problem, tuple(int(i) for i in small), block_cfg)
        p_big, s_big = _face_price(problem, tuple(int(i) for i in big), block_cfg)
    except SolverError:
        return None

    def mix(c):
        q = np.empty(problem.n)
        q[small] = c * p_small
        q[big] = (1 - c) * p_big
        return q

    def done(q, how):
        strategy = f"{exc.result.strategy_used}+face_repair"
        return _result(problem, q, exc.result.iterations, strategy, small_tokens=[int(i) for i in small],
                       repair=how, blocks=[s_small, s_big])

    grid = sorted({0.5 ** k for k in range(1, 64)} | {1 - 0.5 ** k for k in range(1, 40)})
    grid = [c for c in grid if not on_boundary(mix(c), tol)]
    if not grid:
        return None
    excess = [problem.aggregate.value_form(mix(c)) for c in grid]
    norms = [float(np.max(np.abs(v))) for v in excess]
    for c, r in sorted(zip(grid, norms), key=lambda t: -t[0]):
        if r <= tol:
            return done(mix(c), {"mix": c})
    warm = mix(0.5)
    for k in range(len(grid) - 1):
        ref = excess[k]
        if float(ref @ excess[k + 1]) < 0:
            lo, hi = grid[k], grid[k + 1]
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if float(ref @ problem.aggregate.value_form(mix(mid))) > 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-16 * hi:
                    break
            for c in (lo, hi):
                if residual(problem, mix(c)) <= tol:
                    return done(mix(c), {"mix": c, "bisected": True})
            warm = mix(lo)
            break
    try:
        out = solve_rho_iteration(problem, replace(config, warm_start=tuple(warm)))
    except SolverError:
        return None
    return done(out.price, {"restart": "rho_iteration", "iterations": out.iterations})


def _solve_one(problem, config):
    solver = _solve_auto if config.strategy == "auto" else _DISPATCH[config.strategy]
    try:
        return solver(problem, config)
    except BoundaryRoot as exc:
        repaired = _repair_boundary(problem, exc, config)
        if repaired is None:
            raise
        log.info("boundary root repaired: %s", repaired.subproblem_trace[0])
        return repaired


def solve(problem: EquilibriumProblem, config: SolverConfig = SolverConfig()) -> EquilibriumResult:
    """Decompose, solve sub-problems in parallel, merge and re-check the full residual."""
    if problem.is_empty:
        raise EmptyProblem("batch has no orders and no AMMs")
    if not problem.strictness.strict_ok:
        msg = f"aggregate supply is not strict: {problem.strictness.describe()}"
        if config.strict_required:
            raise NotStrict(msg, strictness=problem.strictness)
        log.warning(msg)
    p0 = _warm_price(problem, config)
    subs = decompose(problem, config.hub_token) if config.decompose else [
        SubProblem(tuple(range(problem.n)), problem, True)]
    if len(subs) == 1 and subs[0].tokens == tuple(range(problem.n)):
        result = _solve_one(problem, config)
        if result.residual > config.residual_tol:
            raise SolverError(f"residual {result.residual:.3g} above tolerance", result, problem.strictness)
        return result

    hub = config.hub_token
    sub_tol = config.residual_tol / max(1, sum(s.attached for s in subs))

    def run(sub):
        warm = tuple(p0[list(sub.tokens)])
        # a strict parent has a root, and every cluster sits at a root there,
        # possibly a flat no-trade one
        cfg = replace(config, warm_start=warm, residual_tol=sub_tol,
                      accept_weak_roots=config.accept_weak_roots or problem.strictness.strict_ok)
        if not sub.problem.orders and not len(sub.problem.amm_system):
            return _result(sub.problem, warm, 0, "trivial")
        return _solve_one(sub.problem, cfg)

    workers = config.max_workers or len(subs)
    outcomes = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, sub) for sub in subs]
        for sub, fut in zip(subs, futures):
            try:
                outcomes.append(fut.result())
            except SolverError as exc:
                raise ClusterFailure(f"cluster {list(sub.tokens)} failed: {exc}", sub.tokens, exc) from exc

    price = np.zeros(problem.n)
    price[hub] = 1.0
    trace = []
    for sub, out in zip(subs, outcomes):
        local = out.price / (out.price[sub.tokens.index(hub)] if sub.attached else out.price[0])
        for t, v in zip(sub.tokens, local):
            if t != hub or not sub.attached:
                price[t] = v
        for entry in out.subproblem_trace:
            entry = dict(entry)
            entry["tokens"] = [sub.tokens[j] for j in entry["tokens"]]
            trace.append(entry)
    price = normalize(price)
    full = residual(problem, price)
    result = EquilibriumResult(
        price, full, sum(o.iterations for o in outcomes),
        "decomposed(" + ",".join(sorted({o.strategy_used for o in outcomes})) + ")",
        [{"parallel_subsolves": len(subs), "workers": workers, "hub": hub}] + trace,
    )
    if full > config.residual_tol:
        raise SolverError(f"merged residual {full:.3g} above tolerance", result, problem.strictness)
    return result
