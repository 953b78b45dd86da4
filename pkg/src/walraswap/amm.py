"""One-directional AMM return curves and their virtual agents.

An AMM function ``f`` gives the out-amount for an in-amount ``x``. From its
right derivative we derive ``h(r)``, the smallest in-amount that drives the
marginal rate down to ``r``, and ``g(r) = h(1/r) / r``, the out-token supply
of the AMM's virtual agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .market import CurveSupply, DomainError, PairCurve, SupplyFunction, extend_support, supply_sum, ZeroSupply

H_REL_TOL = 1e-12


class AmmError(ValueError):
    pass


class AmmFunction:
    """Base class: subclasses provide ``f``, ``right_derivative``, ``sup_out``."""

    sup_out: float

    def f(self, x) -> np.ndarray:
        raise NotImplementedError

    def right_derivative(self, x) -> np.ndarray:
        raise NotImplementedError

    @property
    def spot(self) -> float:
        return float(self.right_derivative(0.0))

    def h(self, r) -> np.ndarray:
        return h_by_bisection(self, r)

    def h_scalar(self, r: float) -> float:
        return float(self.h(r))


def h_by_bisection(amm: AmmFunction, r, rel_tol: float = H_REL_TOL) -> np.ndarray:
    """``min {x >= 0 : f'_+(x) <= r}`` by monotone bisection, vectorised over ``r``.

    The upper end starts at ``sup_out / spot`` and doubles until the right
    derivative has dropped to ``r``; it always terminates because the
    derivative tends to zero.
    """
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    spot = amm.spot
    active = r < spot
    out = np.zeros_like(r)
    if not np.any(active):
        return out[0] if scalar else out
    ra = r[active]
    hi = np.full_like(ra, amm.sup_out / spot)
    for _ in range(2100):
        grow = amm.right_derivative(hi) > ra
        if not np.any(grow):
            break
        hi = np.where(grow, 2.0 * hi, hi)
    else:
        raise AmmError("derivative does not decay; AMM function is unbounded")
    lo = np.zeros_like(ra)
    for _ in range(3000):
        open_ = (hi - lo) > rel_tol * hi
        if not np.any(open_):
            break
        mid = 0.5 * (lo + hi)
        below = amm.right_derivative(mid) <= ra
        hi = np.where(open_ & below, mid, hi)
        lo = np.where(open_ & ~below, mid, lo)
    out[active] = hi
    return out[0] if scalar else out


def eval_f(amm: AmmFunction, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("in-amount must be nonnegative")
    return amm.f(x)


def right_derivative(amm: AmmFunction, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("in-amount must be nonnegative")
    return amm.right_derivative(x)


def h_of(amm: AmmFunction, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("h is defined for positive rates")
    return amm.h(r)


def g_of(amm: AmmFunction, r) -> np.ndarray:
    """``h(1/r) / r`` for ``r > 0`` and 0 at ``r = 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("g is defined for nonnegative rates")
    pos = r > 0
    inv = np.divide(1.0, r, out=np.ones_like(r), where=pos)
    return np.where(pos, amm.h(inv) * inv, 0.0)


@dataclass(frozen=True)
class ConstantProductAmm(AmmFunction):
    """``f(x) = b γ x / (a + γ x)`` for reserves ``a`` (in) and ``b`` (out)."""

    reserve_in: float
    reserve_out: float
    fee_keep: float = 1.0

    def __post_init__(self):
        if not (self.reserve_in > 0 and self.reserve_out > 0):
            raise AmmError("reserves must be positive")
        if not (0 < self.fee_keep <= 1):
            raise AmmError(f"fee_keep must be in (0, 1], got {self.fee_keep}")

    @property
    def sup_out(self) -> float:
        return self.reserve_out

    @property
    def spot(self) -> float:
        return self.fee_keep * self.reserve_out / self.reserve_in

    def f(self, x):
        gx = self.fee_keep * np.asarray(x, dtype=float)
        return self.reserve_out * gx / (self.reserve_in + gx)

    def right_derivative(self, x):
        a, b, gam = self.reserve_in, self.reserve_out, self.fee_keep
        return gam * a * b / (a + gam * np.asarray(x, dtype=float)) ** 2

    def h(self, r):
        a, b, gam = self.reserve_in, self.reserve_out, self.fee_keep
        r = np.asarray(r, dtype=float)
        return np.maximum(0.0, (np.sqrt(gam * a * b) / np.sqrt(r) - a) / gam)  # split root: r may be subnormal

    def h_scalar(self, r):
        a, b, gam = self.reserve_in, self.reserve_out, self.fee_keep
        return max(0.0, (math.sqrt(gam * a * b) / math.sqrt(r) - a) / gam)


@dataclass(frozen=True)
class Arc:
    """Constant-product piece ``b t / (a + t)`` in the local in-amount ``t``."""

    a: float
    b: float


@dataclass(frozen=True)
class Line:
    """Linear piece ``slope * t``; ``Line(0)`` is a plateau."""

    slope: float = 0.0


Segment = Union[Arc, Line]


@dataclass(frozen=True)
class PiecewiseAmm(AmmFunction):
    """Concatenation of arcs and lines starting at ``breakpoints``.

    ``breakpoints[0]`` must be 0. The final segment extends to infinity and
    must be bounded (an arc or a flat line). Concavity across breakpoints is
    not enforced here; :func:`validate_amm` reports it.
    """

    breakpoints: tuple
    segments: tuple
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _params: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        segs = tuple(self.segments)
        if len(bp) != len(segs) or len(bp) == 0:
            raise AmmError("need one breakpoint per segment")
        if bp[0] != 0 or np.any(np.diff(bp) <= 0):
            raise AmmError("breakpoints must start at 0 and increase")
        for s in segs:
            if isinstance(s, Arc):
                if not (s.a > 0 and s.b > 0):
                    raise AmmError("arc parameters must be positive")
            elif isinstance(s, Line):
                if s.slope < 0:
                    raise AmmError("line slope must be nonnegative")
            else:
                raise AmmError(f"unknown segment {s!r}")
        if isinstance(segs[-1], Line) and segs[-1].slope > 0:
            raise AmmError("final segment must be bounded")
        is_arc = np.array([isinstance(s, Arc) for s in segs])
        a = np.array([s.a if isinstance(s, Arc) else 1.0 for s in segs])
        b = np.array([s.b if isinstance(s, Arc) else 0.0 for s in segs])
        slope = np.array([0.0 if isinstance(s, Arc) else s.slope for s in segs])
        lengths = np.diff(bp)
        local_end = np.where(is_arc[:-1], b[:-1] * lengths / (a[:-1] + lengths), slope[:-1] * lengths)
        starts = np.concatenate([[0.0], np.cumsum(local_end)])
        object.__setattr__(self, "breakpoints", tuple(float(x) for x in bp))
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_params", (bp, is_arc, a, b, slope))

    @classmethod
    def from_lengths(cls, pieces: Sequence) -> "PiecewiseAmm":
        """Build from ``[(length, segment), ..., segment_last]``."""
        bps, segs, x = [], [], 0.0
        for length, seg in pieces[:-1]:
            bps.append(x)
            segs.append(seg)
            x += float(length)
        bps.append(x)
        segs.append(pieces[-1])
        return cls(tuple(bps), tuple(segs))

    @classmethod
    def from_liquidity_ranges(cls, price: float, ranges: Sequence, fee_keep: float = 1.0,
                              zero_for_one: bool = True) -> "PiecewiseAmm":
        """Concentrated-liquidity curve for one swap direction.

        ``ranges`` holds ``(price_lo, price_hi, liquidity)`` with prices in
        token1 per token0. ``zero_for_one`` sells token0 (price falls);
        otherwise token1 is sold (price rises). Fees scale the in-amount by
        ``fee_keep``.
        """
        rs = sorted((float(lo), float(hi), float(liq)) for lo, hi, liq in ranges)
        for (lo1, hi1, _), (lo2, _, _) in zip(rs, rs[1:]):
            if lo2 < hi1:
                raise AmmError("liquidity ranges must not overlap")
        pieces = []
        if zero_for_one:
            for lo, hi, liq in reversed(rs):
                start = min(price, hi)
                if start <= lo or liq <= 0:
                    continue
                sq = np.sqrt(start)
                eff = liq * (1 / np.sqrt(lo) - 1 / sq)
                pieces.append((eff / fee_keep, Arc(liq / sq / fee_keep, liq * sq)))
        else:
            for lo, hi, liq in rs:
                start = max(price, lo)
                if start >= hi or liq <= 0:
                    continue
                sq = np.sqrt(start)
                eff = liq * (np.sqrt(hi) - sq)
                pieces.append((eff / fee_keep, Arc(liq * sq / fee_keep, liq / sq)))
        if not pieces:
            raise AmmError("no liquidity in this direction; spot rate would be 0")
        return cls.from_lengths(pieces + [Line(0.0)])

    def _locate(self, x):
        bp, is_arc, a, b, slope = self._params
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(bp, x, side="right") - 1
        return idx, x - bp[idx], is_arc[idx], a[idx], b[idx], slope[idx]

    def f(self, x):
        idx, t, arc, a, b, slope = self._locate(x)
        return self._starts[idx] + np.where(arc, b * t / (a + t), slope * t)

    def right_derivative(self, x):
        idx, t, arc, a, b, slope = self._locate(x)
        return np.where(arc, a * b / (a + t) ** 2, slope)

    def h_scalar(self, r):
        # walk segments until the marginal rate has dropped to r
        bp, is_arc, a, b, slope = self._params
        last = len(bp) - 1
        for k in range(len(bp)):
            if is_arc[k]:
                if b[k] / a[k] <= r:
                    return float(bp[k])
                t = math.sqrt(a[k] * b[k]) / math.sqrt(r) - a[k]
                if k == last or t <= bp[k + 1] - bp[k]:
                    return float(bp[k] + t)
            elif slope[k] <= r:
                return float(bp[k])
        raise AmmError("unbounded final segment")  # excluded at construction

    def h(self, r):
        r = np.asarray(r, dtype=float)
        return np.vectorize(self.h_scalar, otypes=[float])(r) if r.ndim else np.float64(self.h_scalar(float(r)))

    @property
    def sup_out(self) -> float:
        last = self.segments[-1]
        return float(self._starts[-1] + (last.b if isinstance(last, Arc) else 0.0))

    def left_derivative_at_breaks(self) -> np.ndarray:
        bp, is_arc, a, b, slope = self._params
        t = np.diff(bp)
        return np.where(is_arc[:-1], a[:-1] * b[:-1] / (a[:-1] + t) ** 2, slope[:-1])


@dataclass(frozen=True)
class CallableAmm(AmmFunction):
    """AMM function from explicit callables, for experiments and diagnostics."""

    fn: Callable
    derivative: Callable
    sup_out: float

    def f(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def right_derivative(self, x):
        return np.asarray(self.derivative(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class AmmCurve(PairCurve):
    """``g_f`` as a pair curve: first token = out, second token = in."""

    amm: AmmFunction

    @property
    def g_inf(self) -> float:
        return 0.0

    @property
    def g_sup(self) -> float:
        return float(self.amm.sup_out)

    def g(self, r):
        return g_of(self.amm, r)

    def rg(self, r):
        r = np.asarray(r, dtype=float)
        pos = r > 0
        inv = np.divide(1.0, r, out=np.ones_like(r), where=pos)
        return np.where(pos, self.amm.h(inv), 0.0)

    def value_pair(self, p_out, p_in):
        # p_out g(p_out/p_in) = p_in h(p_in/p_out); both faces give 0. A ratio
        # that underflows to 0 also gives 0: the value is p_out r h(r) -> 0.
        if p_out == 0 or p_in == 0:
            return 0.0
        r = p_in / p_out
        return p_in * self.amm.h_scalar(r) if r > 0 else 0.0

    def value_batch(self, p_out, p_in):
        ok = (p_out > 0) & (p_in > 0)
        r = np.divide(p_in, p_out, out=np.zeros_like(p_in), where=ok)
        ok &= r > 0
        return np.where(ok, p_in * self.amm.h(np.where(ok, r, 1.0)), 0.0)


@dataclass(frozen=True)
class SystemAmm:
    amm: AmmFunction
    in_token: int
    out_token: int
    name: str = ""

    def __post_init__(self):
        if self.in_token == self.out_token:
            raise AmmError("an AMM must have different in and out tokens")
        spot = self.amm.spot
        if not (0 < spot < np.inf):
            raise AmmError(f"spot rate must be finite and positive, got {spot}")


@dataclass(frozen=True)
class AmmSystem:
    amms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "amms", tuple(self.amms))

    def __len__(self):
        return len(self.amms)

    def __iter__(self):
        return iter(self.amms)


def virtual_agent_supply(c: SystemAmm, n: int) -> SupplyFunction:
    """``phi_out = g(p_out/p_in)``, ``phi_in = -h(p_in/p_out)``, zero elsewhere."""
    if c.in_token == c.out_token:
        raise AmmError("in and out token must differ")
    return extend_support(CurveSupply(AmmCurve(c.amm)), (c.out_token, c.in_token), n)


def system_supply(system: AmmSystem, n: int) -> SupplyFunction:
    if not len(system):
        return ZeroSupply(n)
    return supply_sum(*(virtual_agent_supply(c, n) for c in system))


def relative_rates(system: AmmSystem, p) -> np.ndarray:
    """``p_in / p_out`` per AMM; trailing axis indexes AMMs."""
    p = np.asarray(p, dtype=float)
    ins = [c.in_token for c in system]
    outs = [c.out_token for c in system]
    return p[..., ins] / p[..., outs]


def in_amounts(system: AmmSystem, p) -> np.ndarray:
    """In-amount per AMM that moves its marginal rate to ``p_in / p_out``."""
    p = np.asarray(p, dtype=float)
    if not np.all(p > 0):
        raise DomainError("in_amounts needs strictly positive prices")
    rates = relative_rates(system, p)
    out = np.empty_like(rates)
    for k, c in enumerate(system):
        out[..., k] = c.amm.h(rates[..., k])
    return out


@dataclass(frozen=True)
class ConstantProductPool:
    """Two-sided pool holding ``reserve_a`` of token A and ``reserve_b`` of B."""

    reserve_a: float
    reserve_b: float
    fee_keep: float = 1.0

    def __post_init__(self):
        if not (self.reserve_a > 0 and self.reserve_b > 0):
            raise AmmError("pool reserves must be positive")
        if not (0 < self.fee_keep <= 1):
            raise AmmError(f"fee_keep must be in (0, 1], got {self.fee_keep}")

    def split(self):
        fwd = ConstantProductAmm(self.reserve_a, self.reserve_b, self.fee_keep)
        bwd = ConstantProductAmm(self.reserve_b, self.reserve_a, self.fee_keep)
        return fwd, bwd


@dataclass(frozen=True)
class ConcentratedPool:
    """Pool with liquidity ranges ``(price_lo, price_hi, liquidity)``; price is B per A."""

    price: float
    ranges: tuple
    fee_keep: float = 1.0

    def __post_init__(self):
        if not self.price > 0:
            raise AmmError("pool price must be positive")
        if not (0 < self.fee_keep <= 1):
            raise AmmError(f"fee_keep must be in (0, 1], got {self.fee_keep}")
        object.__setattr__(self, "ranges", tuple(tuple(float(v) for v in r) for r in self.ranges))

    def split(self):
        fwd = PiecewiseAmm.from_liquidity_ranges(self.price, self.ranges, self.fee_keep, True)
        bwd = PiecewiseAmm.from_liquidity_ranges(self.price, self.ranges, self.fee_keep, False)
        return fwd, bwd


def split_bidirectional_pool(pool):
    """Model a two-sided pool as a forward (A in, B out) and backward AMM.

    Rejects pools whose two spot rates multiply above 1, which would be a
    round-trip arbitrage at zero size.
    """
    fwd, bwd = pool.split()
    if fwd.spot * bwd.spot > 1 + 1e-12:
        raise AmmError(f"spot rates {fwd.spot:g} and {bwd.spot:g} admit round-trip arbitrage")
    return fwd, bwd


@dataclass
class AmmReport:
    ok: bool
    failures: list  # (check, witness)


def validate_amm(amm: AmmFunction, grid) -> AmmReport:
    """Check ``f(0) = 0``, monotonicity, boundedness, concavity and the spot rate on ``grid``."""
    x = np.unique(np.asarray(grid, dtype=float))
    failures = []
    if np.any(x < 0):
        raise DomainError("grid must be nonnegative")
    M = amm.sup_out
    fx = amm.f(x)
    f0 = float(amm.f(0.0))
    if f0 != 0:
        failures.append(("f(0)=0", (0.0, f0)))
    spot = amm.spot
    if not (0 < spot < np.inf):
        failures.append(("spot", spot))
    if not np.isfinite(M):
        failures.append(("bounded", M))
    else:
        above = np.flatnonzero(fx > M * (1 + 1e-12))
        if above.size:
            failures.append(("bounded", (x[above[0]], fx[above[0]])))
    below_cap = fx < M * (1 - 1e-12)
    dec = np.flatnonzero(np.diff(fx) < 0)
    if dec.size:
        failures.append(("increasing", (x[dec[0]], x[dec[0] + 1])))
    flat = np.flatnonzero((np.diff(fx) <= 0) & below_cap[1:])
    if flat.size and not dec.size:
        failures.append(("increasing", (x[flat[0]], x[flat[0] + 1])))
    d = amm.right_derivative(x)
    up = np.flatnonzero(np.diff(d) > 0)
    if up.size:
        failures.append(("derivative_nonincreasing", (x[up[0]], x[up[0] + 1])))
    same = np.flatnonzero((np.diff(d) >= 0) & below_cap[1:])
    if same.size and not up.size:
        failures.append(("strict_concavity", (x[same[0]], x[same[0] + 1])))
    if len(x) >= 2:
        i, j = np.triu_indices(len(x), k=1)
        mid = 0.5 * (x[i] + x[j])
        fm = amm.f(mid)
        chord = 0.5 * (fx[i] + fx[j])
        concave_bad = np.flatnonzero(fm < chord - 1e-12 * max(M, 1.0))
        if concave_bad.size:
            k = concave_bad[0]
            failures.append(("concavity", (x[i[k]], mid[k], x[j[k]])))
        else:
            strict = below_cap[i] & below_cap[j]
            strict_bad = np.flatnonzero(strict & ~(fm > chord))
            if strict_bad.size:
                k = strict_bad[0]
                failures.append(("strict_concavity", (x[i[k]], mid[k], x[j[k]])))
    return AmmReport(not failures, failures)
