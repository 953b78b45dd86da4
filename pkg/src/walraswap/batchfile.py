"""JSON batch files (schema ``walraswap_batch_v1``).

A batch names its tokens, lists orders and two-sided pools by token symbol
and may carry a warm start and solver overrides. Numbers may be JSON
numbers or decimal strings. Parsing produces a normalised :class:`Batch`
whose :meth:`Batch.to_dict` parses back to the same batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Optional

from .amm import (
    AmmError,
    AmmSystem,
    Arc,
    ConcentratedPool,
    ConstantProductPool,
    Line,
    PiecewiseAmm,
    SystemAmm,
    split_bidirectional_pool,
)
from .orders import DEFAULT_BAND, LimitBuyOrder, LimitSellOrder, OrderError, order_supply
from .solver import EquilibriumProblem, SolverConfig

SCHEMA = "walraswap_batch_v1"
CONFIG_KEYS = ("strategy", "residual_tol", "max_iterations", "damping", "mesh_depth",
               "hub_token", "decompose", "strict_required", "max_workers")


class BatchError(ValueError):
    """Malformed batch; ``where`` names the offending field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _number(value, where: str) -> float:
    if isinstance(value, bool):
        raise BatchError(where, "expected a number")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Decimal(value.strip()))
        except InvalidOperation:
            raise BatchError(where, f"not a decimal number: {value!r}") from None
    raise BatchError(where, f"expected a number, got {type(value).__name__}")


def _positive(value, where: str) -> float:
    x = _number(value, where)
    if not x > 0 or x == float("inf"):
        raise BatchError(where, f"must be positive and finite, got {value!r}")
    return x


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise BatchError(where, "expected an object")
    if key not in obj:
        raise BatchError(f"{where}.{key}", "missing")
    return obj[key]


@dataclass(frozen=True)
class PoolSpec:
    """Normalised pool: ``kind`` plus resolved token indices and parameters."""

    kind: str
    token_a: int
    token_b: int
    fee_bps: float = 0.0
    reserve_a: float = 0.0
    reserve_b: float = 0.0
    price: float = 0.0
    ranges: tuple = ()
    forward: tuple = ()  # explicit segments for A -> B
    backward: tuple = ()  # explicit segments for B -> A

    @property
    def fee_keep(self) -> float:
        return 1.0 - self.fee_bps / 10_000.0

    def amms(self):
        """The two one-directional AMM functions ``(A -> B, B -> A)``."""
        if self.kind == "constant_product":
            return split_bidirectional_pool(ConstantProductPool(self.reserve_a, self.reserve_b, self.fee_keep))
        if self.ranges:
            return split_bidirectional_pool(ConcentratedPool(self.price, self.ranges, self.fee_keep))
        return split_bidirectional_pool(SegmentPool(self.forward, self.backward, self.fee_keep))


@dataclass(frozen=True)
class SegmentPool:
    """Pool given by explicit segment lists per direction, before fees."""

    forward: tuple
    backward: tuple
    fee_keep: float = 1.0

    def split(self):
        return _segments_amm(self.forward, self.fee_keep), _segments_amm(self.backward, self.fee_keep)


def _segment(kind, params, gamma):
    # the fee scales the in-amount: f(gamma x)
    if kind == "arc":
        a, b = params
        return Arc(a / gamma, b)
    return Line(params[0] * gamma if params else 0.0)


def _segments_amm(segments, fee_keep: float = 1.0) -> PiecewiseAmm:
    pieces = []
    for kind, length, *params in segments[:-1]:
        pieces.append((length / fee_keep, _segment(kind, params, fee_keep)))
    kind, _, *params = segments[-1]
    pieces.append(_segment(kind, params, fee_keep))
    return PiecewiseAmm.from_lengths(pieces)


@dataclass
class Batch:
    tokens: tuple
    orders: tuple
    pools: tuple
    warm_start: Optional[tuple] = None
    config: dict = field(default_factory=dict)
    digest: str = ""

    @property
    def n(self) -> int:
        return len(self.tokens)

    def index(self, symbol) -> int:
        return self.tokens.index(symbol)

    def amm_system(self) -> AmmSystem:
        amms = []
        for k, pool in enumerate(self.pools):
            fwd, bwd = pool.amms()
            a, b = self.tokens[pool.token_a], self.tokens[pool.token_b]
            amms.append(SystemAmm(fwd, pool.token_a, pool.token_b, f"pool{k}:{a}->{b}"))
            amms.append(SystemAmm(bwd, pool.token_b, pool.token_a, f"pool{k}:{b}->{a}"))
        return AmmSystem(tuple(amms))

    def problem(self, seed: int = 0) -> EquilibriumProblem:
        supplies = tuple(order_supply(o, self.n) for o in self.orders)
        return EquilibriumProblem(self.n, supplies, self.amm_system(), strictness_seed=seed)

    def solver_config(self, **overrides) -> SolverConfig:
        cfg = {k: v for k, v in self.config.items() if k in CONFIG_KEYS}
        cfg.update({k: v for k, v in overrides.items() if v is not None})
        if self.warm_start is not None:
            cfg["warm_start"] = self.warm_start
        return SolverConfig(**cfg)

    def to_dict(self) -> dict:
        sym = self.tokens
        orders = []
        for o in self.orders:
            if isinstance(o, LimitSellOrder):
                orders.append({"kind": "sell", "sell_token": sym[o.sell_token], "buy_token": sym[o.buy_token],
                               "amount": o.amount, "r1": o.r1, "r2": o.r2})
            else:
                orders.append({"kind": "buy", "buy_token": sym[o.buy_token], "pay_token": sym[o.pay_token],
                               "amount": o.amount, "r1": o.r1, "r2": o.r2})
        pools = []
        for pool in self.pools:
            entry = {"kind": pool.kind, "token_a": sym[pool.token_a], "token_b": sym[pool.token_b],
                     "fee_bps": pool.fee_bps}
            if pool.kind == "constant_product":
                entry.update(reserve_a=pool.reserve_a, reserve_b=pool.reserve_b)
            elif pool.ranges:
                entry.update(price=pool.price, ranges=[list(r) for r in pool.ranges])
            else:
                entry.update(forward=[list(s) for s in pool.forward], backward=[list(s) for s in pool.backward])
            pools.append(entry)
        out = {"schema": SCHEMA, "tokens": list(sym), "orders": orders, "pools": pools}
        if self.warm_start is not None:
            out["warm_start"] = list(self.warm_start)
        if self.config:
            out["config"] = dict(self.config)
        return out


def _token(symbols: dict, value, where: str) -> int:
    if value not in symbols:
        raise BatchError(where, f"unknown token {value!r}")
    return symbols[value]


def _band(entry: dict, where: str):
    """Either explicit ``r1``/``r2`` or ``limit_price`` with optional ``band_fraction``."""
    if "r1" in entry or "r2" in entry:
        return None, (_positive(_require(entry, "r1", where), f"{where}.r1"),
                      _positive(_require(entry, "r2", where), f"{where}.r2"))
    limit = _positive(_require(entry, "limit_price", where), f"{where}.limit_price")
    band = _positive(entry.get("band_fraction", DEFAULT_BAND), f"{where}.band_fraction")
    return (limit, band), None


def _parse_order(entry, symbols, where):
    if not isinstance(entry, dict):
        raise BatchError(where, "expected an object")
    if entry.get("all_or_nothing"):
        raise BatchError(f"{where}.all_or_nothing", "all-or-nothing orders are not supported; orders fill continuously")
    kind = _require(entry, "kind", where)
    amount = _positive(_require(entry, "amount", where), f"{where}.amount")
    limit, explicit = _band(entry, where)
    try:
        if kind == "sell":
            a = _token(symbols, _require(entry, "sell_token", where), f"{where}.sell_token")
            b = _token(symbols, _require(entry, "buy_token", where), f"{where}.buy_token")
            if explicit:
                return LimitSellOrder(a, b, amount, *explicit)
            return LimitSellOrder.at_limit(a, b, amount, *limit)
        if kind == "buy":
            a = _token(symbols, _require(entry, "buy_token", where), f"{where}.buy_token")
            b = _token(symbols, _require(entry, "pay_token", where), f"{where}.pay_token")
            if explicit:
                return LimitBuyOrder(a, b, amount, *explicit)
            return LimitBuyOrder.at_limit(a, b, amount, *limit)
    except OrderError as exc:
        raise BatchError(where, str(exc)) from None
    raise BatchError(f"{where}.kind", f"expected 'sell' or 'buy', got {kind!r}")


def _parse_segments(raw, where):
    if not isinstance(raw, list) or not raw:
        raise BatchError(where, "expected a nonempty list of segments")
    out = []
    for k, seg in enumerate(raw):
        w = f"{where}[{k}]"
        if isinstance(seg, dict):
            kind = _require(seg, "kind", w)
            length = _number(seg.get("length", 0), f"{w}.length")
            params = ([_positive(_require(seg, "a", w), f"{w}.a"), _positive(_require(seg, "b", w), f"{w}.b")]
                      if kind == "arc" else [_number(seg.get("slope", 0), f"{w}.slope")])
        elif isinstance(seg, list) and seg:
            kind, length, params = seg[0], _number(seg[1], f"{w}[1]"), [_number(v, w) for v in seg[2:]]
        else:
            raise BatchError(w, "expected a segment object")
        if kind not in ("arc", "line"):
            raise BatchError(w, f"segment kind must be 'arc' or 'line', got {kind!r}")
        if k < len(raw) - 1 and not length > 0:
            raise BatchError(w, "every segment but the last needs a positive length")
        out.append((kind, length, *params))
    return tuple(out)


def _parse_pool(entry, symbols, where):
    kind = _require(entry, "kind", where)
    a = _token(symbols, _require(entry, "token_a", where), f"{where}.token_a")
    b = _token(symbols, _require(entry, "token_b", where), f"{where}.token_b")
    if a == b:
        raise BatchError(where, "a pool needs two different tokens")
    fee = _number(entry.get("fee_bps", 0), f"{where}.fee_bps")
    if not 0 <= fee < 10_000:
        raise BatchError(f"{where}.fee_bps", f"must be in [0, 10000), got {fee}")
    if kind == "constant_product":
        spec = PoolSpec(kind, a, b, fee,
                        reserve_a=_positive(_require(entry, "reserve_a", where), f"{where}.reserve_a"),
                        reserve_b=_positive(_require(entry, "reserve_b", where), f"{where}.reserve_b"))
    elif kind == "piecewise":
        if "ranges" in entry:
            ranges = []
            for k, r in enumerate(entry["ranges"]):
                w = f"{where}.ranges[{k}]"
                if not isinstance(r, list) or len(r) != 3:
                    raise BatchError(w, "expected [price_lo, price_hi, liquidity]")
                lo, hi, liq = (_positive(v, w) for v in r)
                if not lo < hi:
                    raise BatchError(w, "price_lo must be below price_hi")
                ranges.append((lo, hi, liq))
            spec = PoolSpec(kind, a, b, fee, price=_positive(_require(entry, "price", where), f"{where}.price"),
                            ranges=tuple(ranges))
        else:
            spec = PoolSpec(kind, a, b, fee,
                            forward=_parse_segments(_require(entry, "forward", where), f"{where}.forward"),
                            backward=_parse_segments(_require(entry, "backward", where), f"{where}.backward"))
    else:
        raise BatchError(f"{where}.kind", f"expected 'constant_product' or 'piecewise', got {kind!r}")
    try:
        spec.amms()
    except AmmError as exc:
        raise BatchError(where, str(exc)) from None
    return spec


def _parse_config(raw, symbols) -> dict:
    if not isinstance(raw, dict):
        raise BatchError("config", "expected an object")
    out = {}
    for key, value in raw.items():
        where = f"config.{key}"
        if key not in CONFIG_KEYS:
            raise BatchError(where, "unknown setting")
        if key == "hub_token":
            value = _token(symbols, value, where) if isinstance(value, str) else int(value)
        elif key in ("residual_tol", "damping"):
            value = _positive(value, where)
        elif key in ("max_iterations", "mesh_depth", "max_workers"):
            value = int(_positive(value, where))
        elif key in ("decompose", "strict_required"):
            if not isinstance(value, bool):
                raise BatchError(where, "expected true or false")
        out[key] = value
    return out


def parse_batch_dict(data: Any, digest: str = "") -> Batch:
    if not isinstance(data, dict):
        raise BatchError("$", "top level must be an object")
    schema = data.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise BatchError("schema", f"unsupported schema {schema!r}; expected {SCHEMA!r}")
    tokens = _require(data, "tokens", "$")
    if not isinstance(tokens, list) or len(tokens) < 2 or not all(isinstance(t, str) for t in tokens):
        raise BatchError("tokens", "need a list of at least two token symbols")
    if len(set(tokens)) != len(tokens):
        raise BatchError("tokens", "duplicate symbol")
    symbols = {t: i for i, t in enumerate(tokens)}
    orders = tuple(_parse_order(e, symbols, f"orders[{k}]") for k, e in enumerate(data.get("orders", [])))
    pools = tuple(_parse_pool(e, symbols, f"pools[{k}]") for k, e in enumerate(data.get("pools", [])))
    warm = data.get("warm_start")
    if warm is not None:
        if not isinstance(warm, list) or len(warm) != len(tokens):
            raise BatchError("warm_start", f"expected {len(tokens)} prices")
        warm = tuple(_positive(v, f"warm_start[{k}]") for k, v in enumerate(warm))
    config = _parse_config(data.get("config", {}), symbols)
    if "hub_token" in config and not 0 <= config["hub_token"] < len(tokens):
        raise BatchError("config.hub_token", "out of range")
    return Batch(tuple(tokens), orders, pools, warm, config, digest)


def digest_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def parse_batch(path) -> Batch:
    """Read and validate a batch file; errors name the offending line or field."""
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise BatchError("$", f"not UTF-8: {exc}") from None
    except json.JSONDecodeError as exc:
        raise BatchError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return parse_batch_dict(data, digest_bytes(raw))
