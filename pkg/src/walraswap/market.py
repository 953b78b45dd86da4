"""Admissible supply functions and their algebra.

A supply function maps a strictly positive price vector ``p`` (length ``n``)
to the token amounts an agent supplies (positive) or demands (negative).
Every concrete kind also provides its value form ``psi_i(p) = p_i * phi_i(p)``
analytically, including on the boundary of the nonnegative orthant where
some prices are zero.

Evaluation is vectorised: ``p`` may have shape ``(n,)`` or ``(k, n)``.
Token indices are 0-based throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import qmc


class SupplyError(ValueError):
    """Malformed supply function or invalid algebra request."""


class DomainError(ValueError):
    """Price vector outside the domain of an operation."""


ABS_TOL = 1e-9
REL_TOL = 1e-9


def _as_prices(p, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (n,):
        raise DomainError(f"expected price vectors of length {n}, got shape {p.shape}")
    return p


class SupplyFunction:
    """Base class for admissible supply functions on ``n`` tokens.

    Subclasses implement ``_evaluate`` (interior prices) and ``_value_form``
    (nonnegative, nonzero prices) and set ``n``, ``upper_bounds``, ``support``.
    Instances are immutable and evaluation is pure.
    """

    n: int
    upper_bounds: np.ndarray
    support: frozenset

    def evaluate(self, p) -> np.ndarray:
        p = _as_prices(p, self.n)
        if not np.all(p > 0):
            raise DomainError("evaluate requires strictly positive prices")
        out = self._evaluate(p)
        if not np.all(np.isfinite(out)):
            raise SupplyError(f"{type(self).__name__} returned a non-finite amount")
        return out

    def value_form(self, p) -> np.ndarray:
        p = _as_prices(p, self.n)
        if p.ndim == 1:
            # single price: plain-float checks are much cheaper than numpy reductions
            lo, hi = min(p.tolist()), max(p.tolist())
            if not (lo >= 0 and hi > 0):
                raise DomainError("value form is defined on nonnegative, nonzero prices")
        elif np.any(p < 0) or np.any(~np.any(p > 0, axis=-1)):
            raise DomainError("value form is defined on nonnegative, nonzero prices")
        out = self._value_form(p)
        if not math.isfinite(float(out.sum())):  # any inf or nan poisons the sum
            raise SupplyError(f"{type(self).__name__} returned a non-finite value")
        return out

    def strict_tokens(self) -> frozenset:
        """Tokens ``i`` for which ``psi_i < 0`` is guaranteed on the open face
        ``{p_i = 0, p_j > 0 for j != i}`` by construction."""
        return frozenset()

    def _evaluate(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _value_form(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _accumulate(self, p: list, out: list) -> None:
        """Add the value form at a single price (plain floats) into ``out``."""
        for i, v in enumerate(self._value_form(np.asarray(p)).tolist()):
            out[i] += v

    def __add__(self, other: "SupplyFunction") -> "SupplyFunction":
        return supply_sum(self, other)

    def __call__(self, p) -> np.ndarray:
        return self.evaluate(p)


def evaluate(phi: SupplyFunction, p) -> np.ndarray:
    return phi.evaluate(p)


def value_form(phi: SupplyFunction, p) -> np.ndarray:
    return phi.value_form(p)


@dataclass(frozen=True, eq=False)
class ZeroSupply(SupplyFunction):
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise SupplyError("n must be positive")

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.zeros(self.n)

    @property
    def support(self) -> frozenset:
        return frozenset()

    def _evaluate(self, p):
        return np.zeros_like(p)

    def _value_form(self, p):
        return np.zeros_like(p)


class PairCurve:
    """Two-token curve ``g`` for the construction
    ``phi_1(p) = g(p1/p2)``, ``phi_2(p) = -(p1/p2) g(p1/p2)``.

    ``g`` maps ``[0, inf)`` to ``[0, inf)``, is continuous, bounded by
    ``g_sup`` and tends to ``g_inf`` at infinity.
    """

    g_inf: float
    g_sup: float

    def g(self, r) -> np.ndarray:
        raise NotImplementedError

    def rg(self, r) -> np.ndarray:
        """``r * g(r)``; overridden where a direct formula is better conditioned."""
        r = np.asarray(r, dtype=float)
        return r * self.g(r)

    def value_pair(self, p1: float, p2: float) -> float:
        """``p1 * g(p1/p2)`` at one nonnegative, nonzero price pair."""
        if p1 > 0 and p2 > 0:
            return p1 * float(self.g(p1 / p2))
        return p1 * self.g_inf if p1 > 0 else 0.0

    def value_batch(self, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`value_pair`."""
        interior = (p1 > 0) & (p2 > 0)
        r = np.divide(p1, p2, out=np.ones_like(p1), where=interior)
        psi1 = np.where(interior, p1 * self.g(r), 0.0)
        # p2 = 0: psi1 = p1 * lim_inf g ; p1 = 0: psi1 = p2 * lim_0 r g(r) = 0
        return np.where((p2 == 0) & (p1 > 0), p1 * self.g_inf, psi1)

    def __call__(self, r):
        return self.g(r)


@dataclass(frozen=True, eq=False)
class CurveSupply(SupplyFunction):
    """Two-token supply function built from a :class:`PairCurve`."""

    curve: PairCurve
    n: int = field(default=2, init=False)

    def __post_init__(self):
        c = self.curve
        if not np.isfinite(c.g_sup):
            raise SupplyError("curve must be bounded above")
        if not (np.isfinite(c.g_inf) and c.g_inf >= 0):
            raise SupplyError("curve limit at infinity must be finite and nonnegative")

    @property
    def upper_bounds(self) -> np.ndarray:
        # g >= 0 so the second coordinate -r g(r) never exceeds 0
        return np.array([self.curve.g_sup, 0.0])

    @property
    def support(self) -> frozenset:
        return frozenset((0, 1))

    def strict_tokens(self) -> frozenset:
        return frozenset((1,)) if self.curve.g_inf > 0 else frozenset()

    def _evaluate(self, p):
        r = p[..., 0] / p[..., 1]
        return np.stack([self.curve.g(r), -self.curve.rg(r)], axis=-1)

    def _value_form(self, p):
        if p.ndim == 1:
            v = self.curve.value_pair(float(p[0]), float(p[1]))
            return np.array([v, -v])
        psi1 = self.curve.value_batch(p[..., 0], p[..., 1])
        return np.stack([psi1, -psi1], axis=-1)

    def _accumulate(self, p, out):
        v = self.curve.value_pair(p[0], p[1])
        out[0] += v
        out[1] -= v


@dataclass(frozen=True, eq=False)
class FunctionSupply(SupplyFunction):
    """Supply function given by explicit callables.

    ``value_fn`` must be the continuous extension of ``p_i * phi_i`` to the
    boundary; without it only interior value-form evaluation is possible.
    """

    n: int
    fn: Callable[[np.ndarray], np.ndarray]
    upper_bounds: np.ndarray
    value_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    support: frozenset = None
    name: str = "function"

    def __post_init__(self):
        object.__setattr__(self, "upper_bounds", np.asarray(self.upper_bounds, dtype=float))
        if self.support is None:
            object.__setattr__(self, "support", frozenset(range(self.n)))

    def _evaluate(self, p):
        return np.asarray(self.fn(p), dtype=float)

    def _value_form(self, p):
        if self.value_fn is not None:
            return np.asarray(self.value_fn(p), dtype=float)
        if np.any(p == 0):
            raise DomainError(f"{self.name} has no boundary value form")
        return p * self._evaluate(p)


@dataclass(frozen=True, eq=False)
class SumSupply(SupplyFunction):
    parts: tuple

    def __post_init__(self):
        if not self.parts:
            raise SupplyError("sum of zero parts; use ZeroSupply")
        ns = {part.n for part in self.parts}
        if len(ns) != 1:
            raise SupplyError(f"mismatched token counts {sorted(ns)}")

    @property
    def n(self) -> int:
        return self.parts[0].n

    @property
    def upper_bounds(self) -> np.ndarray:
        return np.sum([part.upper_bounds for part in self.parts], axis=0)

    @property
    def support(self) -> frozenset:
        return frozenset().union(*(part.support for part in self.parts))

    def strict_tokens(self) -> frozenset:
        # one strict summand per token suffices (the others have psi_i <= 0)
        return frozenset().union(*(part.strict_tokens() for part in self.parts))

    def _evaluate(self, p):
        return sum(part._evaluate(p) for part in self.parts)

    def _value_form(self, p):
        if p.ndim == 1:
            out = [0.0] * p.shape[0]
            self._accumulate(p.tolist(), out)
            return np.array(out)
        return sum(part._value_form(p) for part in self.parts)

    def _accumulate(self, p, out):
        for part in self.parts:
            part._accumulate(p, out)


def supply_sum(*parts: SupplyFunction) -> SupplyFunction:
    """Pointwise sum of supply functions on the same token universe."""
    flat = []
    for part in parts:
        if isinstance(part, SumSupply):
            flat.extend(part.parts)
        elif not isinstance(part, ZeroSupply):
            flat.append(part)
    ns = {part.n for part in parts}
    if len(ns) > 1:
        raise SupplyError(f"mismatched token counts {sorted(ns)}")
    if not flat:
        return ZeroSupply(parts[0].n)
    if len(flat) == 1:
        return flat[0]
    return SumSupply(tuple(flat))


@dataclass(frozen=True, eq=False)
class ExtendedSupply(SupplyFunction):
    """Supply function on ``m`` tokens embedded into ``n`` tokens.

    Token ``j`` of ``inner`` becomes token ``sigma[j]``; all other
    coordinates are identically zero.
    """

    inner: SupplyFunction
    sigma: tuple
    n: int

    def __post_init__(self):
        sigma = tuple(int(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if len(sigma) != self.inner.n:
            raise SupplyError("sigma must have one entry per inner token")
        if len(set(sigma)) != len(sigma):
            raise SupplyError(f"sigma {sigma} is not injective")
        if any(s < 0 or s >= self.n for s in sigma):
            raise SupplyError(f"sigma {sigma} out of range for n={self.n}")

    @property
    def upper_bounds(self) -> np.ndarray:
        out = np.zeros(self.n)
        out[list(self.sigma)] = self.inner.upper_bounds
        return out

    @property
    def support(self) -> frozenset:
        return frozenset(self.sigma[j] for j in self.inner.support)

    def strict_tokens(self) -> frozenset:
        return frozenset(self.sigma[j] for j in self.inner.strict_tokens())

    def _evaluate(self, p):
        out = np.zeros_like(p)
        out[..., list(self.sigma)] = self.inner._evaluate(p[..., list(self.sigma)])
        return out

    def _value_form(self, p):
        if p.ndim == 1:
            out = [0.0] * p.shape[0]
            self._accumulate(p.tolist(), out)
            return np.array(out)
        sub = p[..., list(self.sigma)]
        out = np.zeros_like(p)
        live = np.any(sub > 0, axis=-1)
        if np.all(live):
            out[..., list(self.sigma)] = self.inner._value_form(sub)
        elif np.any(live):
            vals = np.zeros_like(sub)
            vals[live] = self.inner._value_form(sub[live])
            out[..., list(self.sigma)] = vals
        # rows with all embedded prices zero: psi is homogeneous of degree 1, limit 0
        return out

    def _accumulate(self, p, out):
        sigma = self.sigma
        if isinstance(self.inner, CurveSupply):
            a, b = sigma
            v = self.inner.curve.value_pair(p[a], p[b])
            out[a] += v
            out[b] -= v
            return
        sub = [p[s] for s in sigma]
        if not any(x > 0 for x in sub):
            return
        for s, v in zip(sigma, self.inner._value_form(np.asarray(sub)).tolist()):
            out[s] += v


def extend_support(phi: SupplyFunction, sigma: Sequence[int], n: int) -> SupplyFunction:
    """Embed ``phi`` (on ``len(sigma)`` tokens) into ``n`` tokens along ``sigma``."""
    if len(sigma) > n:
        raise SupplyError("cannot embed into fewer tokens")
    if tuple(sigma) == tuple(range(n)):
        return phi
    if isinstance(phi, ZeroSupply):
        return ZeroSupply(n)
    if isinstance(phi, ExtendedSupply):
        return ExtendedSupply(phi.inner, tuple(sigma[s] for s in phi.sigma), n)
    return ExtendedSupply(phi, tuple(sigma), n)


@dataclass(frozen=True, eq=False)
class RestrictedSupply(SupplyFunction):
    """Generic restriction of a supply function supported at ``index``.

    Off-support prices are filled with 1; the result does not depend on them.
    """

    inner: SupplyFunction
    index: tuple

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def upper_bounds(self) -> np.ndarray:
        return self.inner.upper_bounds[list(self.index)]

    @property
    def support(self) -> frozenset:
        pos = {t: j for j, t in enumerate(self.index)}
        return frozenset(pos[t] for t in self.inner.support if t in pos)

    def strict_tokens(self) -> frozenset:
        pos = {t: j for j, t in enumerate(self.index)}
        return frozenset(pos[t] for t in self.inner.strict_tokens() if t in pos)

    def _lift(self, p):
        full = np.ones(p.shape[:-1] + (self.inner.n,))
        full[..., list(self.index)] = p
        return full

    def _evaluate(self, p):
        return self.inner._evaluate(self._lift(p))[..., list(self.index)]

    def _value_form(self, p):
        return self.inner._value_form(self._lift(p))[..., list(self.index)]


def interior_samples(n: int, count: int, seed: int = 0, spread: float = 3.0) -> np.ndarray:
    """Deterministic interior price samples, log-uniform in ``[10^-spread, 10^spread]``."""
    halton = qmc.Halton(d=n, scramble=True, seed=seed)
    u = halton.random(count)
    return 10.0 ** (spread * (2.0 * u - 1.0))


def face_samples(n: int, token: int, count: int = 32, seed: int = 0) -> np.ndarray:
    """Points with ``p[token] = 0`` and the other coordinates from a Halton sequence."""
    p = np.empty((count, n))
    if n > 1:
        halton = qmc.Halton(d=n - 1, scramble=False)
        halton.fast_forward(1 + seed)
        u = halton.random(count)
        others = 0.05 + 0.95 * u
        p[:, [j for j in range(n) if j != token]] = others
    p[:, token] = 0.0
    return p


def _check_supported(phi: SupplyFunction, index: Sequence[int], samples: int = 64) -> None:
    off = [i for i in range(phi.n) if i not in set(index)]
    if not off:
        return
    p = interior_samples(phi.n, samples, seed=7)
    vals = phi.evaluate(p)
    scale = 1.0 + np.max(np.abs(vals), axis=-1)
    bad = np.abs(vals[:, off]) > ABS_TOL * scale[:, None]
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        raise SupplyError(
            f"not supported at {tuple(index)}: phi_{off[col]} = {vals[row, off[col]]:.3g} at p={p[row]}"
        )
    q = p.copy()
    q[:, off] *= 3.7
    moved = phi.evaluate(q)
    if np.any(np.abs(moved - vals) > REL_TOL * scale[:, None]):
        raise SupplyError(f"not supported at {tuple(index)}: depends on off-support prices")


def restrict_support(phi: SupplyFunction, index: Sequence[int]) -> SupplyFunction:
    """Restrict ``phi`` to the tokens ``index`` (in the given order)."""
    index = tuple(int(i) for i in index)
    if len(set(index)) != len(index):
        raise SupplyError("restriction index must not repeat tokens")
    if not phi.support <= set(index):
        extra = sorted(phi.support - set(index))
        raise SupplyError(f"supply is also supported at tokens {extra}")
    if index == tuple(range(phi.n)):
        return phi
    if isinstance(phi, ZeroSupply):
        return ZeroSupply(len(index))
    if isinstance(phi, ExtendedSupply):
        pos = {t: j for j, t in enumerate(index)}
        return ExtendedSupply(phi.inner, tuple(pos[s] for s in phi.sigma), len(index))
    if isinstance(phi, SumSupply) and all(part.support <= set(index) for part in phi.parts):
        return supply_sum(*(restrict_support(part, index) for part in phi.parts))
    _check_supported(phi, index)
    return RestrictedSupply(phi, index)


@dataclass
class Violation:
    check: str
    price: np.ndarray
    token: Optional[int]
    detail: str


@dataclass
class AdmissibilityReport:
    ok: bool
    checked: int
    violations: list

    @property
    def first_violation(self) -> Optional[Violation]:
        return self.violations[0] if self.violations else None


def check_admissibility(
    phi: SupplyFunction,
    sample_grid,
    abs_tol: float = ABS_TOL,
    rel_tol: float = REL_TOL,
    scales: Iterable[float] = (1e-6, 1e6),
) -> AdmissibilityReport:
    """Probe homogeneity, Walras's law, upper bounds and the boundary value form.

    Interior rows of ``sample_grid`` test the first three; rows with a zero
    coordinate test ``sum(psi) = 0``, ``psi_i <= 0`` where ``p_i = 0`` and
    continuity of ``psi`` from the interior.
    """
    grid = _as_prices(sample_grid, phi.n).reshape(-1, phi.n)
    interior = grid[np.all(grid > 0, axis=1)]
    boundary = grid[~np.all(grid > 0, axis=1)]
    violations: list[Violation] = []

    def flag(check, rows, mask, values, tokens=None, what=""):
        if np.any(mask):
            k = int(np.argwhere(mask)[0][0])
            tok = None if tokens is None else int(tokens[k])
            violations.append(Violation(check, rows[k], tok, f"{what}{values[k]:.3g}"))

    if len(interior):
        phis = phi.evaluate(interior)
        size = 1.0 + np.max(np.abs(phis), axis=1)
        for lam in scales:
            diff = np.max(np.abs(phi.evaluate(lam * interior) - phis), axis=1)
            flag("homogeneity", interior, diff > rel_tol * size, diff,
                 np.argmax(np.abs(phi.evaluate(lam * interior) - phis), axis=1),
                 f"scale {lam:g}: deviation ")
        terms = interior * phis
        walras = np.abs(terms.sum(axis=1))
        flag("walras", interior, walras > rel_tol * np.abs(terms).sum(axis=1) + abs_tol, walras,
             what="|p . phi| = ")
        excess = phis - phi.upper_bounds
        over = np.max(excess, axis=1)
        flag("upper_bound", interior, over > abs_tol * size, over, np.argmax(excess, axis=1),
             "excess over bound ")
        psi = phi.value_form(interior)
        mismatch = np.abs(psi - terms)
        flag("value_form", interior, np.max(mismatch, axis=1) > abs_tol * size * np.max(interior, axis=1),
             np.max(mismatch, axis=1), np.argmax(mismatch, axis=1), "psi vs p*phi ")

    if len(boundary):
        psi = phi.value_form(boundary)
        total = np.abs(psi.sum(axis=1))
        flag("walras_boundary", boundary, total > abs_tol, total, what="|sum psi| = ")
        pos = np.where(boundary == 0, psi, -np.inf)
        worst = np.max(pos, axis=1)
        flag("neg_psi", boundary, worst > 1e-12, worst, np.argmax(pos, axis=1), "psi_i at p_i = 0: ")
        # A jump keeps its size as the offset shrinks; square-root approach
        # (constant-product AMMs near a free in-token) decays and is fine.
        gaps = []
        for eps in (1e-6, 1e-12):
            inward = boundary + eps * np.where(boundary == 0, 1.0, 0.0) * np.max(boundary, axis=1, keepdims=True)
            gaps.append(np.abs(phi.value_form(inward) - psi))
        far, near = np.max(gaps[0], axis=1), np.max(gaps[1], axis=1)
        scale = 1e-6 * (1.0 + np.max(np.abs(psi), axis=1))
        flag("continuity", boundary, (near > scale) & (near > 0.5 * far), near,
             np.argmax(gaps[1], axis=1), "jump at offset 1e-12: ")

    return AdmissibilityReport(not violations, len(grid), violations)


def default_grid(n: int, count: int = 256, seed: int = 0) -> np.ndarray:
    """Interior samples plus 32 points on every face ``p_i = 0``."""
    faces = [face_samples(n, i, 32, seed) for i in range(n)]
    return np.vstack([interior_samples(n, count, seed)] + faces)


@dataclass
class StrictnessReport:
    strict_ok: bool
    witnesses: list  # (boundary price, token, psi value) for failing samples
    structural_tokens: frozenset = frozenset()
    n: int = 0

    @property
    def failing_faces(self) -> list:
        """Tokens ``i`` whose face ``p_i = 0`` produced a witness."""
        return sorted({tok for _, tok, _ in self.witnesses})

    @property
    def structural_ok(self) -> bool:
        return len(self.structural_tokens) == self.n

    def describe(self) -> str:
        if self.strict_ok:
            return "strict on all sampled faces"
        parts = []
        for tok in self.failing_faces:
            price, _, val = next(w for w in self.witnesses if w[1] == tok)
            parts.append(f"face p[{tok}]=0: psi={val:.3g} at {np.round(price, 6).tolist()}")
        return "; ".join(parts)


def check_strictness(
    phi: SupplyFunction,
    boundary_samples: Optional[Sequence[np.ndarray]] = None,
    tol: float = ABS_TOL,
    per_face: int = 32,
    seed: int = 0,
) -> StrictnessReport:
    """Sample every face ``p_i = 0`` and require ``psi_i < -tol`` there.

    ``boundary_samples[i]`` overrides the default Halton points for face ``i``.
    Witness prices are reported normalised to sum 1.
    """
    n = phi.n
    witnesses = []
    for i in range(n):
        pts = face_samples(n, i, per_face, seed) if boundary_samples is None else np.asarray(boundary_samples[i], float)
        if np.any(pts[:, i] != 0):
            raise DomainError(f"samples for face {i} must have p[{i}] = 0")
        psi_i = phi.value_form(pts)[:, i]
        for row in np.flatnonzero(psi_i >= -tol):
            witnesses.append((pts[row] / pts[row].sum(), i, float(psi_i[row])))
    return StrictnessReport(not witnesses, witnesses, phi.strict_tokens(), n)
