"""Completely labelled cells of a Freudenthal subdivision of the simplex.

Grid points are integer vectors ``a >= 0`` with ``sum(a) = D``. Internally a
point is stored through its partial sums ``x_k = a_{k+1} + ... + a_{n-1}``
(``k = 0..n-2``), so the simplex becomes the staircase region
``D >= x_0 >= x_1 >= ... >= x_{n-2} >= 0`` on which the standard
Freudenthal (Kuhn) triangulation restricts cleanly.

The walk follows the classical variable-dimension path: start at the vertex
``e_0``, and in face ``F_k = conv(e_0..e_{k-1})`` pivot door to door
(doors carry labels ``0..k-2``) until a cell with labels ``0..k-1`` appears,
then lift it into ``F_{k+1}``. Leaving ``F_k`` through its bottom face drops
back into ``F_{k-1}``. For a proper labelling (``label(a)`` always in the
support of ``a``) the path ends at a completely labelled top cell.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class LabelingError(RuntimeError):
    pass


def to_barycentric(x: np.ndarray, D: int) -> np.ndarray:
    """Partial-sum coordinates -> integer barycentric vector ``a``."""
    n = len(x) + 1
    a = np.empty(n, dtype=np.int64)
    if n == 1:
        a[0] = D
        return a
    a[0] = D - x[0]
    a[1:-1] = x[:-1] - x[1:]
    a[-1] = x[-1]
    return a


def _in_region(x: np.ndarray, D: int) -> bool:
    if len(x) == 0:
        return True
    return x[0] <= D and x[-1] >= 0 and bool(np.all(x[:-1] >= x[1:]))


def _vertices(base: np.ndarray, perm: list) -> list:
    verts = [base.copy()]
    for d in perm:
        nxt = verts[-1].copy()
        nxt[d] += 1
        verts.append(nxt)
    return verts


def _pivot(base, perm, j):
    """Replace vertex ``j`` of the Freudenthal simplex ``(base, perm)``."""
    t = len(perm)
    base = base.copy()
    perm = list(perm)
    if j == 0:
        base[perm[0]] += 1
        perm = perm[1:] + perm[:1]
        entering = t
    elif j == t:
        base[perm[-1]] -= 1
        perm = perm[-1:] + perm[:-1]
        entering = 0
    else:
        perm[j - 1], perm[j] = perm[j], perm[j - 1]
        entering = j
    return base, perm, entering


def find_completely_labeled(label: Callable[[np.ndarray], int], n: int, D: int,
                            max_pivots: int = 2_000_000):
    """Return ``(vertices, labels, pivots)`` of a completely labelled cell.

    ``vertices`` is an ``(n, n)`` integer array of barycentric grid points
    (rows sum to ``D``); ``labels[i]`` is the label of row ``i`` and the
    labels are a permutation of ``range(n)``.
    """
    if n < 1 or D < 1:
        raise ValueError("need n >= 1 and D >= 1")
    cache: dict = {}

    def lab(x):
        key = x.tobytes()
        if key not in cache:
            a = to_barycentric(x, D)
            value = int(label(a))
            if not (0 <= value < n) or a[value] <= 0:
                raise LabelingError(f"label {value} not in the support of {a.tolist()}")
            cache[key] = value
        return cache[key]

    base = np.zeros(n - 1, dtype=np.int64)
    perm: list = []
    k = 1
    if lab(base) != 0:
        raise LabelingError("vertex e_0 must carry label 0")
    pivots = 0
    mode = "complete"  # complete | walk | leave
    entering = 0
    while True:
        verts = _vertices(base, perm)
        labels = [lab(v) for v in verts]
        if mode == "walk" and labels[entering] == k - 1:
            mode = "complete"
        if mode == "complete":
            if k == n:
                return np.array([to_barycentric(v, D) for v in verts]), labels, pivots
            perm = perm + [k - 1]
            k += 1
            entering = k - 1
            mode = "walk"
            continue
        if mode == "walk":
            drop = next(i for i, l in enumerate(labels) if l == labels[entering] and i != entering)
        else:
            if k == 1:
                raise LabelingError("walk returned to the start vertex")
            drop = labels.index(k - 1)
        pivots += 1
        if pivots > max_pivots:
            raise LabelingError("pivot limit exceeded")
        nb, nperm, ent = _pivot(base, perm, drop)
        if _in_region(_vertices(nb, nperm)[ent][: k - 1], D):
            base, perm, entering, mode = nb, nperm, ent, "walk"
            continue
        # only the bottom face x_{k-2} = 0 can hold a door for a proper labelling
        if drop != len(perm) or perm[-1] != k - 2 or base[k - 2] != 0:
            raise LabelingError("walk left the simplex through a side face; labelling is not proper")
        perm = perm[:-1]
        k -= 1
        mode = "leave"
