"""Leaf-length erasure, hereditary reduction, erased profiles, covering numbers.

Erasure keeps exactly the points that have a descendant at distance at
least ``h``.  It is computed from a single bottom-up pass over the raw
genealogical tree: for every vertex ``v`` with stem ``s_v`` let

    m_v = s_v + reach(v),      reach(v) = max over children c of m_c,

with ``reach(leaf) = 0``.  A point at offset ``o`` on the edge of ``v``
survives iff ``m_v - o >= h``, so the kept portion of each edge is the
initial segment ``[0, min(s_v, m_v - h)]`` and the cut point is computed
in closed form, with no tolerance.

Because the cut arithmetic only ever forms ``m - h`` with ``m`` a nested
sum of stems, trees whose stems live on a dyadic grid (the simulators
quantize lifetimes for exactly this reason) are erased *exactly*: repeated
erasure composes bit-for-bit, which the growth-process coupling relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import count
from typing import Callable, Optional

from .trees import (
    POINT,
    EdgeTree,
    _postorder,
    left_profile,
    right_profile,
    total_height,
)

__all__ = [
    "leaf_erase",
    "erased_profile",
    "erased_profile_right",
    "HereditaryPredicate",
    "HeightAtLeast",
    "TotalLengthAtLeast",
    "LeafCountAtLeast",
    "ComposedPredicate",
    "RegularizedPredicate",
    "UserPredicate",
    "reduce_tree",
    "regularize",
    "compose",
    "predicate_from_spec",
    "check_predicate",
    "PredicateError",
    "covering_number",
    "covering_number_brute",
    "covering_grid",
]


# ---------------------------------------------------------------------------
# leaf-length erasure


def _reach_values(t: EdgeTree) -> dict[int, float]:
    """m_v = stem(v) + max over children of m_c, per vertex id."""
    m: dict[int, float] = {}
    for node in _postorder(t):
        reach = 0.0
        for c in node.children:
            mc = m[id(c)]
            if mc > reach:
                reach = mc
        m[id(node)] = node.stem + reach
    return m


def leaf_erase(h: float, t: EdgeTree) -> EdgeTree:
    """The ``h``-leaf-length erased tree: keep points with a descendant >= h away."""
    if h < 0.0:
        raise ValueError("erasure depth must be nonnegative")
    if h == 0.0:
        return t
    m = _reach_values(t)
    if m[id(t)] < h:
        return POINT
    rebuilt: dict[int, EdgeTree] = {}
    for node in _postorder(t):
        mv = m[id(node)]
        if mv < h:
            continue  # dropped entirely (parent decides via m)
        reach = mv - node.stem
        if reach >= h:
            kept = tuple(rebuilt[id(c)] for c in node.children if id(c) in rebuilt)
            rebuilt[id(node)] = node if kept == node.children else EdgeTree(node.stem, kept)
        else:
            # clip: only the initial segment of this edge survives; a clip
            # to zero length adds no point beyond the parent vertex
            cut = mv - h
            if cut > 0.0 or node is t:
                rebuilt[id(node)] = EdgeTree(cut)
    # zero-length clipped children were skipped above
    out = rebuilt.get(id(t))
    return POINT if out is None else out


def erased_profile(h: float, a: float, t: EdgeTree) -> int:
    """Number of points at height ``a`` of the ``h``-erased tree (left-continuous)."""
    if h <= 0.0:
        raise ValueError("erasure depth must be positive")
    return left_profile(a, leaf_erase(h, t))


def erased_profile_right(h: float, a: float, t: EdgeTree) -> int:
    """Right-continuous variant: the right profile of the erased tree."""
    if h <= 0.0:
        raise ValueError("erasure depth must be positive")
    return right_profile(a, leaf_erase(h, t))


# ---------------------------------------------------------------------------
# hereditary predicates


class PredicateError(ValueError):
    """An edge-cut solver disagreed with its vertex test."""


class HereditaryPredicate:
    """A hereditary property of trees, with a computable edge-cut solver.

    ``holds`` tests membership; heredity means that whenever a subtree
    above some point has the property, the whole tree does.  Consequently
    the held points along any edge form an initial segment, whose supremum
    ``edge_cut`` must return.  Built-ins supply closed-form cuts; the
    generic solver bisects ``holds`` along the edge and is only valid for
    predicates that are monotone along edges (all hereditary ones are).
    """

    monotone = True
    name = "hereditary"

    def holds(self, t: EdgeTree) -> bool:
        raise NotImplementedError

    def edge_cut(self, above_at: Callable[[float], EdgeTree], length: float) -> Optional[float]:
        """sup{o in [0, length]: holds(subtree above offset o)} or None."""
        if not self.holds(above_at(0.0)):
            return None
        if self.holds(above_at(length)):
            return length
        lo, hi = 0.0, length
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.holds(above_at(mid)):
                lo = mid
            else:
                hi = mid
        return lo

    def reduce(self, t: EdgeTree) -> EdgeTree:
        return _reduce_generic(self, t)

    def to_spec(self) -> dict:
        raise NotImplementedError


def _reduce_generic(pred: HereditaryPredicate, t: EdgeTree) -> EdgeTree:
    def reduce_node(node: EdgeTree) -> Optional[EdgeTree]:
        above_at = lambda o: EdgeTree(node.stem - o, node.children)  # noqa: E731
        cut = pred.edge_cut(above_at, node.stem)
        if cut is None:
            return None
        if cut < node.stem:
            return EdgeTree(cut)
        kept = []
        for c in node.children:
            rc = reduce_node(c)
            if rc is not None and not (rc.stem == 0.0 and not rc.children):
                kept.append(rc)
        return EdgeTree(node.stem, tuple(kept))

    out = reduce_node(t)
    return POINT if out is None else out


def reduce_tree(pred: HereditaryPredicate, t: EdgeTree) -> EdgeTree:
    """The reduced tree: closure of the root and the points where ``pred`` holds."""
    return pred.reduce(t)


@dataclass(frozen=True)
class HeightAtLeast(HereditaryPredicate):
    """Trees of total height >= h.  Reduction is exactly leaf-length erasure."""

    h: float
    name = "height_at_least"

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError("height threshold must be positive")

    def holds(self, t: EdgeTree) -> bool:
        return total_height(t) >= self.h

    def edge_cut(self, above_at, length):
        g = total_height(above_at(0.0))
        if g < self.h:
            return None
        return min(length, g - self.h)

    def reduce(self, t: EdgeTree) -> EdgeTree:
        return leaf_erase(self.h, t)

    def to_spec(self) -> dict:
        return {"kind": "height_at_least", "h": self.h}


def _total_length(t: EdgeTree) -> float:
    return sum(node.stem for node in _postorder(t))


@dataclass(frozen=True)
class TotalLengthAtLeast(HereditaryPredicate):
    """Trees whose total edge length is >= L."""

    L: float
    name = "total_length_at_least"

    def __post_init__(self):
        if self.L <= 0.0:
            raise ValueError("length threshold must be positive")

    def holds(self, t: EdgeTree) -> bool:
        return _total_length(t) >= self.L

    def edge_cut(self, above_at, length):
        total = _total_length(above_at(0.0))
        if total < self.L:
            return None
        return min(length, total - self.L)

    def reduce(self, t: EdgeTree) -> EdgeTree:
        lengths: dict[int, float] = {}
        for node in _postorder(t):
            lengths[id(node)] = node.stem + sum(lengths[id(c)] for c in node.children)

        def build(node: EdgeTree) -> Optional[EdgeTree]:
            total = lengths[id(node)]
            if total < self.L:
                return None
            cut = total - self.L
            if cut < node.stem:
                return EdgeTree(cut)
            kept = []
            for c in node.children:
                rc = build(c)
                if rc is not None and not rc.is_point:
                    kept.append(rc)
            return EdgeTree(node.stem, tuple(kept))

        out = build(t)
        return POINT if out is None else out

    def to_spec(self) -> dict:
        return {"kind": "total_length_at_least", "L": self.L}


def _leaf_count(t: EdgeTree) -> int:
    n = 0
    for node in _postorder(t):
        if not node.children:
            n += 1
    return n


@dataclass(frozen=True)
class LeafCountAtLeast(HereditaryPredicate):
    """Trees with at least n leaves (a point tree has none: the root is not a leaf)."""

    n: int
    name = "leaf_count_at_least"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("leaf count threshold must be >= 1")

    def holds(self, t: EdgeTree) -> bool:
        if t.is_point:
            return False
        return _leaf_count(t) >= self.n

    def edge_cut(self, above_at, length):
        base = above_at(0.0)
        if base.is_point or _leaf_count(base) < self.n:
            return None
        # the count is constant along the open edge; above the top vertex it
        # is the count of the grafted children, which equals the same value
        # unless the edge is terminal
        return length

    def reduce(self, t: EdgeTree) -> EdgeTree:
        counts: dict[int, int] = {}
        for node in _postorder(t):
            counts[id(node)] = (
                1 if not node.children else sum(counts[id(c)] for c in node.children)
            )

        def build(node: EdgeTree, is_root: bool) -> Optional[EdgeTree]:
            if counts[id(node)] < self.n or (node.is_point and is_root):
                return None
            kept = []
            for c in node.children:
                rc = build(c, False)
                if rc is not None and not rc.is_point:
                    kept.append(rc)
            return EdgeTree(node.stem, tuple(kept))

        out = build(t, True)
        return POINT if out is None else out

    def to_spec(self) -> dict:
        return {"kind": "leaf_count_at_least", "n": self.n}


@dataclass(frozen=True)
class ComposedPredicate(HereditaryPredicate):
    """outer o inner: holds(t) iff the inner-reduced tree satisfies outer."""

    outer: HereditaryPredicate
    inner: HereditaryPredicate
    name = "compose"

    def holds(self, t: EdgeTree) -> bool:
        return self.outer.holds(self.inner.reduce(t))

    def reduce(self, t: EdgeTree) -> EdgeTree:
        return self.outer.reduce(self.inner.reduce(t))

    def to_spec(self) -> dict:
        return {"kind": "compose", "outer": self.outer.to_spec(), "inner": self.inner.to_spec()}


@dataclass(frozen=True)
class RegularizedPredicate(HereditaryPredicate):
    """The regular version: holds iff the base-reduced tree is not a point.

    Reduces identically to the base predicate.
    """

    base: HereditaryPredicate
    name = "regularized"

    def holds(self, t: EdgeTree) -> bool:
        return not self.base.reduce(t).is_point

    def reduce(self, t: EdgeTree) -> EdgeTree:
        return self.base.reduce(t)

    def edge_cut(self, above_at, length):
        return self.base.edge_cut(above_at, length)

    def to_spec(self) -> dict:
        return {"kind": "regularize", "base": self.base.to_spec()}


@dataclass(frozen=True)
class UserPredicate(HereditaryPredicate):
    """Wraps a user vertex test (and optionally a cut solver).

    The caller declares monotonicity along edges; :func:`check_predicate`
    spot-checks the declaration.
    """

    holds_fn: Callable[[EdgeTree], bool]
    cut_fn: Optional[Callable[[Callable[[float], EdgeTree], float], Optional[float]]] = None
    label: str = "user"

    def holds(self, t: EdgeTree) -> bool:
        return bool(self.holds_fn(t))

    def edge_cut(self, above_at, length):
        if self.cut_fn is not None:
            return self.cut_fn(above_at, length)
        return super().edge_cut(above_at, length)

    def to_spec(self) -> dict:
        return {"kind": "user", "label": self.label}


def regularize(pred: HereditaryPredicate) -> HereditaryPredicate:
    return RegularizedPredicate(pred)


def compose(outer: HereditaryPredicate, inner: HereditaryPredicate) -> HereditaryPredicate:
    return ComposedPredicate(outer, inner)


def predicate_from_spec(spec: dict) -> HereditaryPredicate:
    kind = spec.get("kind")
    if kind == "height_at_least":
        return HeightAtLeast(float(spec["h"]))
    if kind == "total_length_at_least":
        return TotalLengthAtLeast(float(spec["L"]))
    if kind == "leaf_count_at_least":
        return LeafCountAtLeast(int(spec["n"]))
    if kind == "compose":
        return compose(predicate_from_spec(spec["outer"]), predicate_from_spec(spec["inner"]))
    if kind == "regularize":
        return regularize(predicate_from_spec(spec["base"]))
    raise ValueError(f"unknown predicate kind {kind!r}")


def check_predicate(pred: HereditaryPredicate, trees, samples: int = 5) -> None:
    """Spot-check that edge_cut agrees with holds along sampled edge offsets."""
    if pred.holds(POINT):
        raise PredicateError(f"{pred.name}: the point tree must not satisfy the property")
    for t in trees:
        stack = [t]
        while stack:
            node = stack.pop()
            stack.extend(node.children)
            if node.stem <= 0.0:
                continue
            above_at = lambda o: EdgeTree(node.stem - o, node.children)  # noqa: E731
            cut = pred.edge_cut(above_at, node.stem)
            for j in range(samples + 1):
                o = node.stem * j / samples
                held = pred.holds(above_at(o))
                if cut is None:
                    if held:
                        raise PredicateError(
                            f"{pred.name}: holds at offset {o} but edge_cut reported none"
                        )
                elif held and o > cut + 1e-9 * max(1.0, node.stem):
                    raise PredicateError(
                        f"{pred.name}: holds at offset {o} beyond reported cut {cut}"
                    )
                elif not held and o < cut - 1e-9 * max(1.0, node.stem):
                    raise PredicateError(
                        f"{pred.name}: fails at offset {o} below reported cut {cut}"
                    )


# ---------------------------------------------------------------------------
# covering numbers
#
# N(h, r): minimal number of OPEN radius-h balls, centers anywhere in the
# tree, covering the closed ball of radius r around the root.  For a compact
# demand set this equals the closed-ball covering number at radius h - delta
# for every sufficiently small delta > 0, so we run the closed-ball greedy in
# the ordered ring R[eps] of values x + k*eps with eps infinitesimal: the
# radius is h - eps and all comparisons are lexicographic, which evaluates
# every small-delta problem at once, exactly.
#
# The greedy repeatedly covers a deepest uncovered point p with a ball
# centred at the ancestor of p at distance exactly (h - eps).  Optimality is
# the standard exchange argument: if some optimal cover uses a centre c with
# d(c, p) <= rho, replacing c by that ancestor q loses nothing, because any
# still-uncovered x (necessarily with height(x) <= height(p)) satisfies
# d(x, q) <= rho whenever d(x, c) <= rho: writing m for the meet of x and p,
# either q sits above m and d(x,q) = d(x,p) - rho <= rho (since
# d(x,p) <= d(x,c) + d(c,p) <= 2 rho), or q sits below m and
# d(x,q) = height(x) - height(q) <= height(p) - height(q) = rho.


class _Eps(tuple):
    """x + k*eps, compared lexicographically; arithmetic is componentwise."""

    __slots__ = ()

    def __new__(cls, x: float, k: int = 0):
        return tuple.__new__(cls, (float(x), int(k)))

    @property
    def x(self) -> float:
        return self[0]

    @property
    def k(self) -> int:
        return self[1]

    def __add__(self, other):
        return _Eps(self[0] + other[0], self[1] + other[1])

    def __sub__(self, other):
        return _Eps(self[0] - other[0], self[1] - other[1])

    def __neg__(self):
        return _Eps(-self[0], -self[1])


def _tree_paths(t: EdgeTree) -> list[tuple[tuple[int, ...], float, float]]:
    """(path, birth, death) for every vertex, in DFS order."""
    out = []
    stack: list[tuple[EdgeTree, tuple[int, ...], float]] = [(t, (), 0.0)]
    while stack:
        node, path, birth = stack.pop()
        death = birth + node.stem
        out.append((path, birth, death))
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((node.children[i], path + (i,), death))
    return out


def _meet_height(pa: tuple[int, ...], pb: tuple[int, ...], vertex_death: dict) -> float:
    """Height of the meet of two edges (as the common-prefix vertex), or +inf
    when one path is a prefix of the other (same root line)."""
    k = 0
    for x, y in zip(pa, pb):
        if x != y:
            break
        k += 1
    if k == len(pa) or k == len(pb):
        return math.inf  # same root line: meet is min of the two heights
    return vertex_death[pa[:k]]


def covering_number(h: float, r: float, t: EdgeTree) -> int:
    """Minimal number of open radius-``h`` balls covering the closed ``r``-ball."""
    if h <= 0.0 or r <= 0.0:
        raise ValueError("radii must be positive")
    edges = _tree_paths(t)
    vertex_death = {path: death for path, _, death in edges}
    rho = _Eps(h, -1)

    # demand intervals [lo, hi] (closed, in R[eps]) per edge, clipped to r
    demand: dict[tuple[int, ...], list[tuple[_Eps, _Eps]]] = {}
    for path, birth, death in edges:
        lo, hi = _Eps(birth), _Eps(min(death, r))
        if birth <= r and (hi > lo or path == ()):
            demand[path] = [(lo, hi)]
    if not demand:
        demand[()] = [(_Eps(0.0), _Eps(0.0))]

    n_balls = 0
    for _ in count():
        deepest: Optional[tuple[tuple[int, ...], _Eps]] = None
        for path, ivals in demand.items():
            for lo, hi in ivals:
                if deepest is None or hi > deepest[1]:
                    deepest = (path, hi)
        if deepest is None:
            break
        p_path, p_h = deepest
        n_balls += 1
        # centre: ancestor of p at distance rho (clamped at the root)
        c_h = p_h - rho
        if c_h < _Eps(0.0):
            c_h = _Eps(0.0)
        c_path = p_path
        while c_path and not (_Eps(vertex_death[c_path[:-1]]) <= c_h):
            c_path = c_path[:-1]
        # subtract the closed rho-ball around the centre from every interval
        for path in list(demand):
            ivals = demand[path]
            m = _meet_height(path, c_path, vertex_death)
            if math.isinf(m):
                # same root line: covered z satisfies |z - c_h| <= rho
                cov_lo, cov_hi = c_h - rho, c_h + rho
            else:
                # z >= m on this edge: (z - m) + (c_h - m) <= rho
                me = _Eps(m)
                cov_lo, cov_hi = _Eps(-math.inf), me + rho - (c_h - me)
            new: list[tuple[_Eps, _Eps]] = []
            for lo, hi in ivals:
                if cov_hi < lo or cov_lo > hi:
                    new.append((lo, hi))
                    continue
                if cov_lo > lo:
                    # left remnant [lo, cov_lo - eps]
                    left_hi = cov_lo - _Eps(0.0, 1)
                    if left_hi >= lo:
                        new.append((lo, left_hi))
                if cov_hi < hi:
                    right_lo = cov_hi + _Eps(0.0, 1)
                    if right_lo <= hi:
                        new.append((right_lo, hi))
            if new:
                demand[path] = new
            else:
                del demand[path]
    return n_balls


def covering_grid(h: float, r: float) -> list[float]:
    """Level grid a(0) < g/2, spacing in [g, 3g/2) with g = h/3, used by the
    covering upper bound in terms of erased profiles."""
    g = h / 3.0
    out = []
    a = 0.25 * g
    while a <= r:
        out.append(a)
        a += g
    return out


def covering_number_brute(h: float, r: float, t: EdgeTree, max_balls: int = 8) -> int:
    """Exhaustive covering oracle for tiny trees (<= 4 edges).

    Candidate centres are placed at all combinatorial breakpoints (vertex
    heights and points at distance j*(h - eps), |j| <= 3, from any special
    height, mapped to every edge).  A complete deepest-point branch search
    over those candidates yields the minimum; the greedy must match it.
    """
    edges = _tree_paths(t)
    if len(edges) > 5:
        raise ValueError("brute-force covering is gated to trees with <= 4 edges")
    vertex_death = {path: death for path, _, death in edges}
    rho = _Eps(h, -1)

    specials = sorted({0.0, r} | {d for _, _, d in edges} | {b for _, b, _ in edges})
    candidates: list[tuple[tuple[int, ...], _Eps]] = []
    seen = set()
    for path, birth, death in edges:
        offs: set[_Eps] = {_Eps(birth), _Eps(death)}
        for s in specials:
            for j in (-3, -2, -1, 0, 1, 2, 3):
                z = _Eps(s) + _Eps(j * h, -j)
                if _Eps(birth) <= z <= _Eps(death):
                    offs.add(z)
        for z in offs:
            key = (path, z)
            if key not in seen:
                seen.add(key)
                candidates.append((path, z))

    def initial_demand():
        demand = {}
        for path, birth, death in edges:
            lo, hi = _Eps(birth), _Eps(min(death, r))
            if birth <= r and (hi > lo or path == ()):
                demand[path] = [(lo, hi)]
        if not demand:
            demand[()] = [(_Eps(0.0), _Eps(0.0))]
        return demand

    def subtract(demand, c_path, c_h):
        out = {}
        for path, ivals in demand.items():
            m = _meet_height(path, c_path, vertex_death)
            if math.isinf(m):
                cov_lo, cov_hi = c_h - rho, c_h + rho
            else:
                me = _Eps(m)
                cov_lo, cov_hi = _Eps(-math.inf), me + rho - (c_h - me)
            new = []
            for lo, hi in ivals:
                if cov_hi < lo or cov_lo > hi:
                    new.append((lo, hi))
                    continue
                if cov_lo > lo:
                    left_hi = cov_lo - _Eps(0.0, 1)
                    if left_hi >= lo:
                        new.append((lo, left_hi))
                if cov_hi < hi:
                    right_lo = cov_hi + _Eps(0.0, 1)
                    if right_lo <= hi:
                        new.append((right_lo, hi))
            if new:
                out[path] = new
        return out

    def covers_point(c_path, c_h, p_path, p_h) -> bool:
        m = _meet_height(p_path, c_path, vertex_death)
        if math.isinf(m):
            d = p_h - c_h if p_h >= c_h else c_h - p_h
        else:
            me = _Eps(m)
            d = (p_h - me) + (c_h - me)
        return d <= rho

    best = [max_balls + 1]

    def search(demand, used):
        if not demand:
            best[0] = min(best[0], used)
            return
        if used + 1 >= best[0]:
            return
        # branch on a deepest uncovered point: any cover must cover it
        p_path, p_h = None, None
        for path, ivals in demand.items():
            for lo, hi in ivals:
                if p_h is None or hi > p_h:
                    p_path, p_h = path, hi
        for c_path, c_h in candidates:
            if covers_point(c_path, c_h, p_path, p_h):
                search(subtract(demand, c_path, c_h), used + 1)

    search(initial_demand(), 0)
    if best[0] > max_balls:
        raise ValueError("brute-force covering exceeded the ball budget")
    return best[0]
