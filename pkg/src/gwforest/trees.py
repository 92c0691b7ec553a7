"""Finite rooted real trees with edge lengths.

A tree is stored in genealogical form: every vertex carries the length of
the edge leading down to its parent (its ``stem``), and an ordered tuple of
children.  The root vertex's stem is the progenitor edge hanging below it,
so the metric root sits at the *bottom* of the root stem.  The induced
path-length metric makes the value a rooted real tree; a point tree is
``EdgeTree(0.0)``.

Two views of the same object coexist:

* the raw genealogical form, which keeps edges exactly as sampled (needed
  for branching statistics such as the first-branch decomposition), and
* the canonical metric form produced by :func:`canonicalize`, on which
  root-preserving isometry is plain equality.

All values are immutable and all operations are pure, so trees can be
shared freely between workers.

Heights and stems are IEEE doubles.  Equality in :func:`iso_equal` is exact
bit equality by default (an optional tolerance is available for hand-typed
input); simulated trees are generated on a dyadic grid precisely so that
the erasure and grafting identities hold without rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

__all__ = [
    "EdgeTree",
    "TreePoint",
    "POINT",
    "total_height",
    "point_height",
    "point_distance",
    "graft",
    "split_measure",
    "right_profile",
    "left_profile",
    "above",
    "below",
    "first_branch",
    "scale",
    "canonicalize",
    "iso_equal",
    "multiset_iso_equal",
    "edge_count",
    "vertex_count",
    "iter_edges",
    "breakpoints",
    "tree_to_json",
    "tree_from_json",
    "tree_to_newick",
    "tree_from_newick",
]


@dataclass(frozen=True)
class EdgeTree:
    """One vertex of a rooted real tree with edge lengths.

    ``stem`` is the length of the edge from the attachment point below this
    vertex up to the vertex itself; ``children`` hang at the vertex.  For
    the root node the stem is the progenitor lifetime, possibly zero.
    """

    stem: float
    children: tuple["EdgeTree", ...] = ()

    def __post_init__(self) -> None:
        if not (self.stem >= 0.0) or math.isinf(self.stem):
            raise ValueError(f"stem must be a finite nonnegative real, got {self.stem!r}")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def is_point(self) -> bool:
        return self.stem == 0.0 and not self.children

    def __repr__(self) -> str:  # compact, debugging only
        if not self.children:
            return f"EdgeTree({self.stem!r})"
        return f"EdgeTree({self.stem!r}, {list(self.children)!r})"


#: The point tree (just a root).
POINT = EdgeTree(0.0)


@dataclass(frozen=True)
class TreePoint:
    """A point of the metric tree: an edge address plus an offset.

    ``path`` is the sequence of child indices from the root vertex; the
    empty path addresses the root stem.  ``offset`` is the distance from
    the lower end of the addressed edge, in ``[0, stem]``.
    """

    path: tuple[int, ...]
    offset: float

    def __post_init__(self) -> None:
        if not isinstance(self.path, tuple):
            object.__setattr__(self, "path", tuple(self.path))


def _resolve(t: EdgeTree, path: Sequence[int]) -> EdgeTree:
    node = t
    for i in path:
        if not 0 <= i < len(node.children):
            raise IndexError(f"invalid tree address {tuple(path)!r}")
        node = node.children[i]
    return node


def validate_point(t: EdgeTree, p: TreePoint) -> None:
    node = _resolve(t, p.path)
    if not 0.0 <= p.offset <= node.stem:
        raise ValueError(f"offset {p.offset} outside [0, {node.stem}]")


def point_height(t: EdgeTree, p: TreePoint) -> float:
    """Distance from the root to ``p``."""
    h = 0.0
    node = t
    for i in p.path:
        h += node.stem
        node = node.children[i]
    if not 0.0 <= p.offset <= node.stem:
        raise ValueError(f"offset {p.offset} outside [0, {node.stem}]")
    return h + p.offset


def point_distance(t: EdgeTree, p: TreePoint, q: TreePoint) -> float:
    """Path-length distance between two points of the tree.

    Uses the most-recent-common-ancestor identity: the meet of two points
    sits at the top of the longest common edge prefix, unless one point
    lies on the root path of the other.
    """
    hp = point_height(t, p)
    hq = point_height(t, q)
    a, b = p.path, q.path
    k = 0
    for x, y in zip(a, b):
        if x != y:
            break
        k += 1
    if k == len(a) == len(b):
        # same edge
        return abs(p.offset - q.offset)
    if k == len(a):
        # q lies strictly above p's edge: the root path of q runs through
        # all of p's edge, so the meet is p itself when p is below q's line.
        return hq - hp if hq >= hp else hp - hq
    if k == len(b):
        return hp - hq if hp >= hq else hq - hp
    # paths diverge after the common prefix: meet at the top of edge a[:k]
    hm = 0.0
    node = t
    for i in a[:k]:
        hm += node.stem
        node = node.children[i]
    hm += node.stem
    return (hp - hm) + (hq - hm)


# ---------------------------------------------------------------------------
# traversals (iterative: sampled trees can be deep)


def iter_edges(t: EdgeTree) -> Iterator[tuple[EdgeTree, float]]:
    """Yield ``(vertex, birth_height)`` for every vertex, root edge first."""
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        yield node, birth
        death = birth + node.stem
        for c in reversed(node.children):
            stack.append((c, death))


def _postorder(t: EdgeTree) -> list[EdgeTree]:
    """All vertices, children strictly before parents."""
    order: list[EdgeTree] = []
    stack = [t]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(node.children)
    order.reverse()
    return order


def total_height(t: EdgeTree) -> float:
    """Sup of root distances: the total height of the tree."""
    best = 0.0
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        death = birth + node.stem
        if death > best:
            best = death
        for c in node.children:
            stack.append((c, death))
    return best


def edge_count(t: EdgeTree) -> int:
    """Number of positive-length edges (a point tree has none)."""
    return sum(1 for node, _ in iter_edges(t) if node.stem > 0.0)


def vertex_count(t: EdgeTree) -> int:
    return sum(1 for _ in iter_edges(t))


def breakpoints(t: EdgeTree) -> list[float]:
    """Sorted distinct vertex death heights (the jump set of the profiles)."""
    return sorted({birth + node.stem for node, birth in iter_edges(t)})


# ---------------------------------------------------------------------------
# grafting and level decompositions


def graft(parts: Sequence[EdgeTree]) -> EdgeTree:
    """Paste trees at their roots; the empty collection gives the point tree."""
    return EdgeTree(0.0, tuple(parts))


def split_measure(a: float, t: EdgeTree) -> tuple[EdgeTree, ...]:
    """Connected components strictly above level ``a``, re-rooted at level ``a``.

    One part per edge whose span satisfies ``birth <= a < death``; the part
    keeps the remainder of the crossing edge and everything above it.
    """
    if a < 0.0:
        raise ValueError("level must be nonnegative")
    parts: list[EdgeTree] = []
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        death = birth + node.stem
        if death > a:
            # crossing edge: whole component above `a` comes with it
            rest = death - a
            parts.append(node if rest == node.stem else EdgeTree(rest, node.children))
        else:
            for c in node.children:
                stack.append((c, death))
    parts.reverse()
    return tuple(parts)


def right_profile(a: float, t: EdgeTree) -> int:
    """Number of subtrees strictly above level ``a`` (right-continuous)."""
    if a < 0.0:
        raise ValueError("level must be nonnegative")
    n = 0
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        death = birth + node.stem
        if death > a:
            n += 1
        else:
            for c in node.children:
                stack.append((c, death))
    return n


def left_profile(a: float, t: EdgeTree) -> int:
    """Number of points of the tree at height exactly ``a``.

    Left-continuous in ``a`` on ``(0, inf)``; at ``a == 0`` the convention
    is the right profile (edge count at the root), so a point tree gives 0.
    """
    if a < 0.0:
        raise ValueError("level must be nonnegative")
    if a == 0.0:
        return right_profile(0.0, t)
    n = 0
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        death = birth + node.stem
        if birth < a <= death:
            n += 1
        if death < a:
            for c in node.children:
                stack.append((c, death))
    return n


def above(a: float, t: EdgeTree) -> EdgeTree:
    """The tree above level ``a``: components above ``a`` pasted at their roots."""
    return graft(split_measure(a, t))


def below(a: float, t: EdgeTree) -> EdgeTree:
    """The closed ball of radius ``a`` around the root, as a tree."""
    if a < 0.0:
        raise ValueError("level must be nonnegative")
    return _below_iter(t, a)


def _below_iter(t: EdgeTree, a: float) -> EdgeTree:
    # iterative post-order rebuild (keeps deep sampled trees safe)
    order = _postorder(t)
    births: dict[int, float] = {}
    stack = [(t, 0.0)]
    while stack:
        node, birth = stack.pop()
        births[id(node)] = birth
        death = birth + node.stem
        for c in node.children:
            stack.append((c, death))
    rebuilt: dict[int, EdgeTree] = {}
    for node in order:
        birth = births[id(node)]
        death = birth + node.stem
        if death > a:
            rebuilt[id(node)] = EdgeTree(a - birth)
        else:
            kept = tuple(rebuilt[id(c)] for c in node.children)
            rebuilt[id(node)] = node if kept == node.children else EdgeTree(node.stem, kept)
    return rebuilt[id(t)]


def scale(c: float, t: EdgeTree) -> EdgeTree:
    """Multiply every edge length by ``c > 0``."""
    if not c > 0.0:
        raise ValueError("scale factor must be positive")
    if c == 1.0:
        return t
    rebuilt: dict[int, EdgeTree] = {}
    for node in _postorder(t):
        rebuilt[id(node)] = EdgeTree(c * node.stem, tuple(rebuilt[id(ch)] for ch in node.children))
    return rebuilt[id(t)]


def first_branch(t: EdgeTree) -> tuple[float, int, EdgeTree]:
    """First-branch decomposition ``(D, k, theta)``.

    ``D`` is the height of the nearest leaf-or-branch point above the root
    (``inf`` for the point tree, whose root counts as neither), ``theta``
    the tree above that level and ``k`` its number of root subtrees.
    """
    c = canonicalize(t)
    if c.is_point:
        return math.inf, 0, POINT
    if c.stem > 0.0:
        d = c.stem
    else:
        # forest root: nearest node is the shallowest child top
        d = min(ch.stem for ch in c.children)
    theta = above(d, c)
    k = right_profile(0.0, theta)
    return d, k, theta


# ---------------------------------------------------------------------------
# canonical form and isometry comparison


def _canonical_key(t: EdgeTree) -> tuple:
    keys: dict[int, tuple] = {}
    for node in _postorder(t):
        keys[id(node)] = (node.stem, tuple(keys[id(c)] for c in node.children))
    return keys[id(t)]


def canonicalize(t: EdgeTree) -> EdgeTree:
    """Canonical representative of the root-preserving isometry class.

    Zero-length non-root edges are contracted (their children attach at the
    parent vertex, a childless one vanishes), chains through degree-two
    vertices are merged by summing stems, and siblings are sorted by a
    total order on serializations.  Two trees are root-isometric iff their
    canonical forms are equal.
    """
    rebuilt: dict[int, EdgeTree] = {}
    for node in _postorder(t):
        kids: list[EdgeTree] = []
        for c in node.children:
            cc = rebuilt[id(c)]
            if cc.stem == 0.0:
                kids.extend(cc.children)  # glue at this vertex
            else:
                kids.append(cc)
        if len(kids) == 1:
            only = kids[0]
            merged = EdgeTree(node.stem + only.stem, only.children)
        else:
            kids.sort(key=_canonical_key)
            merged = EdgeTree(node.stem, tuple(kids))
        rebuilt[id(node)] = merged
    out = rebuilt[id(t)]
    # a zero-stem root with a single child is the same metric tree
    while out.stem == 0.0 and len(out.children) == 1:
        out = out.children[0]
    return out


def _approx_equal(t1: EdgeTree, t2: EdgeTree, tol: float) -> bool:
    if abs(t1.stem - t2.stem) > tol or len(t1.children) != len(t2.children):
        return False
    return all(_approx_equal(a, b, tol) for a, b in zip(t1.children, t2.children))


def iso_equal(t1: EdgeTree, t2: EdgeTree, tol: float = 0.0) -> bool:
    """True iff the trees are root-preserving isometric.

    Exact bit comparison of canonical forms by default.  ``tol`` relaxes
    stem comparisons for hand-entered data; it is not a metric bound (sibling
    sorting may disagree for near-ties), so keep it well below edge scale.
    """
    c1, c2 = canonicalize(t1), canonicalize(t2)
    if tol == 0.0:
        return c1 == c2
    return _approx_equal(c1, c2, tol)


def multiset_iso_equal(
    parts1: Sequence[EdgeTree], parts2: Sequence[EdgeTree], tol: float = 0.0
) -> bool:
    """Order-free comparison of two finite tree multisets."""
    if len(parts1) != len(parts2):
        return False
    k1 = sorted(_canonical_key(canonicalize(p)) for p in parts1)
    k2 = sorted(_canonical_key(canonicalize(p)) for p in parts2)
    if tol == 0.0:
        return k1 == k2
    c1 = sorted((canonicalize(p) for p in parts1), key=_canonical_key)
    c2 = sorted((canonicalize(p) for p in parts2), key=_canonical_key)
    return all(_approx_equal(a, b, tol) for a, b in zip(c1, c2))


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> float:
    # round-trip safe: 17 significant digits always reproduce the double
    return float(format(x, ".17g"))


def tree_to_json(t: EdgeTree) -> str:
    d: dict = {"stem": _fmt(t.stem), "children": []}
    work = [(t, d)]
    while work:
        cur, slot = work.pop()
        for c in cur.children:
            cd = {"stem": _fmt(c.stem), "children": []}
            slot["children"].append(cd)
            work.append((c, cd))
    return json.dumps(d)


def tree_from_json(text: str) -> EdgeTree:
    data = json.loads(text)

    def dec(d: dict) -> EdgeTree:
        # iterative decoder, children rebuilt bottom-up
        order: list[dict] = []
        stack = [d]
        while stack:
            cur = stack.pop()
            order.append(cur)
            stack.extend(cur.get("children", ()))
        built: dict[int, EdgeTree] = {}
        for cur in reversed(order):
            kids = tuple(built[id(c)] for c in cur.get("children", ()))
            built[id(cur)] = EdgeTree(float(cur["stem"]), kids)
        return built[id(d)]

    return dec(data)


def tree_to_newick(t: EdgeTree) -> str:
    """Newick with branch lengths and anonymous taxa, e.g. ``(:2,:0.5):1;``."""
    done: dict[int, str] = {}
    for node in _postorder(t):
        parts = [done[id(c)] for c in node.children]
        inner = "(" + ",".join(parts) + ")" if parts else ""
        done[id(node)] = f"{inner}:{_fmt(node.stem)}"
    return done[id(t)] + ";"


def tree_from_newick(text: str) -> EdgeTree:
    s = text.strip()
    if not s.endswith(";"):
        raise ValueError("newick string must end with ';'")
    s = s[:-1]
    pos = 0

    def parse() -> EdgeTree:
        nonlocal pos
        children: tuple[EdgeTree, ...] = ()
        if pos < len(s) and s[pos] == "(":
            pos += 1
            kids = []
            while True:
                kids.append(parse())
                if pos >= len(s):
                    raise ValueError("unbalanced parentheses in newick string")
                if s[pos] == ",":
                    pos += 1
                    continue
                if s[pos] == ")":
                    pos += 1
                    break
            children = tuple(kids)
        # optional label (ignored), then :length
        while pos < len(s) and s[pos] not in ":,()":
            pos += 1
        if pos >= len(s) or s[pos] != ":":
            raise ValueError("every newick node needs an edge length")
        pos += 1
        start = pos
        while pos < len(s) and s[pos] not in ",()":
            pos += 1
        stem = float(s[start:pos])
        return EdgeTree(stem, children)

    out = parse()
    if pos != len(s):
        raise ValueError(f"trailing characters in newick string at {pos}")
    return out
