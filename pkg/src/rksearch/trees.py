"""Rooted trees and their combinatorial invariants.

A rooted tree is stored in canonical form: the tuple of its legs (the subtrees
hanging off the root), sorted by a total order on canonical keys. Two
``RootedTree`` values compare equal exactly when the trees are isomorphic.
"""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction
from functools import lru_cache

MAX_ORDER = 16


class RootedTree:
    """Isomorphism class of a rooted tree, written ``[t1, t2, ...]``."""

    __slots__ = ("children", "order", "height", "key", "_hash")

    def __init__(self, children=()):
        children = tuple(sorted(children, key=_sort_key))
        self.children = children
        self.order = 1 + sum(c.order for c in children)
        self.height = 1 + max(c.height for c in children) if children else 0
        self.key = (self.order, tuple(c.key for c in children))
        self._hash = hash(self.key)

    def __eq__(self, other):
        if not isinstance(other, RootedTree):
            return NotImplemented
        return self.key == other.key

    def __lt__(self, other):
        return self.key < other.key

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"RootedTree({self})"

    def __str__(self):
        if not self.children:
            return "[]"
        return "[" + ",".join(str(c) for c in self.children) + "]"

    @classmethod
    def parse(cls, text: str) -> "RootedTree":
        """Parse bracket notation: ``[]`` is a single vertex, ``[[],[]]`` a cherry."""
        text = text.replace(" ", "")
        tree, pos = _parse_at(text, 0)
        if pos != len(text):
            raise ValueError(f"trailing characters at position {pos} in {text!r}")
        return tree

    def legs(self) -> Counter:
        return Counter(self.children)

    def level_sequence(self) -> list[int]:
        """Depths of the vertices in preorder; the root has depth 0."""
        out = [0]
        for c in self.children:
            out.extend(d + 1 for d in c.level_sequence())
        return out

    def parent_array(self) -> list[int]:
        """Parent index of each vertex in preorder, ``-1`` for the root."""
        parents = [-1]

        def walk(tree, me):
            for c in tree.children:
                idx = len(parents)
                parents.append(me)
                walk(c, idx)

        walk(self, 0)
        return parents


def _sort_key(tree: RootedTree):
    return tree.key


def _parse_at(text, pos):
    if pos >= len(text) or text[pos] != "[":
        raise ValueError(f"expected '[' at position {pos} in {text!r}")
    pos += 1
    children = []
    while pos < len(text) and text[pos] != "]":
        child, pos = _parse_at(text, pos)
        children.append(child)
        if pos < len(text) and text[pos] == ",":
            pos += 1
    if pos >= len(text):
        raise ValueError(f"unbalanced brackets in {text!r}")
    return RootedTree(children), pos + 1


LEAF = RootedTree()


def bracket(*legs: RootedTree) -> RootedTree:
    """Join ``legs`` under a new root."""
    return RootedTree(legs)


def path(n: int) -> RootedTree:
    """Path on ``n`` vertices rooted at an endpoint."""
    tree = LEAF
    for _ in range(n - 1):
        tree = bracket(tree)
    return tree


def bushy(n: int) -> RootedTree:
    """Root with ``n - 1`` leaves attached."""
    return RootedTree([LEAF] * (n - 1))


@lru_cache(maxsize=None)
def _trees_of_order(n: int) -> tuple[RootedTree, ...]:
    if n == 1:
        return (LEAF,)
    # Legs are multisets of smaller trees with total order n - 1. Walking the
    # pool in ascending key order and never stepping back yields each multiset once.
    pool = [t for k in range(1, n) for t in _trees_of_order(k)]
    found = []

    def extend(legs, remaining, start):
        if remaining == 0:
            found.append(RootedTree(legs))
            return
        for i in range(start, len(pool)):
            t = pool[i]
            if t.order > remaining:
                break
            legs.append(t)
            extend(legs, remaining - t.order, i)
            legs.pop()

    extend([], n - 1, 0)
    return tuple(sorted(found))


def enumerate_trees(max_order: int) -> list[list[RootedTree]]:
    """All rooted trees of order ``1..max_order``, grouped by order.

    Groups are in canonical key order, so the output is deterministic.
    """
    if not isinstance(max_order, int) or not 1 <= max_order <= MAX_ORDER:
        raise ValueError(f"max_order must be an integer in [1, {MAX_ORDER}], got {max_order!r}")
    return [list(_trees_of_order(n)) for n in range(1, max_order + 1)]


@lru_cache(maxsize=None)
def symmetry(tree: RootedTree) -> int:
    """Order of the automorphism group: product of ``k! * sigma(leg)**k`` over distinct legs."""
    out = 1
    for leg, k in tree.legs().items():
        out *= math.factorial(k) * symmetry(leg) ** k
    return out


@lru_cache(maxsize=None)
def density(tree: RootedTree) -> int:
    """Tree factorial: the product over vertices of the order of the subtree rooted there."""
    out = tree.order
    for c in tree.children:
        out *= density(c)
    return out


def alpha(tree: RootedTree) -> int:
    """Number of inequivalent rooted labelings, ``|t|! / (t! * sigma(t))``."""
    num = math.factorial(tree.order)
    den = density(tree) * symmetry(tree)
    q, r = divmod(num, den)
    if r:
        raise ArithmeticError(f"alpha({tree}) is not integral: {num}/{den}")
    return q


def rhs(tree: RootedTree) -> Fraction:
    """Right-hand side ``1/t!`` of the order condition for ``tree``."""
    return Fraction(1, density(tree))


def tree_counts(max_order: int) -> list[int]:
    return [len(g) for g in enumerate_trees(max_order)]
