import math
from fractions import Fraction
import time

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from rksearch.trees import (LEAF, MAX_ORDER, RootedTree, alpha, bracket, bushy, density,
                            enumerate_trees, path, rhs, symmetry, tree_counts)

OTTER = [1, 1, 2, 4, 9, 20, 48, 115, 286, 719, 1842, 4766]


def test_counts_match_brute_force_growth():
    forest = oracles.grow_trees(10)
    assert tree_counts(10) == [len(forest[n]) for n in range(1, 11)]


def test_same_trees_as_brute_force():
    forest = oracles.grow_trees(8)
    for n, group in enumerate(enumerate_trees(8), start=1):
        ours = set(group)
        theirs = {RootedTree.parse(oracles.to_brackets(k)) for k in forest[n]}
        assert len(theirs) == len(forest[n])
        assert ours == theirs


def test_twelve_orders_quickly():
    t0 = time.perf_counter()
    counts = tree_counts(12)
    assert counts == OTTER
    assert sum(counts[:10]) == 1205 and sum(counts) == 7813
    assert time.perf_counter() - t0 < 5


def test_groups_are_canonically_ordered_and_distinct():
    for group in enumerate_trees(9):
        assert group == sorted(group)
        assert len(set(group)) == len(group)


def test_order_one():
    assert enumerate_trees(1) == [[LEAF]]


@pytest.mark.parametrize("bad", [0, MAX_ORDER + 1, 2.5, "3"])
def test_rejects_bad_order(bad):
    with pytest.raises(ValueError):
        enumerate_trees(bad)


def test_named_values():
    cherry = bushy(3)
    assert symmetry(LEAF) == 1 and symmetry(cherry) == 2
    assert symmetry(RootedTree([bracket(LEAF)] * 4)) == 24
    assert density(LEAF) == 1 and density(path(4)) == 24
    broom = bracket(bracket(LEAF, LEAF, LEAF), bracket(LEAF, LEAF, LEAF))
    # two identical brooms under a root, 9 vertices; 9 * 4 * 4
    assert broom.order == 9 and density(broom) == 144
    assert alpha(path(3)) == 1
    assert alpha(RootedTree([bracket(LEAF), LEAF])) == 3
    assert alpha(RootedTree([bracket(LEAF), LEAF, LEAF])) == 6


def test_against_brute_force_invariants():
    forest = oracles.grow_trees(7)
    for n in range(1, 8):
        for key, parent in forest[n].items():
            t = RootedTree.parse(oracles.to_brackets(key))
            assert t.order == n
            assert symmetry(t) == oracles.automorphisms(parent)
            assert density(t) == oracles.density(parent)
            assert alpha(t) == oracles.labeling_classes(parent)
            assert rhs(t) == Fraction(1, oracles.density(parent))


def test_alpha_sums_to_factorial_partition():
    # sum over trees of order n of alpha = (n-1)! (number of recursive trees)
    for n, group in enumerate(enumerate_trees(10), start=1):
        assert sum(alpha(t) for t in group) == math.factorial(n - 1)


def test_parse_and_print_round_trip():
    for group in enumerate_trees(7):
        for t in group:
            assert RootedTree.parse(str(t)) == t
            assert len(t.parent_array()) == t.order == len(t.level_sequence())


@pytest.mark.parametrize("text", ["", "[", "[]]", "[[]", "x", "[],[]"])
def test_parse_rejects_malformed(text):
    with pytest.raises(ValueError):
        RootedTree.parse(text)


@st.composite
def trees(draw, max_order=8):
    n = draw(st.integers(1, max_order))
    parent = [-1] + [draw(st.integers(0, v - 1)) for v in range(1, n)]
    return parent


@settings(max_examples=200, deadline=None)
@given(trees())
def test_child_order_does_not_matter(parent):
    ch = oracles.children_of(parent)

    def build(v, rev):
        kids = [build(c, rev) for c in ch[v]]
        return RootedTree(kids[::-1] if rev else kids)

    a, b = build(0, False), build(0, True)
    assert a == b and hash(a) == hash(b)
    assert a == RootedTree.parse(oracles.to_brackets(oracles.canonical(parent)))
    assert RootedTree.parse(str(a)) == a
    assert density(a) == oracles.density(parent)
