from fractions import Fraction

import numpy as np
import pytest

import oracles
from rksearch import objective as ob
from rksearch.program import ELEMWISE, MATVEC, ONE, build_program
from rksearch.trees import LEAF, path, tree_counts


def test_rk4_program_conditions():
    prog = build_program(4, 4)
    assert len(prog.conditions) == 8
    assert sorted(c.rhs for c in prog.conditions) == sorted(
        Fraction(1, d) for d in (1, 2, 3, 6, 4, 8, 12, 24))
    assert prog.param_count == 10 and not prog.includes_error_order


def test_sizes_at_scale():
    prog = build_program(10, 16)
    assert len(prog.conditions) == 1205 and prog.param_count == 136
    assert len(build_program(8, 11).conditions) == 200 and build_program(8, 11).param_count == 66


def test_trivial_program():
    prog = build_program(1, 1)
    (c,) = prog.conditions
    assert prog.registers[c.register].kind == ONE and c.rhs == 1


def test_error_order_conditions():
    prog = build_program(3, 4, include_error_order=True)
    assert len(prog.error_conditions) == tree_counts(4)[3]
    assert all(c.tree.order == 4 for c in prog.error_conditions)


@pytest.mark.parametrize("p,s", [(1, 0), (0, 3)])
def test_rejects_bad_sizes(p, s):
    with pytest.raises(ValueError):
        build_program(p, s)


@pytest.mark.parametrize("p,s", [(5, 3), (6, 7), (4, 2)])
def test_register_structure(p, s):
    prog = build_program(p, s, include_error_order=True)
    seen = set()
    offset = 0
    for k, r in enumerate(prog.registers):
        # every source is computed earlier, the suffix storage tiles the buffer
        assert all(src < k for src in r.src)
        assert r.leading_zeros == min(r.tree.height, s)
        assert r.stored == s - r.leading_zeros and r.offset == offset
        offset += r.stored
        if r.kind == ONE:
            assert r.tree == LEAF
        elif r.kind == MATVEC:
            assert len(r.tree.children) == 1 and prog.registers[r.src[0]].tree == r.tree.children[0]
        else:
            assert r.kind == ELEMWISE and len(r.tree.children) >= 2
        seen.add(r.tree)
    assert len(seen) == len(prog.registers) == offset_count(prog)
    # slices group registers by tree order
    for n, level in enumerate(prog.slices, start=1):
        assert all(prog.registers[i].tree.order == n for i in level)


def offset_count(prog):
    return sum(len(level) for level in prog.slices)


def test_leading_zeros_really_are_zero():
    # the weight of a tree of height h vanishes on the first h stages
    rng = np.random.default_rng(3)
    s = 5
    A = [[Fraction(int(v), 7) if j < i else Fraction(0) for j, v in enumerate(row)]
         for i, row in enumerate(rng.integers(-7, 8, (s, s)))]
    prog = build_program(5, s)
    for r in prog.registers:
        parent = oracles.from_canonical(_canonical_of(r.tree))
        phi = oracles.weight(parent, A)
        assert all(v == 0 for v in phi[: r.leading_zeros])


def _canonical_of(tree):
    return "(" + "".join(_canonical_of(c) for c in tree.children) + ")"


def test_path_weight_is_a_power():
    A = [[0, 0, 0], [Fraction(1, 2), 0, 0], [Fraction(1, 3), Fraction(1, 5), 0]]
    b = [Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)]
    x = ob.pack(np.array(A, dtype=object), np.array(b, dtype=object))
    prog = build_program(3, 3)
    d = dict(ob.condition_values(prog, x))
    Am = np.array(A, dtype=object)
    c = Am @ np.array([Fraction(1)] * 3, dtype=object)
    assert d[path(3)] == np.dot(b, Am @ c) - Fraction(1, 6)
