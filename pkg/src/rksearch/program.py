"""Compile Butcher-weight computations into a sliced, deduplicated program.

Every tree of order <= p gets one register holding its Butcher weight. A
register is computed in one instruction from registers of strictly smaller
order:

* ``ONE``      the trivial weight (all ones) of the single-vertex tree,
* ``MATVEC``   ``A @ w(t)`` for a one-legged tree ``[t]``,
* ``ELEMWISE`` ``w([t1]) * w([t2, ..., tm])`` for a tree with ``m >= 2`` legs.

Because A is strictly lower triangular, the weight of a tree of height ``h``
vanishes in its first ``h`` entries; a register stores only the trailing
``s - h`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .trees import LEAF, RootedTree, bracket, enumerate_trees, rhs, symmetry

ONE, MATVEC, ELEMWISE = 0, 1, 2
KIND_NAMES = {ONE: "ONE", MATVEC: "MATVEC", ELEMWISE: "ELEMWISE"}


@dataclass(frozen=True)
class WeightSpec:
    tree: RootedTree
    kind: int
    src: tuple[int, ...]
    leading_zeros: int
    stored: int  # number of trailing entries kept, s - leading_zeros
    offset: int  # position of the stored suffix in a flat register buffer


@dataclass(frozen=True)
class Condition:
    register: int
    rhs: Fraction
    symmetry: int
    tree: RootedTree


@dataclass(frozen=True)
class EvaluationProgram:
    order: int
    stage_count: int
    registers: tuple[WeightSpec, ...]
    slices: tuple[tuple[int, ...], ...]
    conditions: tuple[Condition, ...]
    error_conditions: tuple[Condition, ...] = ()

    @property
    def param_count(self) -> int:
        s = self.stage_count
        return s * (s + 1) // 2

    @property
    def buffer_size(self) -> int:
        return sum(r.stored for r in self.registers)

    @property
    def includes_error_order(self) -> bool:
        return bool(self.error_conditions)


def build_program(p: int, s: int, include_error_order: bool = False) -> EvaluationProgram:
    if p < 1 or s < 1:
        raise ValueError(f"need p >= 1 and s >= 1, got p={p}, s={s}")
    top = p + 1 if include_error_order else p
    groups = enumerate_trees(top)
    index: dict[RootedTree, int] = {}
    registers: list[WeightSpec] = []
    slices = []
    offset = 0
    for group in groups:
        level = []
        for tree in group:
            if tree == LEAF:
                kind, src = ONE, ()
            elif len(tree.children) == 1:
                kind, src = MATVEC, (index[tree.children[0]],)
            else:
                first, rest = tree.children[0], tree.children[1:]
                kind, src = ELEMWISE, (index[bracket(first)], index[RootedTree(rest)])
            lz = min(tree.height, s)
            n = s - lz
            index[tree] = len(registers)
            level.append(len(registers))
            registers.append(WeightSpec(tree, kind, src, lz, n, offset))
            offset += n
        slices.append(tuple(level))

    def conds(trees):
        return tuple(Condition(index[t], rhs(t), symmetry(t), t) for t in trees)

    conditions = conds(t for g in groups[:p] for t in g)
    error_conditions = conds(groups[p]) if include_error_order else ()
    return EvaluationProgram(
        order=p,
        stage_count=s,
        registers=tuple(registers),
        slices=tuple(slices),
        conditions=conditions,
        error_conditions=error_conditions,
    )
