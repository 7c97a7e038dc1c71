"""Order checks, principal error coefficients and extrapolated Euler methods."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import objective as ob
from .expansion import Expansion
from .program import build_program
from .tableau import Tableau


class OrderCheckError(ValueError):
    pass


@dataclass
class OrderReport:
    order: int
    stages: int
    passed: bool
    tolerance: float
    max_defect: float
    max_defect_by_order: dict[int, float]
    violated: int  # conditions with |defect| > tolerance
    conditions: int
    sqrt_error: Optional[float]  # sqrt(E_{p,s}), None if not requested
    b2_zero: bool
    cs_one: bool
    note: str = ""
    failing: list = field(default_factory=list)  # (tree, defect) above tolerance

    def lines(self) -> list[str]:
        out = [f"method order check: p={self.order} s={self.stages}"]
        for k in sorted(self.max_defect_by_order):
            out.append(f"  order {k}: max |defect| = {self.max_defect_by_order[k]:.3e}")
        out.append(f"  max |defect| = {self.max_defect:.3e} (tolerance {self.tolerance:.1e}), "
                   f"{self.violated} of {self.conditions} conditions violated")
        if self.sqrt_error is not None:
            out.append(f"  sqrt(E) = {self.sqrt_error:.3e}")
        out.append(f"  b_2 = 0: {str(self.b2_zero).lower()}")
        out.append(f"  c_s = 1: {str(self.cs_one).lower()}")
        if self.note:
            out.append(f"  note: {self.note}")
        out.append("  result: " + ("pass" if self.passed else "fail"))
        return out


def _params(tab: Tableau, precision: Optional[int]):
    return tab.params(precision)


def _abs_float(v) -> float:
    if isinstance(v, Expansion):
        return abs(float(v.to_float()))
    return abs(float(v))


def check_order(tab: Tableau, p: int, tol: float = 0.0, precision: Optional[int] = None,
                with_error: bool = True) -> OrderReport:
    """Check every order condition up to ``p``.

    ``precision`` is the limb count (1 for binary64) or None for exact
    rationals, in which case ``tol=0`` means exact satisfaction.
    """
    s = tab.s
    program = build_program(p, s, include_error_order=with_error)
    x = _params(tab, precision)
    d = ob.defects(program, x)
    by_order: dict[int, float] = {}
    failing = []
    worst = 0.0
    exact_zero = True
    for i, c in enumerate(program.conditions):
        v = d[i]
        mag = _abs_float(v)
        k = c.tree.order
        by_order[k] = max(by_order.get(k, 0.0), mag)
        worst = max(worst, mag)
        bad = (v != 0) if precision is None and tol == 0 else mag > tol
        if bad:
            exact_zero = False
            failing.append((c.tree, v))
    sqrt_e = None
    if with_error:
        sqrt_e = math.sqrt(_abs_float(ob.error_norm(program, x)))
    note = ""
    if s < p:
        note = (f"s={s} < p={p}: the order-{p} path tree has weight zero, so its defect is "
                f"-1/{math.factorial(p)} for every tableau with this many stages")
    return OrderReport(
        order=p, stages=s, passed=exact_zero, tolerance=tol, max_defect=worst,
        max_defect_by_order=by_order, violated=len(failing), conditions=len(program.conditions),
        sqrt_error=sqrt_e, b2_zero=s >= 2 and tab.b[1] == 0, cs_one=tab.c[-1] == 1,
        note=note, failing=failing,
    )


def principal_error_coefficients(tab: Tableau, p: int, precision: Optional[int] = None,
                                 tol: float = 0.0):
    """``(1/sigma) (b . Phi(t) - 1/t!)`` for every tree of order p+1.

    Refuses (``OrderCheckError``) when the tableau does not have order p.
    """
    report = check_order(tab, p, tol, precision, with_error=False)
    if not report.passed:
        tree, v = report.failing[0]
        raise OrderCheckError(f"tableau does not have order {p}: condition {tree} has defect {v}")
    program = build_program(p, tab.s, include_error_order=True)
    return list(ob.principal_error_coefficients(program, _params(tab, precision)))


def extrapolated_euler(p: int) -> Tableau:
    """Aitken-Neville extrapolation of Euler's method over step numbers 1..p.

    The sub-integrations share their first stage ``f(y0)``, giving
    ``1 + p(p-1)/2`` stages. Weights are ``prod_{i != j} n_j / (n_j - n_i)``,
    which cancel the error terms h^1 .. h^(p-1) of the Euler expansion.
    """
    if not isinstance(p, int) or not 1 <= p <= 12:
        raise ValueError(f"p must be an integer in [1, 12], got {p!r}")
    ns = list(range(1, p + 1))
    gamma = {}
    for j in ns:
        g = Fraction(1)
        for i in ns:
            if i != j:
                g *= Fraction(j, j - i)
        gamma[j] = g
    # stage 0 is shared; stage (j, m) for m = 1..j-1 sits after m Euler substeps of size h/j
    index = {}
    s = 1
    for j in ns:
        for m in range(1, j):
            index[(j, m)] = s
            s += 1
    A = [[Fraction(0)] * s for _ in range(s)]
    b = [Fraction(0)] * s
    for j in ns:
        w = Fraction(1, j)
        b[0] += gamma[j] * w
        for m in range(1, j):
            row = index[(j, m)]
            A[row][0] = w
            for l in range(1, m):
                A[row][index[(j, l)]] = w
            b[row] += gamma[j] * w
    return Tableau(tuple(tuple(r) for r in A), tuple(b), f"euler-extrapolated:{p}")
