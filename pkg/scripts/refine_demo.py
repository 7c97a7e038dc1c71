"""Refine sqrt(E) from Heun's method, on the 2-stage and 3-stage order-2 varieties."""

import math
from fractions import Fraction

from rksearch import objective as ob
from rksearch.optimizer import SearchOptions, refine_error
from rksearch.program import build_program
from rksearch.tableau import Tableau, builtin, format_tableau


def show(title, tab, p):
    prog = build_program(p, tab.s, include_error_order=True)
    res = refine_error(tab.params(2), prog, SearchOptions(precision=(2,)))
    print(f"== {title}: status {res.status} after {res.iterations} iterations")
    for it, e, r, step in res.history[:8] + ([("...", None, None, None)] if len(res.history) > 8 else []):
        if e is None:
            print("   ...")
            continue
        print(f"   {it:>3}  sqrt(E) {math.sqrt(e):.6e}  R {r:.1e}  step {step:.2e}")
    print(format_tableau(Tableau.from_params(ob.convert(res.x, 2), title), digits=12))


def main():
    show("two-stage", builtin("heun"), 2)
    idle = Tableau(((0, 0, 0), (1, 0, 0), (0, 0, 0)), (Fraction(1, 2), Fraction(1, 2), 0))
    show("three-stage", idle, 2)


if __name__ == "__main__":
    main()
