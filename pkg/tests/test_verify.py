from fractions import Fraction

import pytest

from rksearch.tableau import Tableau, builtin
from rksearch.verify import OrderCheckError, check_order, extrapolated_euler, principal_error_coefficients

F = Fraction


def test_rk4_checks():
    ok = check_order(builtin("rk4"), 4)
    assert ok.passed and ok.max_defect == 0 and f"{ok.sqrt_error:.3e}" == "1.450e-02"
    bad = check_order(builtin("rk4"), 5)
    assert not bad.passed and bad.violated == 9 and bad.conditions == 17
    assert bad.max_defect == bad.max_defect_by_order[5] and bad.max_defect_by_order[4] == 0


def test_rk4_in_floating_point_needs_a_tolerance():
    assert not check_order(builtin("rk4"), 4, tol=0.0, precision=2).passed
    assert check_order(builtin("rk4"), 4, tol=1e-25, precision=2).passed


def test_flags():
    mid = check_order(builtin("midpoint"), 2)
    assert mid.passed and not mid.b2_zero and mid.cs_one is False
    tab = Tableau(((0, 0, 0), (F(1, 3), 0, 0), (0, 1, 0)), (F(1, 2), 0, F(1, 2)))
    r = check_order(tab, 1)
    assert r.b2_zero and r.cs_one
    assert any(line.endswith("b_2 = 0: true") for line in r.lines())


def test_barrier_note():
    r = check_order(builtin("heun"), 3)
    assert not r.passed and "-1/6" in r.note


def test_principal_coefficients():
    assert sorted(principal_error_coefficients(builtin("midpoint"), 2)) == [F(-1, 6), F(-1, 24)]
    with pytest.raises(OrderCheckError):
        principal_error_coefficients(builtin("euler"), 2)


def test_extrapolated_euler_structure():
    assert extrapolated_euler(1) == Tableau(((0,),), (1,), "euler-extrapolated:1")
    assert extrapolated_euler(10).s == 46 and extrapolated_euler(11).s == 56
    for p in range(1, 8):
        tab = extrapolated_euler(p)
        assert tab.s == 1 + p * (p - 1) // 2 and sum(tab.b) == 1
    with pytest.raises(ValueError):
        extrapolated_euler(0)


@pytest.mark.parametrize("p", range(1, 6))
def test_extrapolated_euler_order(p):
    tab = extrapolated_euler(p)
    assert check_order(tab, p, with_error=False).passed
    assert not check_order(tab, p + 1, with_error=False).passed
