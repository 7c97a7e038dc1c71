from fractions import Fraction

import numpy as np
from hypothesis import given, settings, strategies as st

from rksearch.dual import Dual, dual_add, dual_mul, dual_scale, gradient, matvec
from rksearch.expansion import Expansion

rationals = st.fractions(max_denominator=1000).filter(lambda q: abs(q) < 1000)


def test_square():
    y = Dual(3.0, 1.0) ** 2
    assert (y.re, y.du) == (9.0, 6.0)


def test_scalars_embed():
    y = Dual(2.0) * Dual(5.0)
    assert (y.re, y.du) == (10.0, 0.0)


def test_bilinear_gradient():
    value, g = gradient(lambda v: v[0] * v[1], [2.0, 3.0])
    assert value == 6.0 and g == [3.0, 2.0]


@settings(max_examples=200, deadline=None)
@given(rationals, rationals, rationals, rationals)
def test_product_rule_exact(a, b, c, d):
    y = dual_mul(Dual(a, b), Dual(c, d))
    assert y.re == a * c and y.du == a * d + b * c
    z = dual_add(Dual(a, b), Dual(c, d))
    assert (z.re, z.du) == (a + c, b + d)
    w = dual_scale(Dual(a, b), c)
    assert (w.re, w.du) == (a * c, b * c)


@settings(max_examples=100, deadline=None)
@given(rationals.filter(lambda q: q != 0), rationals)
def test_quotient_rule(a, b):
    y = Dual(Fraction(1)) / Dual(a, b)
    assert y.re == 1 / a and y.du == -b / a ** 2


def test_polynomial_derivative_matches_symbolic():
    # p(x) = 3x^3 - 2x + 7 -> p'(x) = 9x^2 - 2
    for x in (Fraction(-3, 2), Fraction(0), Fraction(5, 7)):
        X = Dual(x, Fraction(1))
        y = 3 * X ** 3 - 2 * X + 7
        assert y.re == 3 * x ** 3 - 2 * x + 7 and y.du == 9 * x ** 2 - 2


def test_expansion_parts():
    K = 3
    third = Expansion.from_fraction(Fraction(1, 3), K)
    y = Dual(third, Expansion.from_float(1.0, K)) ** 2
    assert abs(y.du.to_fraction() - Fraction(2, 3)) < Fraction(1, 10 ** 45)


def test_batched_seeds_share_one_real_part():
    # du carries a leading axis of directions; re is computed once
    x = np.array([1.0, 2.0, 3.0])
    X = Dual(x, np.eye(3))
    y = (X * X).sum()
    assert y.re == 14.0
    assert np.array_equal(y.du, 2 * x)


def test_matvec_with_dual_matrix():
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    dM = np.array([[0.0, 1.0], [0.0, 0.0]])
    v = np.array([5.0, 6.0])
    y = matvec(Dual(M, dM), Dual(v, np.array([1.0, 0.0])))
    assert np.array_equal(y.re, M @ v)
    assert np.array_equal(y.du, dM @ v + M @ np.array([1.0, 0.0]))


def test_gradient_writes_into_buffer():
    out = [None, None, None]
    value, g = gradient(lambda v: v[0] * v[1] * v[2] + v[0], [1.0, 2.0, 3.0], out=out)
    assert g is out and out == [7.0, 3.0, 2.0] and value == 7.0
