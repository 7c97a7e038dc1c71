import math
import time
from fractions import Fraction

import numpy as np
import pytest

import oracles
from rksearch import objective as ob
from rksearch.expansion import Expansion
from rksearch.program import build_program
from rksearch.tableau import builtin
from rksearch.trees import bushy, path

F = Fraction


def random_rational_tableau(rng, s):
    A = [[F(int(rng.integers(-20, 21)), int(rng.integers(1, 13))) if j < i else F(0) for j in range(s)]
         for i in range(s)]
    b = [F(int(rng.integers(-20, 21)), int(rng.integers(1, 13))) for _ in range(s)]
    return A, b


def exact_params(A, b):
    return ob.pack(np.array(A, dtype=object), np.array(b, dtype=object))


def test_matches_recursive_oracle_exactly():
    rng = np.random.default_rng(5)
    forest = oracles.grow_trees(6)
    for _ in range(25):
        s, p = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        A, b = random_rational_tableau(rng, s)
        prog = build_program(p, s, include_error_order=True)
        x = exact_params(A, b)
        assert ob.residual(prog, x) == oracles.residual(A, b, p, forest)
        assert ob.error_norm(prog, x) == oracles.error_norm(A, b, p, forest)


def test_small_examples():
    euler = builtin("euler").params()
    assert ob.residual(build_program(1, 1), euler) == 0
    assert ob.residual(build_program(2, 1), euler) == F(1, 4)
    rk4 = builtin("rk4").params()
    prog = build_program(4, 4, include_error_order=True)
    assert ob.residual(prog, rk4) == 0
    assert all(v == 0 for v in ob.defects(prog, rk4))
    assert f"{math.sqrt(ob.error_norm(prog, rk4)):.3e}" == "1.450e-02"
    mid = builtin("midpoint").params()
    assert ob.error_norm(build_program(2, 2, True), mid) == F(17, 576)


def test_heun_order_three_defects():
    d = dict(ob.condition_values(build_program(3, 2), builtin("heun").params()))
    assert d[bushy(3)] == F(1, 6) and d[path(3)] == F(-1, 6)
    assert all(v == 0 for t, v in d.items() if t.order < 3)


def test_zero_b_gives_unit_defect():
    x = ob.pack(np.zeros((3, 3)), np.zeros(3))
    prog = build_program(3, 3)
    (first, *_) = ob.condition_values(prog, x)
    assert first[1] == -1.0


@pytest.mark.parametrize("K", [1, 2, 3, 5])
def test_precisions_agree_with_exact(K):
    rng = np.random.default_rng(K)
    prog = build_program(5, 5, include_error_order=True)
    for _ in range(5):
        A, b = random_rational_tableau(rng, 5)
        x = exact_params(A, b)
        exact_r = ob.residual(prog, x)
        exact_e = ob.error_norm(prog, x)
        r = ob.residual(prog, ob.convert(x, K))
        e = ob.error_norm(prog, ob.convert(x, K))
        tol = 2.0 ** (-50 * K + 20)
        if K > 1:
            r, e = r.to_fraction(), e.to_fraction()
        assert abs(F(r) - exact_r) <= tol * exact_r
        assert abs(F(e) - exact_e) <= tol * exact_e


def test_compiled_and_generic_paths_agree():
    # K=2 runs the compiled kernels, K=3 the generic interpreter
    rng = np.random.default_rng(9)
    prog = build_program(4, 5, include_error_order=True)
    for _ in range(10):
        x1 = ob.random_params(5, rng)
        r2, g2 = ob.residual_gradient(prog, ob.convert(x1, 2))
        r3, g3 = ob.residual_gradient(prog, ob.convert(x1, 3))
        assert abs(r2.to_fraction() - r3.to_fraction()) <= 1e-28 * abs(r3.to_fraction())
        diff = (g2.with_limbs(3) - g3).to_float()
        assert np.max(np.abs(diff)) <= 1e-28 * np.max(np.abs(g3.to_float()))
        e2, ge2 = ob.error_gradient(prog, ob.convert(x1, 2))
        e3, ge3 = ob.error_gradient(prog, ob.convert(x1, 3))
        assert np.allclose(ge2.to_float(), ge3.to_float(), rtol=1e-13, atol=0)


def central_difference(f, x, h=2.0 ** -20):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("p,s", [(2, 2), (3, 3), (4, 4)])
def test_gradient_matches_finite_differences(p, s):
    rng = np.random.default_rng(p)
    prog = build_program(p, s, include_error_order=True)
    for _ in range(10):
        x = ob.random_params(s, rng)
        _, g = ob.residual_gradient(prog, x)
        assert rel(g, central_difference(lambda y: ob.residual(prog, y), x)) < 1e-6
        _, gE = ob.error_gradient(prog, x)
        assert rel(gE, central_difference(lambda y: ob.error_norm(prog, y), x)) < 1e-6


def test_gradient_of_one_stage():
    prog = build_program(1, 1)
    r, g = ob.residual_gradient(prog, np.array([3.0]))
    assert r == 4.0 and g[0] == 4.0
    r, g = ob.residual_gradient(prog, exact_params([[F(0)]], [F(3)]))
    assert r == 4 and g[0] == 4


def test_gradient_vanishes_at_a_root():
    prog = build_program(4, 4)
    r, g = ob.residual_gradient(prog, builtin("rk4").params(2))
    assert 0 <= r.to_fraction() < 1e-60  # 1/6 and 1/3 round at K=2
    assert np.linalg.norm(g.to_float()) < 1e-30


def test_jacobian():
    rng = np.random.default_rng(1)
    prog = build_program(3, 3)
    for _ in range(10):
        x = ob.random_params(3, rng)
        J = ob.condition_jacobian(prog, x)
        assert np.array_equal(J[0], np.r_[np.zeros(3), np.ones(3)])  # the single-vertex row
        fd = np.stack([central_difference(lambda y, i=i: ob.defects(prog, y)[i], x)
                       for i in range(len(prog.conditions))])
        assert rel(J, fd) < 1e-6
        x2 = ob.convert(x, 2)
        J2 = ob.condition_jacobian(prog, x2)
        D2 = ob.defects(prog, x2)
        _, g2 = ob.residual_gradient(prog, x2)
        recon = 2 * (J2.to_float().T @ D2.to_float())
        assert rel(recon, g2.to_float()) < 1e-12


def test_exact_gradient_matches_float():
    rng = np.random.default_rng(2)
    prog = build_program(3, 3)
    A, b = random_rational_tableau(rng, 3)
    x = exact_params(A, b)
    r, g = ob.residual_gradient(prog, x)
    assert all(isinstance(v, Fraction) for v in g)
    _, gf = ob.residual_gradient(prog, ob.convert(x, 1))
    assert np.allclose([float(v) for v in g], gf, rtol=1e-12)


def test_principal_error_coefficients():
    prog = build_program(2, 2, True)
    coeffs = ob.principal_error_coefficients(prog, builtin("midpoint").params())
    assert sorted(coeffs) == [F(-1, 6), F(-1, 24)]
    assert sum(c * c for c in coeffs) == F(17, 576)
    prog4 = build_program(4, 4, True)
    coeffs = ob.principal_error_coefficients(prog4, builtin("rk4").params())
    assert math.isclose(math.sqrt(sum(c * c for c in coeffs)), 1.450e-2, rel_tol=1e-3)


def test_layout():
    A = np.array([[0, 0, 0], [1, 0, 0], [2, 3, 0]], dtype=float)
    b = np.array([4, 5, 6], dtype=float)
    x = ob.pack(A, b)
    assert list(x) == [1, 2, 3, 4, 5, 6]
    A2, b2 = ob.unpack(x)
    assert np.array_equal(A, A2) and np.array_equal(b, b2)
    assert ob.stages_from_count(10) == 4
    with pytest.raises(ValueError):
        ob.stages_from_count(7)
    with pytest.raises(ValueError):
        ob.residual(build_program(2, 3), np.zeros(5))
    e = ob.convert(x, 3)
    assert isinstance(e, Expansion) and ob.kind_of(e) == "expansion"
    assert list(ob.convert(e, None)) == [F(v) for v in x]
    Ae, be = ob.unpack(e)
    assert np.array_equal(Ae.to_float(), A)


def test_gradient_cost_is_small():
    prog = build_program(4, 4)
    x = ob.convert(ob.random_params(4, np.random.default_rng(0)), 2)
    ob.residual_gradient(prog, x)
    t0 = time.perf_counter()
    for _ in range(200):
        ob.residual_gradient(prog, x)
    assert (time.perf_counter() - t0) / 200 < 1e-3
