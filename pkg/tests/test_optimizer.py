import math
from fractions import Fraction

import numpy as np
import pytest

from rksearch import objective as ob
from rksearch.optimizer import (CONVERGED, STATIONARY, BfgsState, Candidate, SearchOptions,
                                barrier_defect, bfgs_minimize, bfgs_step, bfgs_update, projected_direction,
                                promote, quadratic_line_search, rank, refine_error, search_batch)
from rksearch.program import build_program
from rksearch.tableau import Tableau, builtin

F = Fraction


class Quadratic:
    def __init__(self, Q):
        self.Q = Q

    def __call__(self, x):
        return 0.5 * float(x @ self.Q @ x)

    def value_grad(self, x):
        return self(x), self.Q @ x


def rosenbrock(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


# a third-order method with three stages: c = (0, 1/3, 2/3), b = (1/4, 0, 3/4)
HEUN3 = Tableau(((0, 0, 0), (F(1, 3), 0, 0), (0, F(2, 3), 0)), (F(1, 4), 0, F(3, 4)), "heun3")


def test_line_search_exact_quadratic():
    res = quadratic_line_search(lambda x: float(x[0] ** 2), np.array([1.0]), np.array([-1.0]), 1.0)
    assert res.ok and res.step == 1.0 and res.f_new == 0.0


def test_line_search_reports_ascent():
    res = quadratic_line_search(lambda x: float(x[0] ** 2), np.array([1.0]), np.array([1.0]), 1.0)
    assert not res.ok and res.f_new == 1.0


def test_line_search_rosenbrock_descends():
    x = np.array([-1.2, 1.0])
    g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
    res = quadratic_line_search(rosenbrock, x, -g, rosenbrock(x))
    assert res.ok and res.f_new < rosenbrock(x) and res.evaluations <= 64


def test_line_search_respects_budget():
    calls = []

    def f(x):
        calls.append(1)
        return 1.0

    res = quadratic_line_search(f, np.array([0.0]), np.array([1.0]), 1.0, max_evals=5)
    assert not res.ok and len(calls) == 5


def test_bfgs_recovers_inverse_hessian_on_quadratic():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(4, 4))
    Q = M @ M.T + 4 * np.eye(4)
    obj = Quadratic(Q)
    state = BfgsState.start(np.array([1.0, 2.0, -1.0, 0.5]), obj)
    first = bfgs_step(state, obj, SearchOptions())
    # from H = I the step is steepest descent with a line search
    ref = quadratic_line_search(obj, state.x, -state.g, state.f)
    assert first.step_type == "GRAD" and np.array_equal(first.x, ref.x_new)
    state = first
    for _ in range(3):
        state = bfgs_step(state, obj, SearchOptions())
    assert np.allclose(state.H @ Q, np.eye(4), atol=1e-8)
    assert state.f < 1e-20


def test_update_skips_negative_curvature():
    H = np.eye(2)
    assert bfgs_update(H, np.array([1.0, 0.0]), np.array([-1.0, 0.0])) is H
    H2 = bfgs_update(H, np.array([1.0, 0.0]), np.array([2.0, 1.0]))
    assert np.allclose(H2, H2.T) and np.all(np.linalg.eigvalsh(H2) > 0)
    # secant condition H y = s
    assert np.allclose(H2 @ np.array([2.0, 1.0]), [1.0, 0.0])


def test_options_validation():
    with pytest.raises(ValueError):
        SearchOptions(precision=(2, 1))
    with pytest.raises(ValueError):
        SearchOptions(precision=(9,))
    with pytest.raises(ValueError):
        SearchOptions(max_iterations=0)
    assert SearchOptions().success_threshold == 1e-25
    assert SearchOptions(precision=(1, 2, 4)).success_threshold == 1e-60
    assert SearchOptions(objective_tolerance=1e-10).success_threshold == 1e-10


def test_converges_from_perturbed_root():
    prog = build_program(3, 3)
    x0 = HEUN3.params(1) + 1e-3 * np.random.default_rng(4).uniform(-1, 1, 6)
    lines = []
    res = bfgs_minimize(x0, prog, SearchOptions(max_iterations=500), log=lines.append)
    assert res.status == CONVERGED and res.f < 1e-25 and res.precision == 2
    assert res.iterations <= 500 and not res.infeasible
    for line in lines:
        it, K, f, g, kind = line.split()
        int(it), int(K), float(f), float(g)
        assert kind in {"GRAD", "BFGS", "RESET", "ESCALATE", "STUCK"}


def test_root_converges_immediately():
    # binary64 rounding of 1/6 and 1/3 leaves R near 1e-32
    res = bfgs_minimize(builtin("rk4").params(1), build_program(4, 4))
    assert res.status == CONVERGED and res.iterations == 0 and res.f < 1e-30
    res = bfgs_minimize(builtin("rk4").params(2), build_program(4, 4), SearchOptions(precision=(2,)))
    assert res.status == CONVERGED and res.iterations == 0 and res.f < 1e-60


def test_rejects_wrong_length():
    with pytest.raises(ValueError):
        bfgs_minimize(np.zeros(5), build_program(3, 3))


def test_order_barrier_is_reported():
    prog = build_program(5, 4)
    assert barrier_defect(prog, ob.random_params(4, np.random.default_rng(0))) == F(-1, 120)
    assert barrier_defect(build_program(4, 4), builtin("rk4").params()) is None
    res = search_batch(3, prog, SearchOptions(max_iterations=300))
    for c in res:
        assert c.infeasible and c.barrier_defect == F(-1, 120)
        assert c.status != CONVERGED and c.f >= (1 / 120) ** 2 * (1 - 1e-12)


def test_two_stage_order_two_is_easy():
    res = search_batch(20, build_program(2, 2), SearchOptions(seed=100))
    assert sum(c.status == CONVERGED for c in res) >= 15


def test_batch_is_deterministic_and_independent_of_workers():
    prog = build_program(3, 3)
    opts = SearchOptions(seed=7, max_iterations=400)
    a = search_batch(3, prog, opts)
    b = search_batch(3, prog, opts)
    c = search_batch(3, prog, SearchOptions(seed=7, max_iterations=400, workers=2))
    for u, v, w in zip(a, b, c):
        assert u.seed == v.seed == w.seed and u.f == v.f == w.f
        assert np.array_equal(ob.convert(u.x, 2).limbs, ob.convert(w.x, 2).limbs)


def test_callback_sees_seed_order_and_ranking_breaks_ties_by_seed():
    seen = []
    res = search_batch(4, build_program(2, 2), SearchOptions(seed=3), on_result=lambda c: seen.append(c.seed))
    assert seen == [3, 4, 5, 6]
    assert [(c.f, c.seed) for c in res] == sorted((c.f, c.seed) for c in res)
    tied = [Candidate(5, None, 1.0, "", 0, 1), Candidate(2, None, 1.0, "", 0, 1), Candidate(9, None, 0.5, "", 0, 1)]
    assert [c.seed for c in rank(tied)] == [9, 2, 5]


def test_promote_reruns_the_best_fraction():
    prog = build_program(3, 3)
    first = search_batch(4, prog, SearchOptions(seed=0, max_iterations=300, precision=(1,)))
    again = promote(first, 0.5, prog, SearchOptions(precision=(2,), max_iterations=300))
    assert len(again) == 2
    assert {c.seed for c in again} == {c.seed for c in rank(first)[:2]}
    with pytest.raises(ValueError):
        promote(first, 0.0, prog, SearchOptions())


def test_projected_direction_is_tangent():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(3, 6))
    g = rng.normal(size=6)
    d = projected_direction(g, J, 1e-12)
    assert np.allclose(J @ d, 0, atol=1e-12)
    assert d @ g < 0
    assert np.array_equal(projected_direction(g, np.zeros((0, 6)), 1e-12), -g)


def test_refine_at_optimum_is_stationary():
    # Ralston minimizes E over the two-stage order-two family
    prog = build_program(2, 2, include_error_order=True)
    x0 = builtin("ralston").params(2)
    res = refine_error(x0, prog, SearchOptions())
    assert res.status == STATIONARY and len(res.history) <= 2
    assert abs(math.sqrt(res.error) - 1 / 6) < 1e-6


def test_refine_requires_a_root_and_error_conditions():
    with pytest.raises(ValueError):
        refine_error(builtin("euler").params(2), build_program(2, 1, True), SearchOptions())
    with pytest.raises(ValueError):
        refine_error(builtin("heun").params(2), build_program(2, 2), SearchOptions())
