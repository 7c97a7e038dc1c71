"""Modified BFGS search on the residual and constrained refinement of the error.

Working-precision values (the iterate ``x`` and objective values) follow the
current rung of the precision ladder: a float64 array at K=1 and an
``Expansion`` above. Directions, gradients used for directions, and the
inverse-Hessian approximation ``H`` are kept in binary64; only the point
itself and the objective need the extra limbs.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from . import objective as ob
from .expansion import Expansion
from .program import EvaluationProgram, build_program
from .trees import path

CONVERGED, STALLED, ITERATION_LIMIT = "converged", "stalled", "iteration-limit"
STATIONARY, RESTORATION_FAILED = "stationary", "restoration-failed"
STEP_BFGS, STEP_GRAD, STEP_RESET = "BFGS", "GRAD", "RESET"

# Floor below which a rung is considered exhausted and the next one takes
# over. The K=2 and K=4 values double as the success thresholds.
RUNG_THRESHOLDS = {1: 1e-20, 2: 1e-25, 3: 1e-40, 4: 1e-60}


def rung_threshold(K: int) -> float:
    return RUNG_THRESHOLDS.get(K, 10.0 ** (-15 * K))


@dataclass(frozen=True)
class SearchOptions:
    max_iterations: int = 10_000
    gradient_tolerance: float = 1e-300
    objective_tolerance: Optional[float] = None  # default: rung threshold of the top rung
    stagnation_window: int = 50
    stagnation_threshold: float = 1e-3
    precision: tuple[int, ...] = (1, 2)
    seed: int = 0
    max_line_search: int = 64
    refine_tolerance: float = 1e-7
    rank_tolerance: float = 1e-12
    max_refine_iterations: int = 200
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("gradient_tolerance", "stagnation_threshold", "refine_tolerance", "rank_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.objective_tolerance is not None and not self.objective_tolerance > 0:
            raise ValueError("objective_tolerance must be positive")
        if self.stagnation_window < 1 or self.max_line_search < 3:
            raise ValueError("stagnation_window must be >= 1 and max_line_search >= 3")
        ladder = tuple(self.precision)
        if not ladder or any(k < 1 or k > 8 for k in ladder):
            raise ValueError(f"precision ladder must be non-empty with limb counts in 1..8, got {ladder}")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"precision ladder must be increasing, got {ladder}")
        object.__setattr__(self, "precision", ladder)

    @property
    def success_threshold(self) -> float:
        if self.objective_tolerance is not None:
            return self.objective_tolerance
        return rung_threshold(self.precision[-1])


# -- objective adaptor -------------------------------------------------------

class Objective:
    """R or E of one program, exposed as float values for the optimizer."""

    def __init__(self, program: EvaluationProgram, which: str = "R"):
        if which not in ("R", "E"):
            raise ValueError("which must be 'R' or 'E'")
        self.program = program
        self.which = which
        self.ws = ob.Workspace(program)
        self.evaluations = 0

    def __call__(self, x) -> float:
        self.evaluations += 1
        f = ob.residual if self.which == "R" else ob.error_norm
        return _to_float(f(self.program, x, self.ws))

    def value_grad(self, x):
        self.evaluations += 1
        f = ob.residual_gradient if self.which == "R" else ob.error_gradient
        v, g = f(self.program, x, self.ws)
        return _to_float(v), _to_float_vec(g)


def _to_float(v) -> float:
    if isinstance(v, Expansion):
        return float(v.to_float())
    return float(v)


def _to_float_vec(g) -> np.ndarray:
    if isinstance(g, Expansion):
        return g.to_float()
    return np.array([float(v) for v in g]) if not isinstance(g, np.ndarray) or g.dtype != np.float64 else g


def axpy(x, t: float, d: np.ndarray):
    """``x + t*d`` at the precision of ``x``."""
    if isinstance(x, Expansion):
        return x + Expansion.from_float(t * d, x.K)
    return x + t * d


def difference(x_new, x) -> np.ndarray:
    if isinstance(x, Expansion):
        return (x_new - x).to_float()
    return x_new - x


# -- line search -------------------------------------------------------------

@dataclass
class LineSearchResult:
    ok: bool
    step: float
    f_new: float
    x_new: object = None
    evaluations: int = 0


def quadratic_line_search(f: Callable, x, d: np.ndarray, f0: float, t0: float = 1.0,
                          max_evals: int = 64) -> LineSearchResult:
    """Find ``t > 0`` with ``f(x + t d) < f0``.

    Expands by 2 while the value keeps dropping, otherwise halves until it
    drops, then tries the vertex of the quadratic through the bracketing
    triple. Returns ``ok=False`` when no decrease is found within
    ``max_evals`` evaluations.
    """
    if not np.any(d):
        return LineSearchResult(False, 0.0, f0, x, 0)
    evals = 0

    def phi(t):
        nonlocal evals
        evals += 1
        xt = axpy(x, t, d)
        v = f(xt)
        return (v if math.isfinite(v) else math.inf), xt

    t = t0
    ft, xt = phi(t)
    if ft < f0:
        left, fl = 0.0, f0
        right, fr = None, None
        while evals < max_evals:
            t2 = 2.0 * t
            f2, x2 = phi(t2)
            if f2 < ft:
                left, fl = t, ft
                t, ft, xt = t2, f2, x2
            else:
                right, fr = t2, f2
                break
        if right is None:
            return LineSearchResult(True, t, ft, xt, evals)
    else:
        right, fr = t, ft
        while True:
            if evals >= max_evals or t < 1e-300:
                return LineSearchResult(False, 0.0, f0, x, evals)
            t = 0.5 * t
            ft, xt = phi(t)
            if ft < f0:
                break
            right, fr = t, ft
        left, fl = 0.0, f0
    vertex = _parabola_vertex(left, fl, t, ft, right, fr)
    if vertex is not None and evals < max_evals and vertex != t:
        fv, xv = phi(vertex)
        if fv < ft:
            return LineSearchResult(True, vertex, fv, xv, evals)
    return LineSearchResult(True, t, ft, xt, evals)


def _parabola_vertex(a, fa, b, fb, c, fc):
    # Newton form: f = fa + d1 (t - a) + d2 (t - a)(t - b)
    if not all(map(math.isfinite, (fa, fb, fc))):
        return None
    d1 = (fb - fa) / (b - a)
    d2 = ((fc - fb) / (c - b) - d1) / (c - a)
    if not d2 > 0:
        return None
    v = 0.5 * (a + b) - d1 / (2.0 * d2)
    if not (a < v < c):
        return None
    return v


# -- BFGS --------------------------------------------------------------------

@dataclass
class BfgsState:
    x: object
    f: float
    g: np.ndarray
    H: np.ndarray
    iteration: int = 0
    identity: bool = True
    stuck: bool = False
    step_type: str = ""
    t_grad: float = 1.0

    @classmethod
    def start(cls, x, objective: Objective) -> "BfgsState":
        f, g = objective.value_grad(x)
        n = len(g)
        return cls(x=x, f=f, g=g, H=np.eye(n))


def bfgs_step(state: BfgsState, objective: Objective, options: SearchOptions) -> BfgsState:
    """One iteration: line searches along ``-H g`` and ``-g``, keep the better.

    While H is the identity the two directions coincide and a single search
    is made; that step still feeds the BFGS update. When both searches run and
    the gradient direction wins, H is reset to the identity.
    """
    g = state.g
    lim = options.max_line_search
    grad = quadratic_line_search(objective, state.x, -g, state.f, state.t_grad, lim)
    if state.identity:
        bfgs = LineSearchResult(False, 0.0, state.f)
    else:
        bfgs = quadratic_line_search(objective, state.x, -(state.H @ g), state.f, 1.0, lim)
    if not grad.ok and not bfgs.ok:
        return replace(state, stuck=True, iteration=state.iteration + 1, step_type="")
    use_grad = grad.ok and (not bfgs.ok or grad.f_new < bfgs.f_new)
    chosen = grad if use_grad else bfgs
    f_new, g_new = objective.value_grad(chosen.x_new)
    if use_grad and not state.identity:
        step_type, H, identity = STEP_RESET, np.eye(len(g)), True
    else:
        step_type = STEP_GRAD if state.identity else STEP_BFGS
        H = bfgs_update(state.H, difference(chosen.x_new, state.x), g_new - g)
        identity = False
    return BfgsState(
        x=chosen.x_new, f=f_new, g=g_new, H=H, iteration=state.iteration + 1,
        identity=identity, stuck=False, step_type=step_type,
        t_grad=grad.step if grad.ok else state.t_grad,
    )


def bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse-Hessian update ``(I - r s y^T) H (I - r y s^T) + r s s^T``.

    Skipped (H returned unchanged) when the curvature ``y.s`` is not positive,
    which would destroy positive definiteness.
    """
    ys = float(y @ s)
    if not ys > 0 or not math.isfinite(ys):
        return H
    r = 1.0 / ys
    Hy = H @ y
    yHy = float(y @ Hy)
    H = H - r * (np.outer(s, Hy) + np.outer(Hy, s)) + (r * r * yHy + r) * np.outer(s, s)
    return 0.5 * (H + H.T)


# -- minimization with the precision ladder ----------------------------------

@dataclass
class MinimizeResult:
    x: object
    f: float
    status: str
    iterations: int
    precision: int
    history: list = field(default_factory=list)
    infeasible: bool = False
    barrier_defect: Optional[Fraction] = None


def _program_for(program: EvaluationProgram, which: str) -> Objective:
    return Objective(program, which)


def bfgs_minimize(x0, program: EvaluationProgram, options: SearchOptions = SearchOptions(),
                  log: Optional[Callable[[str], None]] = None, which: str = "R") -> MinimizeResult:
    """Minimize R (or E) from ``x0``, climbing the precision ladder as needed.

    Log lines are ``iteration K f |g| step_type``, space separated.
    """
    if len(x0) != program.param_count:
        raise ValueError(f"x0 has length {len(x0)}, program expects {program.param_count}")
    objective = _program_for(program, which)
    ladder = options.precision
    success = options.success_threshold
    rung = 0
    x = ob.convert(x0, ladder[0])
    state = BfgsState.start(x, objective)
    history = [(0, ladder[0], state.f, float(np.linalg.norm(state.g)), "")]
    rung_start = 0
    status = ITERATION_LIMIT
    total = 0
    while True:
        K = ladder[rung]
        top = rung == len(ladder) - 1
        if state.f < success and top:
            status = CONVERGED
            break
        if total >= options.max_iterations:
            status = ITERATION_LIMIT
            break
        escalate = False
        if not top and state.f < rung_threshold(K):
            escalate = True
        elif state.stuck or float(np.linalg.norm(state.g)) <= options.gradient_tolerance:
            escalate = True
        elif total - rung_start >= options.stagnation_window:
            f_then = history[-options.stagnation_window - 1][2]
            if f_then > 0 and (f_then - state.f) / f_then < options.stagnation_threshold:
                escalate = True
        if escalate:
            if top:
                status = CONVERGED if state.f < success else STALLED
                break
            rung += 1
            K = ladder[rung]
            state = BfgsState.start(ob.convert(state.x, K), objective)
            rung_start = total
            history.append((total, K, state.f, float(np.linalg.norm(state.g)), "ESCALATE"))
            if log:
                log(f"{total} {K} {state.f:.6e} {np.linalg.norm(state.g):.6e} ESCALATE")
            continue
        state = bfgs_step(state, objective, options)
        total += 1
        gnorm = float(np.linalg.norm(state.g))
        history.append((total, K, state.f, gnorm, state.step_type or "STUCK"))
        if log:
            log(f"{total} {K} {state.f:.6e} {gnorm:.6e} {state.step_type or 'STUCK'}")
    result = MinimizeResult(state.x, state.f, status, total, ladder[rung], history)
    if which == "R":
        _flag_barrier(result, program)
    return result


def barrier_defect(program: EvaluationProgram, x) -> Optional[Fraction]:
    """Exact defect of the order-p path tree when s < p, else None.

    With fewer stages than the order the path weight vanishes identically, so
    this is always ``-1/p!``; it is evaluated rather than assumed.
    """
    p, s = program.order, program.stage_count
    if s >= p:
        return None
    xe = ob.convert(x, None)
    target = path(p)
    for tree, d in ob.condition_values(program, xe):
        if tree == target:
            return d
    raise AssertionError("path tree missing from the program")


def _flag_barrier(result: MinimizeResult, program: EvaluationProgram):
    d = barrier_defect(program, result.x)
    if d is not None:
        result.infeasible = True
        result.barrier_defect = d
        if result.status == CONVERGED:  # impossible: R >= d**2
            raise AssertionError("converged below the order barrier")


# -- constrained refinement --------------------------------------------------

@dataclass
class RefineResult:
    x: object
    error: float  # E at x
    residual: float
    status: str
    iterations: int
    history: list = field(default_factory=list)  # (iteration, E, R, step)


def projected_direction(grad_E: np.ndarray, J: np.ndarray, rank_tolerance: float) -> np.ndarray:
    """``-(I - V V^T) grad_E`` with V spanning the numerical row space of J."""
    if J.size == 0:
        return -grad_E
    _, S, Vt = np.linalg.svd(J, full_matrices=False)
    if S.size == 0 or S[0] == 0:
        return -grad_E
    V = Vt[S > rank_tolerance * S[0]]
    return -(grad_E - V.T @ (V @ grad_E))


def refine_error(x0, program: EvaluationProgram, options: SearchOptions = SearchOptions(),
                 log: Optional[Callable[[str], None]] = None) -> RefineResult:
    """Decrease E while staying on R < threshold.

    Alternates a projected-gradient line search on E with a restoration of R by
    ``bfgs_minimize`` at the top rung of the ladder. An iterate is accepted
    only if E decreased; otherwise the trial step is halved. Stops when the
    relative improvement falls below ``refine_tolerance``.
    """
    if not program.error_conditions:
        raise ValueError("refinement needs a program built with include_error_order=True")
    K = options.precision[-1]
    success = options.success_threshold
    x = ob.convert(x0, K)
    R = Objective(program, "R")
    E = Objective(program, "E")
    r0 = R(x)
    if not r0 < success:
        raise ValueError(f"starting point is not a root: R = {r0:.3e} >= {success:.1e}")
    restore_opts = replace(options, precision=(K,))
    e_cur = E(x)
    history = [(0, e_cur, r0, 0.0)]
    if log:
        log(f"0 {e_cur:.12e} {r0:.3e} 0")
    status = ITERATION_LIMIT
    t_start = 1.0
    it = 0
    for it in range(1, options.max_refine_iterations + 1):
        _, gE = E.value_grad(x)
        J = _to_jacobian(ob.condition_jacobian(program, x, R.ws))
        d = projected_direction(gE, J, options.rank_tolerance)
        if not np.linalg.norm(d) > 0:
            status = STATIONARY
            break
        ls = quadratic_line_search(E, x, d, e_cur, t_start, options.max_line_search)
        if not ls.ok:
            status = STATIONARY
            break
        t = ls.step
        accepted = None
        restore_failed = False
        for _ in range(30):
            restored = bfgs_minimize(axpy(x, t, d), program, restore_opts)
            if restored.status == CONVERGED:
                e_new = E(restored.x)
                if e_new < e_cur:
                    accepted = (restored, e_new)
                    break
            else:
                restore_failed = True
            t *= 0.5
        if accepted is None:
            status = RESTORATION_FAILED if restore_failed else STATIONARY
            break
        restored, e_new = accepted
        improvement = (e_cur - e_new) / e_cur if e_cur > 0 else 0.0
        x, e_cur = restored.x, e_new
        t_start = t
        r_cur = restored.f
        history.append((it, e_cur, r_cur, t))
        if log:
            log(f"{it} {e_cur:.12e} {r_cur:.3e} {t:.3e}")
        if improvement < options.refine_tolerance:
            status = STATIONARY
            break
    else:
        it = options.max_refine_iterations
    return RefineResult(x, e_cur, R(x), status, it, history)


def _to_jacobian(J) -> np.ndarray:
    if isinstance(J, Expansion):
        return J.to_float()
    if J.dtype == object:
        return J.astype(float)
    return J


# -- batches -----------------------------------------------------------------

@dataclass
class Candidate:
    seed: int
    x: object
    f: float
    status: str
    iterations: int
    precision: int
    infeasible: bool = False
    barrier_defect: Optional[Fraction] = None


@lru_cache(maxsize=8)
def _cached_program(p: int, s: int, include_error_order: bool) -> EvaluationProgram:
    return build_program(p, s, include_error_order)


def _run_one(args):
    p, s, options, seed, x0, log_dir = args
    program = _cached_program(p, s, False)
    if x0 is None:
        x0 = ob.random_params(s, np.random.default_rng(seed))
    if log_dir is None:
        res = bfgs_minimize(x0, program, options)
    else:
        path = os.path.join(log_dir, f"seed-{seed}.log")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# iteration K f gradient_norm step_type\n")
            res = bfgs_minimize(x0, program, options, log=lambda line: fh.write(line + "\n"))
    return Candidate(seed, res.x, res.f, res.status, res.iterations, res.precision,
                     res.infeasible, res.barrier_defect)


def rank(results: list[Candidate]) -> list[Candidate]:
    """Ascending final objective; ties broken by seed."""
    return sorted(results, key=lambda c: (c.f, c.seed))


def _run_all(jobs, workers, on_result):
    out = []
    if workers <= 1 or len(jobs) <= 1:
        it = map(_run_one, jobs)
        for c in it:
            out.append(c)
            if on_result:
                on_result(c)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for c in pool.map(_run_one, jobs):  # yields in submission order
            out.append(c)
            if on_result:
                on_result(c)
    return out


def _workers(options: SearchOptions) -> int:
    return options.workers if options.workers > 0 else (os.cpu_count() or 1)


def search_batch(count: int, program: EvaluationProgram, options: SearchOptions = SearchOptions(),
                 on_result: Optional[Callable[[Candidate], None]] = None,
                 log_dir: Optional[str] = None) -> list[Candidate]:
    """``count`` independent searches seeded ``options.seed + i``, ranked.

    Each start is drawn i.i.d. uniform [0, 1) from ``numpy.random.default_rng``
    seeded with the candidate's seed, so the output does not depend on the
    number of workers. ``on_result`` sees each candidate as soon as it is
    available, in seed order.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    p, s = program.order, program.stage_count
    jobs = [(p, s, options, options.seed + i, None, log_dir) for i in range(count)]
    return rank(_run_all(jobs, _workers(options), on_result))


def promote(results: list[Candidate], fraction: float, program: EvaluationProgram,
            options: SearchOptions, on_result: Optional[Callable[[Candidate], None]] = None,
            log_dir: Optional[str] = None) -> list[Candidate]:
    """Re-run the best ``ceil(fraction * len(results))`` candidates with ``options``.

    ``options.precision`` is normally the next rung(s) of the ladder.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    top = rank(results)[: math.ceil(fraction * len(results))]
    p, s = program.order, program.stage_count
    jobs = [(p, s, options, c.seed, c.x, log_dir) for c in top]
    return rank(_run_all(jobs, _workers(options), on_result))
