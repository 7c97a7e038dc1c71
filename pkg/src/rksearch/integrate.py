"""Fixed-step integration, empirical convergence order and work-precision data."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .tableau import Tableau, write_text_atomic


class IntegrationError(ArithmeticError):
    def __init__(self, t, y, message="right-hand side returned a non-finite value"):
        self.t = t
        self.y = y
        super().__init__(f"{message} at t={t}")


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class IvpProblem:
    f: Callable  # f(t, y) -> array
    t0: float
    y0: tuple
    exact: Optional[Callable] = None  # exact(t) -> array
    name: str = ""

    @property
    def dimension(self) -> int:
        return len(self.y0)


@dataclass(frozen=True)
class WorkPrecisionRecord:
    method: str
    h: float
    fevals: int
    error: float
    digits: float


# Coefficients are converted once per (tableau, scalar type).
_NUMERIC_CACHE: dict = {}


def _coefficients(tab: Tableau, convert):
    key = (id(tab), convert)
    hit = _NUMERIC_CACHE.get(key)
    if hit is None or hit[0] is not tab:
        if len(_NUMERIC_CACHE) > 256:
            _NUMERIC_CACHE.clear()
        A, b, c = tab.numeric(convert)
        # nonzero pattern, so sparse tableaus (extrapolation) stay cheap
        rows = [[(j, A[i, j]) for j in range(i) if tab.A[i][j] != 0] for i in range(tab.s)]
        nzb = [(i, b[i]) for i in range(tab.s) if tab.b[i] != 0]
        hit = (tab, rows, nzb, c)
        _NUMERIC_CACHE[key] = hit
    return hit[1], hit[2], hit[3]


def mpf(value):
    """``mpmath.mpf`` at the current working precision, also accepting ``Fraction``."""
    import mpmath

    if isinstance(value, Fraction):
        return mpmath.mpf(value.numerator) / value.denominator
    return mpmath.mpf(value)


def rk_step(tab: Tableau, prob: IvpProblem, t, y, h, convert=float):
    """One explicit step: exactly ``tab.s`` evaluations of ``prob.f``.

    ``convert`` maps exact coefficients to the working scalar (``float`` for
    binary64, ``mpf`` from this module for extended precision).
    """
    rows, nzb, c = _coefficients(tab, convert)
    k = []
    for i in range(tab.s):
        yi = y
        for j, a in rows[i]:
            yi = yi + (h * a) * k[j]
        fi = np.asarray(prob.f(t + c[i] * h, yi))
        if convert is float and not np.all(np.isfinite(fi)):
            raise IntegrationError(t, y)
        k.append(fi)
    out = y
    for i, bi in nzb:
        out = out + (h * bi) * k[i]
    return out


def _step_count(t0, t_end, h) -> int:
    span = Fraction(t_end) - Fraction(t0)
    n = span / Fraction(h)
    steps = round(n)
    if steps < 0 or abs(n - steps) > Fraction(1, 10**9) * max(1, abs(n)):
        raise ValueError(f"(t_end - t0)/h = {float(n)} is not a non-negative integer")
    return int(steps)


def integrate_fixed(tab: Tableau, prob: IvpProblem, h, t_end, convert=float):
    """Integrate from ``prob.t0`` to ``t_end`` with constant step ``h``.

    Returns ``(y, fevals)`` with ``fevals == tab.s * steps``.
    """
    steps = _step_count(prob.t0, t_end, h)
    dtype = np.float64 if convert is float else object
    y = np.array([convert(v) if convert is not float else float(v) for v in prob.y0], dtype=dtype)
    h = convert(h)
    t0 = convert(prob.t0)
    for n in range(steps):
        y = rk_step(tab, prob, t0 + n * h, y, h, convert)
    return y, tab.s * steps


def fehlberg_problem() -> IvpProblem:
    """y' = -2t y log z, z' = 2t z log y with y(0) = e, z(0) = 1.

    The exact solution is ``(exp(cos t^2), exp(sin t^2))``. The right-hand side
    uses ``numpy`` for float input and ``mpmath`` for anything else.
    """

    def f(t, u):
        y, z = u[0], u[1]
        if isinstance(y, (float, np.floating)):
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.array([-2.0 * t * y * np.log(z), 2.0 * t * z * np.log(y)])
        import mpmath

        if not (y > 0 and z > 0):  # the logs leave the reals; mirror the float NaN path
            raise IntegrationError(t, u)
        return np.array([-2 * t * y * mpmath.log(z), 2 * t * z * mpmath.log(y)], dtype=object)

    def exact(t):
        if isinstance(t, (int, float, np.floating)):
            return np.array([math.exp(math.cos(t * t)), math.exp(math.sin(t * t))])
        import mpmath

        return np.array([mpmath.exp(mpmath.cos(t * t)), mpmath.exp(mpmath.sin(t * t))], dtype=object)

    return IvpProblem(f=f, t0=0.0, y0=(math.e, 1.0), exact=exact, name="fehlberg")


def _error_norm(y, ref) -> float:
    d = [float(a - b) for a, b in zip(y, ref)]
    return math.sqrt(sum(v * v for v in d))


def empirical_order(tab: Tableau, prob: IvpProblem, h_list: Sequence[float], t_end: float = 5.0,
                    floor: float | None = None) -> float:
    """Least-squares slope of log(global error) against log(h).

    Errors below ``floor`` (default 100 times the binary64 unit round-off
    times the solution size) are dropped; fewer than 3 remaining points is an
    error.
    """
    if prob.exact is None:
        raise ValueError("empirical order needs a problem with an exact solution")
    ref = prob.exact(t_end)
    if floor is None:
        floor = 100 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(np.asarray(ref, dtype=float)))))
    hs, errs = [], []
    for h in h_list:
        y, _ = integrate_fixed(tab, prob, h, t_end)
        err = _error_norm(y, ref)
        if err > floor and math.isfinite(err):
            hs.append(h)
            errs.append(err)
    if len(hs) < 3:
        raise InsufficientDataError(f"only {len(hs)} usable error values above {floor:.1e}")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def default_h_grid(t_end: float = 5.0, kmin: int = 4, kmax: int = 14) -> list[float]:
    return [t_end / 2 ** k for k in range(kmin, kmax + 1)]


def work_precision(tabs: Sequence[Tableau], prob: IvpProblem, h_grid, t_end: float = 5.0,
                   convert=float, max_digits: float | None = None) -> list[WorkPrecisionRecord]:
    """One record per (method, h); ``h_grid`` is a list or a dict keyed by method name.

    Correct digits are ``-log10(error)``, saturating at ``max_digits`` (the
    working precision's decimal digits) when the error is zero or smaller.
    """
    if prob.exact is None:
        raise ValueError("work-precision data needs an exact solution")
    if max_digits is None:
        max_digits = 15.95 if convert is float else 32.0
    ref = prob.exact(convert(t_end) if convert is not float else t_end)
    out = []
    for tab in tabs:
        grid = h_grid[tab.name] if isinstance(h_grid, dict) else h_grid
        for h in grid:
            steps = _step_count(prob.t0, t_end, h)
            try:
                y, fevals = integrate_fixed(tab, prob, h, t_end, convert)
                err = _error_norm(y, ref)
                if not math.isfinite(err):
                    err = math.inf
            except (IntegrationError, OverflowError, ValueError, ZeroDivisionError):
                err, fevals = math.inf, tab.s * steps
            if err == math.inf:
                digits = -math.inf
            elif err <= 10.0 ** -max_digits:
                digits = max_digits
            else:
                digits = -math.log10(err)
            out.append(WorkPrecisionRecord(tab.name, float(h), fevals, err, digits))
    return out


CSV_HEADER = ("method", "h", "fevals", "error", "digits")


def records_to_csv(records: Sequence[WorkPrecisionRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.method, repr(r.h), r.fevals, repr(r.error), f"{r.digits:.4f}"])
    return buf.getvalue()


def write_csv(path, records: Sequence[WorkPrecisionRecord]):
    write_text_atomic(path, records_to_csv(records))


def read_csv(text: str) -> list[WorkPrecisionRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"expected header {','.join(CSV_HEADER)}")
    return [WorkPrecisionRecord(m, float(h), int(fe), float(e), float(d)) for m, h, fe, e, d in rows[1:]]
