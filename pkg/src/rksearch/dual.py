"""Dual numbers ``a + b*delta`` with ``delta**2 == 0``.

The parts may be any scalar type with ``+``, ``-``, ``*`` (floats, Fractions,
``Expansion``) or numpy arrays of them. Array parts broadcast, so a dual part
with an extra leading axis carries several tangent directions at once while
the real part is computed a single time.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .expansion import Expansion


class Dual:
    __slots__ = ("re", "du")
    __array_ufunc__ = None

    def __init__(self, re, du=0):
        self.re = re
        self.du = du

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.du + other.du)
        return Dual(self.re + other, self.du)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.du - other.du)
        return Dual(self.re - other, self.du)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.du + self.du * other.re)
        return Dual(self.re * other, self.du * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.re / other.re
            return Dual(q, (self.du * other.re - self.re * other.du) / (other.re * other.re))
        return Dual(self.re / other, self.du / other)

    def __rtruediv__(self, other):
        return Dual(other) / self

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Dual(self.re * 0 + 1, self.du * 0)
        for _ in range(n):
            out = out * self
        return out

    def __getitem__(self, key):
        du = self.du
        if isinstance(du, (np.ndarray, Expansion)) and getattr(du, "ndim", 0) > _ndim(self.re):
            # leading axes of du index tangent directions
            extra = du.ndim - _ndim(self.re)
            key = key if isinstance(key, tuple) else (key,)
            du = du[(slice(None),) * extra + key]
        elif isinstance(du, (np.ndarray, Expansion)):
            du = du[key]
        return Dual(self.re[key], du)

    def sum(self, axis=-1):
        return Dual(vsum(self.re, axis), vsum(self.du, axis))


def _ndim(x):
    return getattr(x, "ndim", 0)


def vsum(x, axis=-1):
    if isinstance(x, (int, float)):
        return x
    return x.sum(axis=axis)


def matvec(M, v):
    """Batched ``M @ v``: M has shape (..., r, c), v has shape (..., c)."""
    if isinstance(M, Dual) or isinstance(v, Dual):
        Mre, Mdu = (M.re, M.du) if isinstance(M, Dual) else (M, None)
        vre, vdu = (v.re, v.du) if isinstance(v, Dual) else (v, None)
        re = matvec(Mre, vre)
        du = None
        if Mdu is not None and not _is_zero(Mdu):
            du = matvec(Mdu, vre)
        if vdu is not None and not _is_zero(vdu):
            t = matvec(Mre, vdu)
            du = t if du is None else du + t
        return Dual(re, 0 if du is None else du)
    if isinstance(M, Expansion):
        if not isinstance(v, Expansion):
            v = M._coerce(v)
        return M.matvec(v)
    if isinstance(v, Expansion):
        return v._coerce(M).matvec(v)
    M = np.asarray(M)
    v = np.asarray(v)
    return (M * v[..., None, :]).sum(axis=-1)


def _is_zero(x):
    return isinstance(x, int) and x == 0


def dual_add(x: Dual, y) -> Dual:
    return x + y


def dual_mul(x: Dual, y) -> Dual:
    return x * y


def dual_scale(x: Dual, c) -> Dual:
    return Dual(x.re * c, x.du * c)


def gradient(f: Callable[[Sequence[Dual]], Dual], x: Sequence, out=None):
    """Gradient of ``f`` at ``x`` by seeding ``x + e_i * delta`` for each i.

    ``f`` takes a list of duals and returns a dual. Returns ``(value, grad)``
    where ``value`` is the real part shared by every seeded pass; ``grad`` is
    written into ``out`` when given.
    """
    n = len(x)
    if out is not None and len(out) != n:
        raise ValueError(f"gradient buffer has length {len(out)}, expected {n}")
    grad = out if out is not None else [None] * n
    value = None
    zero = x[0] * 0 if n else 0
    one = zero + 1
    for i in range(n):
        args = [Dual(xj, one if j == i else zero) for j, xj in enumerate(x)]
        r = f(args)
        if value is None:
            value = r.re
        grad[i] = r.du
    if value is None:
        value = f([]).re
    return value, grad
