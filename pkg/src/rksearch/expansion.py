"""Extended precision as non-overlapping expansions of binary64 limbs.

An ``Expansion`` holds an array of numbers, each represented by ``K`` float64
limbs (``2 <= K <= 8``) stored along the *last* axis, most significant first.
Adjacent limbs ``a, b`` satisfy ``a == fl(a + b)`` and zeros only appear as a
suffix. All arithmetic is branch-free over the value axes, so an objective
evaluated on arrays of expansions vectorizes like plain numpy code.

Round-to-nearest-even binary64 arithmetic is assumed throughout.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from numbers import Rational

import numpy as np

MIN_LIMBS, MAX_LIMBS = 2, 8
_SPLITTER = 134217729.0  # 2**27 + 1
_fma = getattr(math, "fma", None)


def _assert_round_to_nearest():
    # 1 + 2**-53 is a tie between 1 and 1 + 2**-52; nearest-even gives 1.
    tiny = 2.0 ** -53
    if 1.0 + tiny != 1.0 or 1.0 + 3 * tiny != 1.0 + 4 * tiny:
        raise RuntimeError("binary64 arithmetic is not round-to-nearest-even")


_assert_round_to_nearest()


# -- error-free transforms ---------------------------------------------------
# The underscored versions are pure arithmetic: they work on floats, numpy
# arrays, and inside numba-compiled kernels.

def _two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def _quick_two_sum(a, b):
    # requires |a| >= |b| or a == 0
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _check_finite(x, what="result"):
    if not np.all(np.isfinite(x)):
        raise OverflowError(f"{what} is not finite")


def two_sum(a, b):
    """Return ``(s, e)`` with ``s = fl(a + b)`` and ``s + e == a + b`` exactly."""
    s, e = _two_sum(a, b)
    _check_finite(s, "two_sum")
    return s, e


def two_prod(a, b):
    """Return ``(p, e)`` with ``p = fl(a * b)`` and ``p + e == a * b`` exactly.

    Uses a fused multiply-add for scalars when the interpreter provides one,
    Dekker splitting otherwise. Inputs must keep ``|a|, |b| < 2**996`` and the
    product must stay in the normal range.
    """
    if _fma is not None and isinstance(a, float) and isinstance(b, float):
        p = a * b
        _check_finite(p, "two_prod")
        return p, _fma(a, b, -p)
    p, e = _two_prod(a, b)
    _check_finite(p, "two_prod")
    return p, e


# -- renormalization ---------------------------------------------------------

def _fixup(limbs, K):
    # Pairwise two_sum sweeps: exact, restore a == fl(a + b), and bubble zeros down.
    for _ in range(K - 1):
        for i in range(K - 1):
            limbs[i], limbs[i + 1] = _two_sum(limbs[i], limbs[i + 1])
    return limbs


def _renormalize(terms: np.ndarray, K: int) -> np.ndarray:
    """Collapse ``terms`` (components along the last axis) to ``K`` limbs."""
    shape = terms.shape[:-1]
    n = terms.shape[-1]
    t = terms.reshape(-1, n)
    order = np.argsort(-np.abs(t), axis=1, kind="stable")
    t = np.take_along_axis(t, order, axis=1).T.copy()

    # bottom-up distillation: t[0] ends up holding the rounded total
    s = t[n - 1]
    for i in range(n - 2, -1, -1):
        s, t[i + 1] = _two_sum(t[i], s)
    t[0] = s

    # top-down emission of non-zero components
    cols = np.arange(t.shape[1])
    out = np.zeros((K + 1, t.shape[1]))
    k = np.zeros(t.shape[1], dtype=np.intp)
    s = t[0]
    for i in range(1, n):
        s, e = _two_sum(s, t[i])
        emit = e != 0.0
        out[k[emit], cols[emit]] = s[emit]
        s = np.where(emit, e, s)
        k = np.minimum(k + emit, K)
    out[k, cols] = s
    limbs = _fixup(list(out[:K]), K)
    return np.stack(limbs, axis=-1).reshape(shape + (K,))


# -- K = 2 kernels -----------------------------------------------------------

def _dd_add(ah, al, bh, bl):
    # (a + b) + (c + d) = a(+)c + [b(+)d(+)((a + c) - (a(+)c))], then renormalized
    s1, s2 = _two_sum(ah, bh)
    t1, t2 = _two_sum(al, bl)
    s2 = s2 + t1
    s1, s2 = _quick_two_sum(s1, s2)
    s2 = s2 + t2
    return _quick_two_sum(s1, s2)


def _dd_mul(ah, al, bh, bl):
    p, e = _two_prod(ah, bh)
    e = e + (ah * bl + al * bh)
    return _quick_two_sum(p, e)


# -- the Expansion type ------------------------------------------------------

def _check_k(K):
    if not isinstance(K, (int, np.integer)) or not MIN_LIMBS <= K <= MAX_LIMBS:
        raise ValueError(f"limb count must be in [{MIN_LIMBS}, {MAX_LIMBS}], got {K!r}")


class Expansion:
    """Array of K-limb floating-point expansions (limbs on the last axis)."""

    __slots__ = ("limbs",)
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, limbs):
        limbs = np.asarray(limbs, dtype=np.float64)
        _check_k(limbs.shape[-1] if limbs.ndim else 0)
        self.limbs = limbs

    # construction
    @classmethod
    def from_float(cls, value, K: int) -> "Expansion":
        _check_k(K)
        value = np.asarray(value, dtype=np.float64)
        limbs = np.zeros(value.shape + (K,))
        limbs[..., 0] = value
        return cls(limbs)

    @classmethod
    def zeros(cls, shape, K: int) -> "Expansion":
        _check_k(K)
        if isinstance(shape, int):
            shape = (shape,)
        return cls(np.zeros(tuple(shape) + (K,)))

    @classmethod
    def from_fraction(cls, value, K: int) -> "Expansion":
        """Round exact rationals (scalar or nested sequence) to K limbs."""
        _check_k(K)
        arr = np.asarray(value, dtype=object)
        flat = [_fraction_limbs(Fraction(v), K) for v in arr.reshape(-1)]
        limbs = np.array(flat, dtype=np.float64).reshape(arr.shape + (K,))
        return cls(limbs)

    @property
    def K(self) -> int:
        return self.limbs.shape[-1]

    @property
    def shape(self):
        return self.limbs.shape[:-1]

    @property
    def ndim(self):
        return self.limbs.ndim - 1

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        if self.ndim == 0:
            return f"Expansion({tuple(float(v) for v in self.limbs)})"
        return f"Expansion(shape={self.shape}, K={self.K})"

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        if Ellipsis not in key:
            key = key + (Ellipsis,)
        return Expansion(self.limbs[key + (slice(None),)])

    def __setitem__(self, key, value):
        if not isinstance(key, tuple):
            key = (key,)
        if Ellipsis not in key:
            key = key + (Ellipsis,)
        self.limbs[key + (slice(None),)] = self._coerce(value).limbs

    def copy(self):
        return Expansion(self.limbs.copy())

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Expansion(self.limbs.reshape(tuple(shape) + (self.K,)))

    @property
    def T(self):
        return Expansion(np.swapaxes(self.limbs, -2, -3))

    # conversion
    def to_fraction(self):
        """Exact value(s) as Fraction (scalar) or object array of Fractions."""
        flat = self.limbs.reshape(-1, self.K)
        vals = [sum((Fraction(float(v)) for v in row), Fraction(0)) for row in flat]
        if self.ndim == 0:
            return vals[0]
        out = np.empty(len(vals), dtype=object)
        out[:] = vals
        return out.reshape(self.shape)

    def to_float(self) -> np.ndarray:
        acc = self.limbs[..., -1]
        for i in range(self.K - 2, -1, -1):
            acc = self.limbs[..., i] + acc
        return acc

    def __float__(self):
        if self.ndim:
            raise TypeError("only scalar expansions convert to float")
        return float(self.to_float())

    @property
    def lead(self):
        return self.limbs[..., 0]

    def with_limbs(self, K: int) -> "Expansion":
        """Widen (zero-pad) or narrow (round) to K limbs."""
        _check_k(K)
        if K == self.K:
            return self
        if K > self.K:
            pad = np.zeros(self.shape + (K - self.K,))
            return Expansion(np.concatenate([self.limbs, pad], axis=-1))
        return Expansion(_renormalize(self.limbs, K))

    # arithmetic
    def _coerce(self, other) -> "Expansion":
        if isinstance(other, Expansion):
            if other.K != self.K:
                raise ValueError(f"limb count mismatch: {self.K} vs {other.K}")
            return other
        if isinstance(other, Fraction) or (isinstance(other, Rational) and not isinstance(other, int)):
            return Expansion.from_fraction(other, self.K)
        if isinstance(other, int) and abs(other) > 2 ** 53:
            return Expansion.from_fraction(Fraction(other), self.K)
        return Expansion.from_float(other, self.K)

    def __neg__(self):
        return Expansion(-self.limbs)

    def __pos__(self):
        return self

    def __add__(self, other):
        other = self._coerce(other)
        x, y = np.broadcast_arrays(self.limbs, other.limbs)
        if self.K == 2:
            h, l = _dd_add(x[..., 0], x[..., 1], y[..., 0], y[..., 1])
            _check_finite(h)
            return Expansion(np.stack([h, l], axis=-1))
        out = _renormalize(np.concatenate([x, y], axis=-1), self.K)
        _check_finite(out[..., 0])
        return Expansion(out)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        x, y = np.broadcast_arrays(self.limbs, other.limbs)
        K = self.K
        if K == 2:
            h, l = _dd_mul(x[..., 0], x[..., 1], y[..., 0], y[..., 1])
            _check_finite(h)
            return Expansion(np.stack([h, l], axis=-1))
        terms = []
        for i in range(K):
            for j in range(K - i):
                p, e = _two_prod(x[..., i], y[..., j])
                terms.append(p)
                terms.append(e)
        for i in range(1, K):
            terms.append(x[..., i] * y[..., K - i])
        out = _renormalize(np.stack(terms, axis=-1), K)
        _check_finite(out[..., 0])
        return Expansion(out)

    __rmul__ = __mul__

    def reciprocal(self) -> "Expansion":
        """``1/x`` by Newton iteration from a binary64 seed."""
        if np.any(self.lead == 0.0):
            raise ZeroDivisionError("expansion division by zero")
        one = Expansion.from_float(np.ones(self.shape), self.K)
        z = Expansion.from_float(1.0 / self.lead, self.K)
        for _ in range(_newton_steps(self.K)):
            z = z + z * (one - self * z)
        return z

    def __truediv__(self, other):
        other = self._coerce(other)
        z = other.reciprocal()
        q = self * z
        return q + z * (self - other * q)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def sqrt(self) -> "Expansion":
        """Square root by Newton iteration on ``1/sqrt(x)``."""
        if np.any(self.lead < 0.0):
            raise ValueError("square root of a negative expansion")
        zero = self.lead == 0.0
        safe = Expansion(np.where(zero[..., None], 1.0, self.limbs))
        one = Expansion.from_float(np.ones(self.shape), self.K)
        z = Expansion.from_float(1.0 / np.sqrt(safe.lead), self.K)
        for _ in range(_newton_steps(self.K)):
            z = z + (z * (one - safe * z * z)) * 0.5
        r = safe * z
        r = r + (z * (safe - r * r)) * 0.5
        return Expansion(np.where(zero[..., None], 0.0, r.limbs))

    def __abs__(self):
        return Expansion(np.where((self.lead < 0.0)[..., None], -self.limbs, self.limbs))

    # comparisons via the sign of the difference (lead limb carries the sign)
    def _cmp(self, other):
        return (self - self._coerce(other)).lead

    def __lt__(self, other):
        return self._cmp(other) < 0.0

    def __le__(self, other):
        return self._cmp(other) <= 0.0

    def __gt__(self, other):
        return self._cmp(other) > 0.0

    def __ge__(self, other):
        return self._cmp(other) >= 0.0

    def __eq__(self, other):
        if not isinstance(other, (Expansion, float, int, Fraction)):
            return NotImplemented
        return np.all(self.limbs == self._coerce(other).limbs, axis=-1)

    __hash__ = None

    # reductions
    def sum(self, axis=-1) -> "Expansion":
        """Pairwise sum along a value axis."""
        if self.ndim == 0:
            return self
        axis = axis % self.ndim
        x = np.moveaxis(self.limbs, axis, 0)
        if x.shape[0] == 0:
            return Expansion(np.zeros(x.shape[1:]))
        while x.shape[0] > 1:
            n = x.shape[0]
            half = n // 2
            a = Expansion(x[:half])
            b = Expansion(x[half:2 * half])
            merged = (a + b).limbs
            if n % 2:
                merged = np.concatenate([merged, x[2 * half:]], axis=0)
            x = merged
        return Expansion(x[0])

    def matvec(self, v: "Expansion") -> "Expansion":
        """Batched ``M @ v`` with M of shape (..., r, c) and v of shape (..., c)."""
        return (self * v[..., None, :]).sum(-1)


def _newton_steps(K):
    # each step doubles the number of correct bits, starting from ~53
    return max(1, math.ceil(math.log2(K)))


def _fraction_limbs(q: Fraction, K: int) -> list[float]:
    limbs = []
    r = q
    for _ in range(K):
        f = float(r)  # int/int true division rounds correctly
        limbs.append(f)
        r -= Fraction(f)
    return [float(v) for v in _fixup(limbs, K)]


def stack(items, K=None) -> Expansion:
    return Expansion(np.stack([it.limbs for it in items], axis=-2))


def exp_add(x: Expansion, y: Expansion) -> Expansion:
    return x + y


def exp_sub(x: Expansion, y: Expansion) -> Expansion:
    return x - y


def exp_mul(x: Expansion, y: Expansion) -> Expansion:
    return x * y


def exp_div(x: Expansion, y: Expansion) -> Expansion:
    return x / y


def exp_sqrt(x: Expansion) -> Expansion:
    return x.sqrt()


def is_nonoverlapping(limbs) -> bool:
    """Check ``a == fl(a + b)`` for adjacent limbs and zeros only as a suffix."""
    limbs = [float(v) for v in limbs]
    for a, b in zip(limbs, limbs[1:]):
        if a + b != a:
            return False
        if a == 0.0 and b != 0.0:
            return False
    return True


# -- decimal text ------------------------------------------------------------

class DecimalParseError(ValueError):
    def __init__(self, text, position, message):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


_DECIMAL = re.compile(r"\s*([+-])?(\d*)(?:\.(\d*))?(?:[eE]([+-]?\d+))?\s*")


def parse_decimal(text: str) -> Fraction:
    """Exact value of an optionally signed decimal with fraction and exponent."""
    m = _DECIMAL.match(text)
    end = m.end() if m else 0
    if m is None or end != len(text) or not (m.group(2) or m.group(3)):
        # report the first character the grammar could not consume
        pos = end
        if m is not None and not (m.group(2) or m.group(3)):
            pos = m.start(2)
        raise DecimalParseError(text, pos, "malformed decimal")
    sign, whole, frac, exp = m.groups()
    frac = frac or ""
    digits = int((whole or "0") + frac)
    scale = int(exp or 0) - len(frac)
    value = Fraction(digits) * Fraction(10) ** scale
    return -value if sign == "-" else value


def from_decimal(text: str, K: int) -> Expansion:
    """Correctly rounded K-limb expansion of a decimal string."""
    return Expansion.from_fraction(parse_decimal(text), K)


def format_fraction(q: Fraction, digits: int, fixed_range=(-3, 4)) -> str:
    """Signed decimal with ``digits`` significant digits, rounded half-even."""
    if digits < 1:
        raise ValueError("digits must be positive")
    sign = "-" if q < 0 else "+"
    q = abs(q)
    if q == 0:
        return "+0." + "0" * (digits - 1) if digits > 1 else "+0"
    num, den = q.numerator, q.denominator
    e10 = len(str(num)) - len(str(den))
    # fix e10 so that 10**e10 <= q < 10**(e10 + 1)
    if Fraction(10) ** e10 > q:
        e10 -= 1
    if Fraction(10) ** (e10 + 1) <= q:
        e10 += 1
    n = _round_half_even(q * Fraction(10) ** (digits - 1 - e10))
    if n == 10 ** digits:
        n //= 10
        e10 += 1
    mant = str(n)
    lo, hi = fixed_range
    if lo <= e10 < hi:
        if e10 >= 0:
            whole, frac = mant[: e10 + 1], mant[e10 + 1:]
            whole = whole + "0" * (e10 + 1 - len(whole))
        else:
            whole, frac = "0", "0" * (-e10 - 1) + mant
        return sign + whole + ("." + frac if frac else "")
    body = mant[0] + ("." + mant[1:] if len(mant) > 1 else "")
    return f"{sign}{body}e{e10:+d}"


def _round_half_even(q: Fraction) -> int:
    fl, rem = divmod(q.numerator, q.denominator)
    twice = 2 * rem
    if twice > q.denominator or (twice == q.denominator and fl % 2 == 1):
        fl += 1
    return fl


def to_decimal(x: Expansion, digits: int) -> str:
    if x.ndim:
        raise TypeError("to_decimal expects a scalar expansion")
    return format_fraction(x.to_fraction(), digits)


def roundtrip_digits(K: int) -> int:
    """Decimal digits that survive a text -> K limbs -> text round trip."""
    return int(math.floor((53 * K - 2) * math.log10(2)))
