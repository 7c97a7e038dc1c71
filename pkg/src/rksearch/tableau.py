"""Explicit Runge-Kutta tableaus and their plain-text file format.

A file lists one coefficient per line: a name token ``a_{i,j}`` or ``b_{i}``
(1-based, ``j < i``), whitespace, then a signed decimal of any length::

    # name: rk4
    a_{2,1}  +0.5
    b_{1}    +0.1666666666666666666666666666666666666666666666666666666666666666666667

``#`` starts a comment, blank lines are ignored, entries may come in any
order. Missing ``a`` entries are zero; every ``b`` entry must be present. The
stage count is the largest index that appears.
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .expansion import DecimalParseError, Expansion, format_fraction, parse_decimal
from . import objective as ob

DEFAULT_DIGITS = 70


class TableauParseError(ValueError):
    def __init__(self, line: int, column: int, message: str, source: str = "<text>"):
        self.line = line
        self.column = column
        self.source = source
        super().__init__(f"{source}:{line}:{column}: {message}")


@dataclass(frozen=True)
class Tableau:
    """Coefficients are stored exactly (``Fraction``); c is always ``A @ 1``."""

    A: tuple[tuple[Fraction, ...], ...]
    b: tuple[Fraction, ...]
    name: str = ""

    def __post_init__(self):
        s = len(self.b)
        if s < 1:
            raise ValueError("a tableau needs at least one stage")
        A = tuple(tuple(Fraction(v) for v in row) for row in self.A)
        if len(A) != s or any(len(row) != s for row in A):
            raise ValueError(f"A must be {s}x{s}")
        for i in range(s):
            for j in range(i, s):
                if A[i][j] != 0:
                    raise ValueError(f"A is not strictly lower triangular: a_{{{i + 1},{j + 1}}} = {A[i][j]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", tuple(Fraction(v) for v in self.b))

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def c(self) -> tuple[Fraction, ...]:
        return tuple(sum(row, Fraction(0)) for row in self.A)

    def params(self, K: int | None = None):
        """ParamVector at K limbs (1 = binary64, None = exact)."""
        x = ob.pack(np.array(self.A, dtype=object), np.array(self.b, dtype=object))
        return x if K is None else ob.convert(x, K)

    @classmethod
    def from_params(cls, x, name: str = "") -> "Tableau":
        """Exact tableau of a ParamVector of any scalar kind."""
        xe = ob.convert(x, None)
        A, b = ob.unpack(xe)
        return cls(tuple(tuple(r) for r in A), tuple(b), name)

    def numeric(self, convert=float):
        """(A, b, c) as numpy arrays of ``convert(Fraction)`` values."""
        dtype = np.float64 if convert is float else object
        A = np.array([[convert(v) for v in row] for row in self.A], dtype=dtype)
        b = np.array([convert(v) for v in self.b], dtype=dtype)
        c = np.array([convert(v) for v in self.c], dtype=dtype)
        return A, b, c


# -- built-in methods --------------------------------------------------------

def _tab(name, rows, b):
    s = len(b)
    A = [[Fraction(0)] * s for _ in range(s)]
    for i, row in enumerate(rows, start=1):
        for j, v in enumerate(row):
            A[i][j] = Fraction(v)
    return Tableau(tuple(tuple(r) for r in A), tuple(Fraction(v) for v in b), name)


F = Fraction
BUILTINS = {
    "euler": _tab("euler", [], [1]),
    "midpoint": _tab("midpoint", [[F(1, 2)]], [0, 1]),
    "heun": _tab("heun", [[1]], [F(1, 2), F(1, 2)]),
    "ralston": _tab("ralston", [[F(2, 3)]], [F(1, 4), F(3, 4)]),
    "rk4": _tab("rk4", [[F(1, 2)], [0, F(1, 2)], [0, 0, 1]], [F(1, 6), F(1, 3), F(1, 3), F(1, 6)]),
}
del F


def builtin(name: str) -> Tableau:
    """Look up ``euler``, ``midpoint``, ``heun``, ``ralston``, ``rk4`` or ``euler-extrapolated:p``."""
    if name in BUILTINS:
        return BUILTINS[name]
    m = re.fullmatch(r"euler-extrapolated:(\d+)", name)
    if m:
        from .verify import extrapolated_euler

        return extrapolated_euler(int(m.group(1)))
    raise KeyError(f"unknown built-in method {name!r}; known: {', '.join(BUILTINS)}, euler-extrapolated:p")


# -- text format -------------------------------------------------------------

_NAME = re.compile(r"(a)_\{\s*(\d+)\s*,\s*(\d+)\s*\}|(b)_\{\s*(\d+)\s*\}")


def parse_tableau(text: str, name: str = "", source: str = "<text>") -> Tableau:
    a_entries: dict[tuple[int, int], Fraction] = {}
    b_entries: dict[int, Fraction] = {}
    first_seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if raw.lstrip().startswith("#"):
            m = re.match(r"\s*#\s*name:\s*(.*?)\s*$", raw)
            if m and not name:
                name = m.group(1)
            continue
        if not body.strip():
            continue
        col = len(body) - len(body.lstrip()) + 1
        stripped = body.strip()
        m = _NAME.match(stripped)
        if not m:
            raise TableauParseError(lineno, col, "expected a coefficient name a_{i,j} or b_{i}", source)
        rest = stripped[m.end():]
        if not rest[:1].isspace():
            raise TableauParseError(lineno, col + m.end(), "expected whitespace after the coefficient name", source)
        value_text = rest.strip()
        value_col = col + m.end() + (len(rest) - len(rest.lstrip()))
        try:
            value = parse_decimal(value_text.replace("−", "-"))
        except DecimalParseError as err:
            raise TableauParseError(lineno, value_col + err.position, "malformed decimal", source) from None
        if m.group(1):
            i, j = int(m.group(2)), int(m.group(3))
            if not 1 <= j < i:
                raise TableauParseError(lineno, col, f"a_{{{i},{j}}} is not strictly below the diagonal", source)
            key = ("a", i, j)
            a_entries[(i, j)] = value
        else:
            i = int(m.group(5))
            if i < 1:
                raise TableauParseError(lineno, col, "stage indices start at 1", source)
            key = ("b", i)
            b_entries[i] = value
        if key in first_seen:
            raise TableauParseError(lineno, col, f"duplicate entry (first on line {first_seen[key]})", source)
        first_seen[key] = lineno
    if not b_entries:
        raise TableauParseError(max(1, len(text.splitlines())), 1, "no b_{i} entries", source)
    s = max([i for i in b_entries] + [i for i, _ in a_entries])
    missing = [i for i in range(1, s + 1) if i not in b_entries]
    if missing:
        raise TableauParseError(max(1, len(text.splitlines())), 1,
                                f"missing b entries: {', '.join(f'b_{{{i}}}' for i in missing)}", source)
    A = [[Fraction(0)] * s for _ in range(s)]
    for (i, j), v in a_entries.items():
        A[i - 1][j - 1] = v
    return Tableau(tuple(tuple(r) for r in A), tuple(b_entries[i] for i in range(1, s + 1)), name)


def format_coefficient(q: Fraction, digits: int = DEFAULT_DIGITS) -> str:
    """Fixed-point signed decimal; exact when ``q`` has at most ``digits`` significant digits."""
    if q == 0:
        return "+0"
    text = format_fraction(Fraction(q), digits, fixed_range=(-10**9, 10**9))
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def format_tableau(tab: Tableau, digits: int = DEFAULT_DIGITS) -> str:
    """Canonical text: name comment, nonzero a entries row by row, then all b."""
    lines = []
    if tab.name:
        lines.append(f"# name: {tab.name}")
    lines.append(f"# stages: {tab.s}")
    for i in range(tab.s):
        for j in range(i):
            v = tab.A[i][j]
            if v != 0:
                lines.append(f"a_{{{i + 1},{j + 1}}}\t{format_coefficient(v, digits)}")
    for i, v in enumerate(tab.b):
        lines.append(f"b_{{{i + 1}}}\t{format_coefficient(v, digits)}")
    return "\n".join(lines) + "\n"


def read_tableau(path, name: str = "") -> Tableau:
    path = Path(path)
    return parse_tableau(path.read_text(encoding="utf-8"), name=name, source=str(path))


def write_text_atomic(path, text: str):
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_tableau(path, tab: Tableau, digits: int = DEFAULT_DIGITS):
    write_text_atomic(path, format_tableau(tab, digits))

