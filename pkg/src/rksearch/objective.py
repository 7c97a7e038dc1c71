"""Residual and error objectives over a packed parameter vector.

A ParamVector holds the strictly-lower entries of A in row-major order
followed by the s entries of b; c = A @ 1 is never stored. Three scalar kinds
are accepted and determine the precision of every result:

* a float64 ``numpy`` array (plain binary64),
* an ``Expansion`` of K limbs,
* a sequence or object array of ``Fraction`` (exact; tests and ``check`` only).

The binary64 and K=2 cases run on compiled kernels; every other kind goes
through the generic interpreter, which is also the reference the kernels are
tested against.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .dual import Dual, matvec
from .expansion import Expansion
from .program import ELEMWISE, MATVEC, ONE, EvaluationProgram

F64, EXPANSION, EXACT = "f64", "expansion", "exact"


# -- parameter layout --------------------------------------------------------

def param_count(s: int) -> int:
    return s * (s + 1) // 2


def stages_from_count(n: int) -> int:
    s = int(round(((8 * n + 1) ** 0.5 - 1) / 2))
    if param_count(s) != n:
        raise ValueError(f"{n} is not a valid parameter count s(s+1)/2")
    return s


def _as_exact(x) -> np.ndarray:
    out = np.empty(len(x), dtype=object)
    out[:] = [Fraction(v) for v in x]
    return out


def kind_of(x) -> str:
    if isinstance(x, Expansion):
        return EXPANSION
    if isinstance(x, np.ndarray) and x.dtype == np.float64:
        return F64
    return EXACT


def pack(A, b):
    """Pack (A, b) into a ParamVector of the same scalar kind as the inputs."""
    if isinstance(A, Expansion) or isinstance(b, Expansion):
        s = len(b)
        rows, cols = np.tril_indices(s, -1)
        limbs = np.concatenate([A.limbs[rows, cols], b.limbs], axis=0)
        return Expansion(limbs)
    A = np.asarray(A)
    b = np.asarray(b)
    s = len(b)
    rows, cols = np.tril_indices(s, -1)
    if A.shape != (s, s):
        raise ValueError(f"A has shape {A.shape}, expected {(s, s)}")
    if A.dtype == object or b.dtype == object:
        return _as_exact(list(A[rows, cols]) + list(b))
    return np.concatenate([A[rows, cols], b]).astype(np.float64)


def unpack(x, s: int | None = None):
    """Inverse of ``pack``: returns (A, b) with A a dense s-by-s matrix."""
    n = len(x)
    s = stages_from_count(n) if s is None else s
    if param_count(s) != n:
        raise ValueError(f"ParamVector has length {n}, expected {param_count(s)} for s={s}")
    nA = n - s
    rows, cols = np.tril_indices(s, -1)
    if isinstance(x, Expansion):
        A = Expansion.zeros((s, s), x.K)
        A.limbs[rows, cols] = x.limbs[:nA]
        return A, x[nA:]
    if kind_of(x) == F64:
        A = np.zeros((s, s))
        A[rows, cols] = x[:nA]
        return A, x[nA:].copy()
    x = _as_exact(x)
    A = np.empty((s, s), dtype=object)
    A[:] = Fraction(0)
    A[rows, cols] = x[:nA]
    return A, x[nA:]


def convert(x, K: int | None):
    """Convert a ParamVector to binary64 (K=1), K limbs, or exact (K=None)."""
    if K is None:
        if isinstance(x, Expansion):
            return x.to_fraction()
        return _as_exact(x)
    if K == 1:
        if isinstance(x, Expansion):
            return x.to_float()
        return np.array([float(v) for v in x], dtype=np.float64)
    if isinstance(x, Expansion):
        return x.with_limbs(K)
    if kind_of(x) == F64:
        return Expansion.from_float(x, K)
    return Expansion.from_fraction(list(x), K)


def random_params(s: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform [0, 1) entries, the search's starting distribution."""
    return rng.random(param_count(s))


# -- workspace ---------------------------------------------------------------

class Workspace:
    """Preallocated buffers and the flattened instruction stream of a program.

    One workspace per thread. Contents carry no meaning between calls.
    """

    def __init__(self, program: EvaluationProgram):
        self.program = program
        regs = program.registers
        s = program.stage_count
        self.s = s
        self.n = param_count(s)
        self.nA = self.n - s
        i64 = lambda seq: np.array(list(seq), dtype=np.int64)  # noqa: E731
        self.kind = i64(r.kind for r in regs)
        self.src0 = i64(r.src[0] if r.src else -1 for r in regs)
        self.src1 = i64(r.src[1] if len(r.src) > 1 else -1 for r in regs)
        self.lz = i64(r.leading_zeros for r in regs)
        self.off = i64(r.offset for r in regs)
        self.stored = i64(r.stored for r in regs)
        rows, cols = np.tril_indices(s, -1)
        self.prow = rows.astype(np.int64)
        self.pcol = cols.astype(np.int64)
        self.tables = {}
        for name, conds, weighted in (("R", program.conditions, False),
                                      ("E", program.error_conditions, True)):
            rhs = [c.rhs for c in conds]
            w = [Fraction(1, c.symmetry) if weighted else Fraction(1) for c in conds]
            self.tables[name] = dict(
                creg=i64(c.register for c in conds),
                rhs_exact=rhs,
                w_exact=w,
                rhs=np.array([float(v) for v in rhs]),
                w=np.array([float(v) for v in w]),
                rhs_dd=Expansion.from_fraction(rhs, 2).limbs.reshape(-1, 2) if rhs else np.zeros((0, 2)),
                w_dd=Expansion.from_fraction(w, 2).limbs.reshape(-1, 2) if w else np.zeros((0, 2)),
            )
        L = max(program.buffer_size, 1)
        self.A = np.zeros((s, s))
        self.V = np.zeros(L)
        self.T = np.zeros((self.nA, L))
        self.A_lo = np.zeros((s, s))
        self.V_lo = np.zeros(L)
        self.T_lo = np.zeros((self.nA, L))
        self._bufs = {}

    def buffers(self, which: str):
        if which not in self._bufs:
            m = len(self.tables[which]["creg"])
            self._bufs[which] = dict(
                D=np.zeros(m), D_lo=np.zeros(m),
                J=np.zeros((m, self.n)), J_lo=np.zeros((m, self.n)),
                g=np.zeros(self.n), g_lo=np.zeros(self.n),
            )
        return self._bufs[which]


_DEFAULT_WS: dict[int, tuple[EvaluationProgram, Workspace]] = {}


def workspace_for(program: EvaluationProgram, ws: Workspace | None = None) -> Workspace:
    if ws is not None:
        if ws.program is not program:
            raise ValueError("workspace was built for a different program")
        return ws
    hit = _DEFAULT_WS.get(id(program))
    if hit is None or hit[0] is not program:
        if len(_DEFAULT_WS) > 64:
            _DEFAULT_WS.clear()
        hit = (program, Workspace(program))
        _DEFAULT_WS[id(program)] = hit
    return hit[1]


def _check(program: EvaluationProgram, x, which: str):
    n = len(x)
    if n != program.param_count:
        raise ValueError(
            f"ParamVector has length {n} but the program expects "
            f"{program.param_count} for s={program.stage_count}"
        )
    if which == "E" and not program.error_conditions:
        raise ValueError("program was built without the error order; use include_error_order=True")


# -- compiled path -----------------------------------------------------------

def _use_kernel(x) -> bool:
    k = kind_of(x)
    return k == F64 or (k == EXPANSION and x.K == 2)


def _kernel_eval(ws: Workspace, x, which: str, tangents: bool):
    """Run weights, defects and optionally the Jacobian; returns the buffer dict."""
    from . import _kernels as kn

    tab = ws.tables[which]
    buf = ws.buffers(which)
    nA = ws.nA
    if kind_of(x) == F64:
        ws.A[ws.prow, ws.pcol] = x[:nA]
        b = np.ascontiguousarray(x[nA:])
        kn.f64_weights(ws.kind, ws.src0, ws.src1, ws.lz, ws.off, ws.stored, ws.A, ws.V)
        kn.f64_defects(tab["creg"], tab["rhs"], ws.lz, ws.off, ws.stored, b, ws.V, buf["D"])
        if tangents:
            kn.f64_tangents(ws.kind, ws.src0, ws.src1, ws.lz, ws.off, ws.stored, ws.A, ws.V,
                            ws.prow, ws.pcol, ws.T)
            kn.f64_jacobian(tab["creg"], ws.lz, ws.off, ws.stored, b, ws.V, ws.T, buf["J"])
        return buf
    limbs = x.limbs
    ws.A[ws.prow, ws.pcol] = limbs[:nA, 0]
    ws.A_lo[ws.prow, ws.pcol] = limbs[:nA, 1]
    bh = np.ascontiguousarray(limbs[nA:, 0])
    bl = np.ascontiguousarray(limbs[nA:, 1])
    kn.dd_weights(ws.kind, ws.src0, ws.src1, ws.lz, ws.off, ws.stored, ws.A, ws.A_lo, ws.V, ws.V_lo)
    rhs = tab["rhs_dd"]
    kn.dd_defects(tab["creg"], np.ascontiguousarray(rhs[:, 0]), np.ascontiguousarray(rhs[:, 1]),
                  ws.lz, ws.off, ws.stored, bh, bl, ws.V, ws.V_lo, buf["D"], buf["D_lo"])
    if tangents:
        kn.dd_tangents(ws.kind, ws.src0, ws.src1, ws.lz, ws.off, ws.stored, ws.A, ws.A_lo,
                       ws.V, ws.V_lo, ws.prow, ws.pcol, ws.T, ws.T_lo)
        kn.dd_jacobian(tab["creg"], ws.lz, ws.off, ws.stored, bh, bl, ws.V, ws.V_lo,
                       ws.T, ws.T_lo, buf["J"], buf["J_lo"])
    return buf


def _kernel_value(ws, x, which, buf):
    from . import _kernels as kn

    tab = ws.tables[which]
    if kind_of(x) == F64:
        return float(kn.f64_value(buf["D"], tab["w"]))
    w = tab["w_dd"]
    h, l = kn.dd_value(buf["D"], buf["D_lo"], np.ascontiguousarray(w[:, 0]), np.ascontiguousarray(w[:, 1]))
    return Expansion(np.array([h, l]))


def _kernel_grad(ws, x, which, buf):
    from . import _kernels as kn

    tab = ws.tables[which]
    if kind_of(x) == F64:
        kn.f64_grad(buf["D"], tab["w"], buf["J"], buf["g"])
        return buf["g"].copy()
    w = tab["w_dd"]
    kn.dd_grad(buf["D"], buf["D_lo"], np.ascontiguousarray(w[:, 0]), np.ascontiguousarray(w[:, 1]),
               buf["J"], buf["J_lo"], buf["g"], buf["g_lo"])
    return Expansion(np.stack([buf["g"], buf["g_lo"]], axis=-1))


def _kernel_vector(x, hi, lo):
    if kind_of(x) == F64:
        return hi.copy()
    return Expansion(np.stack([hi, lo], axis=-1))


# -- generic interpreter -----------------------------------------------------

def _constants(x, values):
    """Convert exact rationals to the scalar kind of ``x``."""
    k = kind_of(x)
    if k == F64:
        return np.array([float(v) for v in values])
    if k == EXPANSION:
        if not values:
            return Expansion.zeros((0,), x.K)
        return Expansion.from_fraction(list(values), x.K)
    return _as_exact(values)


def _ones(x, n):
    return _constants(x, [Fraction(1)] * n)


def weights(program: EvaluationProgram, A, ones):
    """Stored suffix of every register's Butcher weight.

    ``A`` is a dense matrix of any scalar kind (or a Dual of one) and ``ones``
    the length-s all-ones vector of the matching kind.
    """
    regs = program.registers
    out = []
    for spec in regs:
        z = spec.leading_zeros
        if spec.kind == ONE:
            w = ones[z:]
        elif spec.kind == MATVEC:
            src = regs[spec.src[0]]
            w = matvec(A[z:, src.leading_zeros:], out[spec.src[0]])
        elif spec.kind == ELEMWISE:
            a, b = regs[spec.src[0]], regs[spec.src[1]]
            w = out[spec.src[0]][z - a.leading_zeros:] * out[spec.src[1]][z - b.leading_zeros:]
        else:
            raise ValueError(f"unknown instruction kind {spec.kind}")
        out.append(w)
    return out


def _dot(u, v):
    return (u * v).sum(-1)


def _stack(items):
    first = items[0]
    if isinstance(first, Dual):
        return Dual(_stack([d.re for d in items]), _stack([d.du for d in items]))
    if isinstance(first, Expansion):
        return Expansion(np.stack([d.limbs for d in items], axis=-2))
    if isinstance(first, np.ndarray):
        return np.stack(items, axis=-1)
    if isinstance(first, (float, np.floating)):
        return np.array(items, dtype=np.float64)
    out = np.empty(len(items), dtype=object)
    out[:] = items
    return out


def _generic_defects(program, x, which, seeded: bool):
    """Defect vector, as a Dual with one tangent row per parameter when seeded."""
    s = program.stage_count
    n = len(x)
    if kind_of(x) == EXACT:
        x = _as_exact(x)
    conds = program.conditions if which == "R" else program.error_conditions
    rhs = _constants(x, [c.rhs for c in conds])
    ones = _ones(x, s)
    if seeded:
        eye = _constants(x, [Fraction(int(i == j)) for i in range(n) for j in range(n)])
        eye = eye.reshape(n, n)
        xd = Dual(x, eye)
        Ad = _scatter(xd, s)
        bd = xd[n - s:]
        regs = weights(program, Ad, ones)
    else:
        A, bd = unpack(x, s)
        regs = weights(program, A, ones)
    if not conds:
        return None
    vals = []
    for c in conds:
        z = program.registers[c.register].leading_zeros
        vals.append(_dot(bd[z:], regs[c.register]))
    return _stack(vals) - rhs


def _scatter(xd: Dual, s: int) -> Dual:
    """Dense A from the leading entries of a seeded ParamVector."""
    rows, cols = np.tril_indices(s, -1)
    nA = len(rows)

    def place(v, lead):
        if isinstance(v, Expansion):
            out = Expansion.zeros(lead + (s, s), v.K)
            out.limbs[..., rows, cols, :] = v.limbs[..., :nA, :]
            return out
        out = np.zeros(lead + (s, s), dtype=v.dtype)
        if v.dtype == object:
            out[...] = Fraction(0)
        out[..., rows, cols] = v[..., :nA]
        return out

    n = len(xd.re)
    return Dual(place(xd.re, ()), place(xd.du, (n,)))


def _weights_vector(x, program, which):
    conds = program.conditions if which == "R" else program.error_conditions
    w = [Fraction(1, c.symmetry) if which == "E" else Fraction(1) for c in conds]
    return _constants(x, w)


def _sumsq(v):
    return (v * v).sum(-1)


# -- public operations -------------------------------------------------------

def _value(program, x, ws, which):
    _check(program, x, which)
    if _use_kernel(x):
        ws = workspace_for(program, ws)
        buf = _kernel_eval(ws, x, which, tangents=False)
        return _kernel_value(ws, x, which, buf)
    d = _generic_defects(program, x, which, seeded=False)
    if d is None:
        return _constants(x, [Fraction(0)])[0]
    return _sumsq(d * _weights_vector(x, program, which))


def _value_grad(program, x, ws, which):
    _check(program, x, which)
    if _use_kernel(x):
        ws = workspace_for(program, ws)
        buf = _kernel_eval(ws, x, which, tangents=True)
        return _kernel_value(ws, x, which, buf), _kernel_grad(ws, x, which, buf)
    d = _generic_defects(program, x, which, seeded=True)
    r = _sumsq(d * _weights_vector(x, program, which))
    return r.re, r.du


def residual(program: EvaluationProgram, x, ws: Workspace | None = None):
    """Sum of squared order-condition defects over all trees of order <= p."""
    return _value(program, x, ws, "R")


def error_norm(program: EvaluationProgram, x, ws: Workspace | None = None):
    """Sum over trees of order p+1 of ``(defect / sigma)**2``."""
    return _value(program, x, ws, "E")


def residual_gradient(program: EvaluationProgram, x, ws: Workspace | None = None):
    """``(R(x), grad R(x))`` by forward-mode seeding of every parameter."""
    return _value_grad(program, x, ws, "R")


def error_gradient(program: EvaluationProgram, x, ws: Workspace | None = None):
    return _value_grad(program, x, ws, "E")


def defects(program: EvaluationProgram, x, ws: Workspace | None = None, which: str = "R"):
    """Vector of ``b . Phi(t) - 1/t!`` in program condition order.

    ``which="E"`` gives the order-(p+1) defects (without the 1/sigma weights).
    """
    _check(program, x, which)
    if _use_kernel(x):
        ws = workspace_for(program, ws)
        buf = _kernel_eval(ws, x, which, tangents=False)
        return _kernel_vector(x, buf["D"], buf["D_lo"])
    return _generic_defects(program, x, which, seeded=False)


def condition_values(program: EvaluationProgram, x, ws: Workspace | None = None):
    """``[(tree, defect), ...]`` for every tree of order <= p."""
    d = defects(program, x, ws)
    return [(c.tree, d[i]) for i, c in enumerate(program.conditions)]


def condition_jacobian(program: EvaluationProgram, x, ws: Workspace | None = None, which: str = "R"):
    """Matrix of partial derivatives of each ``b . Phi(t)`` (conditions x parameters)."""
    _check(program, x, which)
    if _use_kernel(x):
        ws = workspace_for(program, ws)
        buf = _kernel_eval(ws, x, which, tangents=True)
        if kind_of(x) == F64:
            return buf["J"].copy()
        return Expansion(np.stack([buf["J"], buf["J_lo"]], axis=-1))
    d = _generic_defects(program, x, which, seeded=True)
    du = d.du
    return du.T


def principal_error_coefficients(program: EvaluationProgram, x, ws: Workspace | None = None):
    """``(1/sigma) * defect`` for every tree of order p+1."""
    d = defects(program, x, ws, which="E")
    return d * _weights_vector(x, program, "E")
