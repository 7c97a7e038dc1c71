"""Compiled binary64 and double-double interpreters for an EvaluationProgram.

These execute the same instruction stream as the generic interpreter in
``objective`` but over flat preallocated buffers. Tangents are carried for the
strictly-lower entries of A only (the b entries enter the defects linearly),
one row per seed direction, with the real part evaluated once.
"""

import numpy as np
from numba import njit

# Same error-free transforms as ``expansion``; restated here because numba
# cannot resolve the module-level helpers those reference.

_SPLITTER = 134217729.0  # 2**27 + 1


@njit(cache=True, inline="always")
def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


@njit(cache=True, inline="always")
def two_prod(a, b):
    p = a * b
    t = _SPLITTER * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLITTER * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def dd_add(ah, al, bh, bl):
    s1, s2 = two_sum(ah, bh)
    t1, t2 = two_sum(al, bl)
    s2 = s2 + t1
    s1, s2 = quick_two_sum(s1, s2)
    s2 = s2 + t2
    return quick_two_sum(s1, s2)


@njit(cache=True, inline="always")
def dd_mul(ah, al, bh, bl):
    p, e = two_prod(ah, bh)
    e = e + (ah * bl + al * bh)
    return quick_two_sum(p, e)


# -- binary64 ----------------------------------------------------------------

@njit(cache=True)
def f64_weights(kind, src0, src1, lz, off, stored, A, V):
    for r in range(kind.shape[0]):
        o = off[r]
        z = lz[r]
        if kind[r] == 0:
            for ii in range(stored[r]):
                V[o + ii] = 1.0
        elif kind[r] == 1:
            q = src0[r]
            oq = off[q]
            zq = lz[q]
            for ii in range(stored[r]):
                i = z + ii
                acc = 0.0
                for j in range(zq, i):
                    acc += A[i, j] * V[oq + j - zq]
                V[o + ii] = acc
        else:
            a = src0[r]
            b = src1[r]
            oa = off[a] - lz[a]
            ob = off[b] - lz[b]
            for ii in range(stored[r]):
                i = z + ii
                V[o + ii] = V[oa + i] * V[ob + i]


@njit(cache=True)
def f64_tangents(kind, src0, src1, lz, off, stored, A, V, prow, pcol, T):
    nA = prow.shape[0]
    for r in range(kind.shape[0]):
        o = off[r]
        z = lz[r]
        if kind[r] == 0:
            for k in range(nA):
                for ii in range(stored[r]):
                    T[k, o + ii] = 0.0
        elif kind[r] == 1:
            q = src0[r]
            oq = off[q]
            zq = lz[q]
            for ii in range(stored[r]):
                i = z + ii
                kmax = i * (i + 1) // 2  # only rows <= i influence entry i
                for k in range(nA):
                    if k >= kmax:
                        T[k, o + ii] = 0.0
                        continue
                    acc = 0.0
                    for j in range(zq, i):
                        acc += A[i, j] * T[k, oq + j - zq]
                    if prow[k] == i and pcol[k] >= zq:
                        acc += V[oq + pcol[k] - zq]
                    T[k, o + ii] = acc
        else:
            a = src0[r]
            b = src1[r]
            oa = off[a] - lz[a]
            ob = off[b] - lz[b]
            for ii in range(stored[r]):
                i = z + ii
                for k in range(nA):
                    T[k, o + ii] = T[k, oa + i] * V[ob + i] + V[oa + i] * T[k, ob + i]


@njit(cache=True)
def f64_defects(creg, rhs, lz, off, stored, bvec, V, D):
    for c in range(creg.shape[0]):
        r = creg[c]
        o = off[r]
        z = lz[r]
        acc = 0.0
        for ii in range(stored[r]):
            acc += bvec[z + ii] * V[o + ii]
        D[c] = acc - rhs[c]


@njit(cache=True)
def f64_jacobian(creg, lz, off, stored, bvec, V, T, J):
    nA = T.shape[0]
    for c in range(creg.shape[0]):
        r = creg[c]
        o = off[r]
        z = lz[r]
        for k in range(J.shape[1]):
            J[c, k] = 0.0
        for k in range(nA):
            acc = 0.0
            for ii in range(stored[r]):
                acc += bvec[z + ii] * T[k, o + ii]
            J[c, k] = acc
        for ii in range(stored[r]):
            J[c, nA + z + ii] = V[o + ii]


@njit(cache=True)
def f64_value(D, w):
    acc = 0.0
    for c in range(D.shape[0]):
        t = w[c] * D[c]
        acc += t * t
    return acc


@njit(cache=True)
def f64_grad(D, w, J, g):
    for k in range(J.shape[1]):
        acc = 0.0
        for c in range(D.shape[0]):
            acc += w[c] * w[c] * D[c] * J[c, k]
        g[k] = 2.0 * acc


# -- double-double -----------------------------------------------------------

@njit(cache=True)
def dd_weights(kind, src0, src1, lz, off, stored, Ah, Al, Vh, Vl):
    for r in range(kind.shape[0]):
        o = off[r]
        z = lz[r]
        if kind[r] == 0:
            for ii in range(stored[r]):
                Vh[o + ii] = 1.0
                Vl[o + ii] = 0.0
        elif kind[r] == 1:
            q = src0[r]
            oq = off[q]
            zq = lz[q]
            for ii in range(stored[r]):
                i = z + ii
                sh = 0.0
                sl = 0.0
                for j in range(zq, i):
                    ph, pl = dd_mul(Ah[i, j], Al[i, j], Vh[oq + j - zq], Vl[oq + j - zq])
                    sh, sl = dd_add(sh, sl, ph, pl)
                Vh[o + ii] = sh
                Vl[o + ii] = sl
        else:
            a = src0[r]
            b = src1[r]
            oa = off[a] - lz[a]
            ob = off[b] - lz[b]
            for ii in range(stored[r]):
                i = z + ii
                h, l = dd_mul(Vh[oa + i], Vl[oa + i], Vh[ob + i], Vl[ob + i])
                Vh[o + ii] = h
                Vl[o + ii] = l


@njit(cache=True)
def dd_tangents(kind, src0, src1, lz, off, stored, Ah, Al, Vh, Vl, prow, pcol, Th, Tl):
    nA = prow.shape[0]
    for r in range(kind.shape[0]):
        o = off[r]
        z = lz[r]
        if kind[r] == 0:
            for k in range(nA):
                for ii in range(stored[r]):
                    Th[k, o + ii] = 0.0
                    Tl[k, o + ii] = 0.0
        elif kind[r] == 1:
            q = src0[r]
            oq = off[q]
            zq = lz[q]
            for ii in range(stored[r]):
                i = z + ii
                kmax = i * (i + 1) // 2
                for k in range(nA):
                    if k >= kmax:
                        Th[k, o + ii] = 0.0
                        Tl[k, o + ii] = 0.0
                        continue
                    sh = 0.0
                    sl = 0.0
                    for j in range(zq, i):
                        ph, pl = dd_mul(Ah[i, j], Al[i, j], Th[k, oq + j - zq], Tl[k, oq + j - zq])
                        sh, sl = dd_add(sh, sl, ph, pl)
                    if prow[k] == i and pcol[k] >= zq:
                        sh, sl = dd_add(sh, sl, Vh[oq + pcol[k] - zq], Vl[oq + pcol[k] - zq])
                    Th[k, o + ii] = sh
                    Tl[k, o + ii] = sl
        else:
            a = src0[r]
            b = src1[r]
            oa = off[a] - lz[a]
            ob = off[b] - lz[b]
            for ii in range(stored[r]):
                i = z + ii
                for k in range(nA):
                    h1, l1 = dd_mul(Th[k, oa + i], Tl[k, oa + i], Vh[ob + i], Vl[ob + i])
                    h2, l2 = dd_mul(Vh[oa + i], Vl[oa + i], Th[k, ob + i], Tl[k, ob + i])
                    h, l = dd_add(h1, l1, h2, l2)
                    Th[k, o + ii] = h
                    Tl[k, o + ii] = l


@njit(cache=True)
def dd_defects(creg, rhs_h, rhs_l, lz, off, stored, bh, bl, Vh, Vl, Dh, Dl):
    for c in range(creg.shape[0]):
        r = creg[c]
        o = off[r]
        z = lz[r]
        sh = 0.0
        sl = 0.0
        for ii in range(stored[r]):
            ph, pl = dd_mul(bh[z + ii], bl[z + ii], Vh[o + ii], Vl[o + ii])
            sh, sl = dd_add(sh, sl, ph, pl)
        h, l = dd_add(sh, sl, -rhs_h[c], -rhs_l[c])
        Dh[c] = h
        Dl[c] = l


@njit(cache=True)
def dd_jacobian(creg, lz, off, stored, bh, bl, Vh, Vl, Th, Tl, Jh, Jl):
    nA = Th.shape[0]
    for c in range(creg.shape[0]):
        r = creg[c]
        o = off[r]
        z = lz[r]
        for k in range(Jh.shape[1]):
            Jh[c, k] = 0.0
            Jl[c, k] = 0.0
        for k in range(nA):
            sh = 0.0
            sl = 0.0
            for ii in range(stored[r]):
                ph, pl = dd_mul(bh[z + ii], bl[z + ii], Th[k, o + ii], Tl[k, o + ii])
                sh, sl = dd_add(sh, sl, ph, pl)
            Jh[c, k] = sh
            Jl[c, k] = sl
        for ii in range(stored[r]):
            Jh[c, nA + z + ii] = Vh[o + ii]
            Jl[c, nA + z + ii] = Vl[o + ii]


@njit(cache=True)
def dd_value(Dh, Dl, wh, wl):
    sh = 0.0
    sl = 0.0
    for c in range(Dh.shape[0]):
        th, tl = dd_mul(wh[c], wl[c], Dh[c], Dl[c])
        ph, pl = dd_mul(th, tl, th, tl)
        sh, sl = dd_add(sh, sl, ph, pl)
    return sh, sl


@njit(cache=True)
def dd_grad(Dh, Dl, wh, wl, Jh, Jl, gh, gl):
    m = Dh.shape[0]
    for k in range(Jh.shape[1]):
        sh = 0.0
        sl = 0.0
        for c in range(m):
            w2h, w2l = dd_mul(wh[c], wl[c], wh[c], wl[c])
            th, tl = dd_mul(w2h, w2l, Dh[c], Dl[c])
            ph, pl = dd_mul(th, tl, Jh[c, k], Jl[c, k])
            sh, sl = dd_add(sh, sl, ph, pl)
        gh[k] = 2.0 * sh
        gl[k] = 2.0 * sl


def warm_up():
    """Trigger compilation on a tiny problem."""
    i = np.zeros(1, dtype=np.int64)
    A = np.zeros((1, 1))
    V = np.zeros(1)
    T = np.zeros((0, 1))
    f64_weights(i, i, i, i, i, i + 1, A, V)
    dd_weights(i, i, i, i, i, i + 1, A, A, V, V.copy())
    f64_tangents(i, i, i, i, i, i + 1, A, V, i[:0], i[:0], T)
    dd_tangents(i, i, i, i, i, i + 1, A, A, V, V, i[:0], i[:0], T, T.copy())
