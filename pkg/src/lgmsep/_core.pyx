# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the per-bin small-matrix work.

Mirrors ``_core_py`` function for function.  Matrix dimension is capped
at MAXD; the Python wrappers fall back to numpy beyond that.
"""
import numpy as np

from .errors import IllConditionedError

from libc.math cimport sqrt, log, fabs, M_PI

cdef extern from "complex.h" nogil:
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)
    double cabs(double complex)

DEF MAXD = 8
cdef int MAX_SWEEPS = 50
cdef double OFF_TOL = 1e-15


cdef void _jacobi(double complex[MAXD][MAXD] a, double complex[MAXD][MAXD] v,
                  double* w, int d) noexcept nogil:
    cdef int i, j, k, p, q, sweep
    cdef double scale = 0.0, off, mag, app, aqq, tau, t, c, s
    cdef double complex ph, phc, xp, xq

    for i in range(d):
        for j in range(d):
            scale += creal(a[i][j]) * creal(a[i][j]) + cimag(a[i][j]) * cimag(a[i][j])
            v[i][j] = 1.0 if i == j else 0.0
    scale = sqrt(scale)

    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for i in range(d):
            for j in range(d):
                if i != j:
                    mag = cabs(a[i][j])
                    off += mag * mag
        if sqrt(off) <= OFF_TOL * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                mag = cabs(a[p][q])
                if mag <= OFF_TOL * scale * 1e-3:
                    continue
                ph = a[p][q] / mag
                phc = conj(ph)
                app = creal(a[p][p])
                aqq = creal(a[q][q])
                tau = (aqq - app) / (2.0 * mag)
                if tau >= 0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(d):
                    xp = a[k][p]
                    xq = a[k][q]
                    a[k][p] = xp * c - xq * (s * phc)
                    a[k][q] = xp * s + xq * (c * phc)
                    xp = v[k][p]
                    xq = v[k][q]
                    v[k][p] = xp * c - xq * (s * phc)
                    v[k][q] = xp * s + xq * (c * phc)
                for k in range(d):
                    xp = a[p][k]
                    xq = a[q][k]
                    a[p][k] = xp * c - xq * (s * ph)
                    a[q][k] = xp * s + xq * (c * ph)
                a[p][q] = 0.0
                a[q][p] = 0.0
                a[p][p] = creal(a[p][p])
                a[q][q] = creal(a[q][q])

    for i in range(d):
        w[i] = creal(a[i][i])


def herm_eig_batch(A):
    """Cyclic Jacobi eigendecomposition of a (B, d, d) Hermitian stack."""
    A = np.ascontiguousarray(A, dtype=np.complex128)
    cdef Py_ssize_t B = A.shape[0]
    cdef int d = A.shape[1]
    if d > MAXD:
        from . import _core_py
        return _core_py.herm_eig_batch(A)
    w_out = np.empty((B, d), dtype=np.float64)
    V_out = np.empty((B, d, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] Av = A
    cdef double[:, ::1] wv = w_out
    cdef double complex[:, :, ::1] Vv = V_out
    cdef double complex a[MAXD][MAXD]
    cdef double complex v[MAXD][MAXD]
    cdef double w[MAXD]
    cdef int order[MAXD]
    cdef Py_ssize_t b
    cdef int i, j, k, tmp

    with nogil:
        for b in range(B):
            for i in range(d):
                for j in range(d):
                    a[i][j] = Av[b, i, j]
            _jacobi(a, v, w, d)
            for i in range(d):
                order[i] = i
            # insertion sort, stable
            for i in range(1, d):
                tmp = order[i]
                j = i - 1
                while j >= 0 and w[order[j]] > w[tmp]:
                    order[j + 1] = order[j]
                    j -= 1
                order[j + 1] = tmp
            for k in range(d):
                wv[b, k] = w[order[k]]
                for i in range(d):
                    Vv[b, i, k] = v[i][order[k]]
    return w_out, V_out


cdef int _bin_solve(double complex[MAXD][MAXD] m, double complex* x, int d,
                    double complex[MAXD][MAXD] inv, double complex* y,
                    double* logdet, double* quad) noexcept nogil:
    """Cholesky-factor m in place, then fill inv = m^-1, y = m^-1 x.

    Returns 0 on success, -1 if m is not positive definite.
    """
    cdef int i, j, k
    cdef double complex acc
    cdef double diag
    cdef double complex L[MAXD][MAXD]
    cdef double complex Linv[MAXD][MAXD]

    logdet[0] = 0.0
    for j in range(d):
        diag = creal(m[j][j])
        for k in range(j):
            diag -= creal(L[j][k]) * creal(L[j][k]) + cimag(L[j][k]) * cimag(L[j][k])
        if not (diag > 0.0):
            return -1
        diag = sqrt(diag)
        L[j][j] = diag
        logdet[0] += 2.0 * log(diag)
        for i in range(j + 1, d):
            acc = m[i][j]
            for k in range(j):
                acc = acc - L[i][k] * conj(L[j][k])
            L[i][j] = acc / diag
        for i in range(j):
            L[i][j] = 0.0

    # Linv (lower triangular)
    for j in range(d):
        for i in range(d):
            Linv[i][j] = 0.0
        Linv[j][j] = 1.0 / creal(L[j][j])
        for i in range(j + 1, d):
            acc = 0.0
            for k in range(j, i):
                acc = acc + L[i][k] * Linv[k][j]
            Linv[i][j] = -acc / creal(L[i][i])

    # inv = Linv^H Linv
    for i in range(d):
        for j in range(i, d):
            acc = 0.0
            for k in range(j, d):
                acc = acc + conj(Linv[k][i]) * Linv[k][j]
            inv[i][j] = acc
            inv[j][i] = conj(acc)
        inv[i][i] = creal(inv[i][i])

    quad[0] = 0.0
    for i in range(d):
        acc = 0.0
        for k in range(d):
            acc = acc + inv[i][k] * x[k]
        y[i] = acc
        quad[0] += creal(conj(x[i]) * acc)
    return 0


def _raise_not_pd(int f, int n):
    raise IllConditionedError(
        f"model covariance is not positive definite at bin (f={f}, n={n})", index=(f, n)
    )


def model_stats(X, v, R):
    """See ``_core_py.model_stats``."""
    X = np.ascontiguousarray(X, dtype=np.complex128)
    v = np.ascontiguousarray(v, dtype=np.float64)
    R = np.ascontiguousarray(R, dtype=np.complex128)
    cdef int F = X.shape[0], N = X.shape[1], d = X.shape[2], J = v.shape[0]
    if d > MAXD:
        from . import _core_py
        return _core_py.model_stats(X, v, R)
    a_out = np.empty((J, F, N), dtype=np.float64)
    b_out = np.empty((J, F, N), dtype=np.float64)
    nll_out = np.empty((F, N), dtype=np.float64)
    cdef double complex[:, :, ::1] Xv = X
    cdef double[:, :, ::1] vv = v
    cdef double complex[:, :, :, ::1] Rv = R
    cdef double[:, :, ::1] av = a_out
    cdef double[:, :, ::1] bv = b_out
    cdef double[:, ::1] nv = nll_out
    cdef double complex m[MAXD][MAXD]
    cdef double complex inv[MAXD][MAXD]
    cdef double complex x[MAXD]
    cdef double complex y[MAXD]
    cdef double complex acc, tmp
    cdef double logdet, quad, vj, ta, tb
    cdef double logpi = log(M_PI)
    cdef int f, n, j, p, q, bad_f = -1, bad_n = -1

    with nogil:
        for f in range(F):
            for n in range(N):
                for p in range(d):
                    x[p] = Xv[f, n, p]
                    for q in range(d):
                        m[p][q] = 0.0
                for j in range(J):
                    vj = vv[j, f, n]
                    for p in range(d):
                        for q in range(d):
                            m[p][q] = m[p][q] + vj * Rv[j, f, p, q]
                if _bin_solve(m, x, d, inv, y, &logdet, &quad) != 0:
                    bad_f = f
                    bad_n = n
                    break
                nv[f, n] = quad + logdet + d * logpi
                for j in range(J):
                    ta = 0.0
                    tb = 0.0
                    for p in range(d):
                        acc = 0.0
                        for q in range(d):
                            tmp = Rv[j, f, p, q]
                            acc = acc + tmp * y[q]
                            tb += creal(inv[q][p] * tmp)
                        ta += creal(conj(y[p]) * acc)
                    av[j, f, n] = ta
                    bv[j, f, n] = tb
            if bad_f >= 0:
                break
    if bad_f >= 0:
        _raise_not_pd(bad_f, bad_n)
    return a_out, b_out, nll_out


def riccati_terms(X, v, R):
    """See ``_core_py.riccati_terms``."""
    X = np.ascontiguousarray(X, dtype=np.complex128)
    v = np.ascontiguousarray(v, dtype=np.float64)
    R = np.ascontiguousarray(R, dtype=np.complex128)
    cdef int F = X.shape[0], N = X.shape[1], d = X.shape[2], J = v.shape[0]
    if d > MAXD:
        from . import _core_py
        return _core_py.riccati_terms(X, v, R)
    Psi_out = np.zeros((J, F, d, d), dtype=np.complex128)
    Phi_out = np.zeros((J, F, d, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] Xv = X
    cdef double[:, :, ::1] vv = v
    cdef double complex[:, :, :, ::1] Rv = R
    cdef double complex[:, :, :, ::1] Psv = Psi_out
    cdef double complex[:, :, :, ::1] Phv = Phi_out
    cdef double complex m[MAXD][MAXD]
    cdef double complex inv[MAXD][MAXD]
    cdef double complex x[MAXD]
    cdef double complex y[MAXD]
    cdef double logdet, quad, vj
    cdef int f, n, j, p, q, bad_f = -1, bad_n = -1

    with nogil:
        for f in range(F):
            for n in range(N):
                for p in range(d):
                    x[p] = Xv[f, n, p]
                    for q in range(d):
                        m[p][q] = 0.0
                for j in range(J):
                    vj = vv[j, f, n]
                    for p in range(d):
                        for q in range(d):
                            m[p][q] = m[p][q] + vj * Rv[j, f, p, q]
                if _bin_solve(m, x, d, inv, y, &logdet, &quad) != 0:
                    bad_f = f
                    bad_n = n
                    break
                for j in range(J):
                    vj = vv[j, f, n]
                    for p in range(d):
                        for q in range(d):
                            Psv[j, f, p, q] = Psv[j, f, p, q] + vj * inv[p][q]
                            Phv[j, f, p, q] = Phv[j, f, p, q] + vj * y[p] * conj(y[q])
            if bad_f >= 0:
                break
    if bad_f >= 0:
        _raise_not_pd(bad_f, bad_n)
    return Psi_out, Phi_out
