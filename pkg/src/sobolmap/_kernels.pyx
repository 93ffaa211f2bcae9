# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: generalized-exponential correlations and Campbell2D."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, pow, log

cnp.import_array()


cdef inline double _abspow(double t, double p) nogil:
    if p == 2.0:
        return t * t
    if p == 1.0:
        return t
    if t == 0.0:
        return 0.0
    return pow(t, p)


def corr_matrix(const double[:, ::1] X, const double[::1] theta, const double[::1] p):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, l
    cdef double s
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] R = out
    with nogil:
        for i in range(n):
            R[i, i] = 1.0
            for j in range(i + 1, n):
                s = 0.0
                for l in range(d):
                    s += theta[l] * _abspow(fabs(X[i, l] - X[j, l]), p[l])
                s = exp(-s)
                R[i, j] = s
                R[j, i] = s
    return out


def cross_corr(const double[:, ::1] Xa, const double[:, ::1] Xb,
               const double[::1] theta, const double[::1] p):
    cdef Py_ssize_t m = Xa.shape[0], n = Xb.shape[0], d = Xa.shape[1], i, j, l
    cdef double s
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] K = out
    with nogil:
        for i in range(m):
            for j in range(n):
                s = 0.0
                for l in range(d):
                    s += theta[l] * _abspow(fabs(Xa[i, l] - Xb[j, l]), p[l])
                K[i, j] = exp(-s)
    return out


def corr_grad(const double[:, ::1] X, const double[::1] p,
              const double[:, ::1] M, bint with_p):
    """Return sum_ij M_ij |dx_l|^p_l (and the log-weighted sums when with_p)."""
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, l
    cdef double t, tp, w
    gt = np.zeros(d, dtype=np.float64)
    gp = np.zeros(d, dtype=np.float64)
    cdef double[::1] g_t = gt
    cdef double[::1] g_p = gp
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                w = M[i, j] + M[j, i]
                if w == 0.0:
                    continue
                for l in range(d):
                    t = fabs(X[i, l] - X[j, l])
                    if t == 0.0:
                        continue
                    tp = _abspow(t, p[l])
                    g_t[l] += w * tp
                    if with_p:
                        g_p[l] += w * tp * log(t)
    return gt, gp


def campbell2d(const double[:, ::1] X, const double[::1] z1, const double[::1] z2):
    cdef Py_ssize_t m = X.shape[0], npix = z1.shape[0], r, k
    cdef double x1, x2, x3, x4, x5, x6, x7, x8, a1, a5, c2, c4, c6, c8
    cdef double t1, t2, f1, f2, u, v
    out = np.empty((m, npix), dtype=np.float64)
    cdef double[:, ::1] Y = out
    with nogil:
        for r in range(m):
            x1 = X[r, 0]; x2 = X[r, 1]; x3 = X[r, 2]; x4 = X[r, 3]
            x5 = X[r, 4]; x6 = X[r, 5]; x7 = X[r, 6]; x8 = X[r, 7]
            a1 = 1.0 / (60.0 * x1 * x1)
            a5 = 1.0 / (40.0 * x5 * x5)
            c2 = x2 + x4
            c4 = x6 + x8
            c6 = x5 * (x3 - 2.0)
            c8 = x1 / 500.0
            for k in range(npix):
                t1 = 0.8 * z1[k] + 0.2 * z2[k]
                t2 = 0.5 * z1[k] + 0.5 * z2[k]
                f1 = 0.4 * z1[k] + 0.6 * z2[k]
                f2 = 0.3 * z1[k] + 0.7 * z2[k]
                u = t1 - 10.0 * x2
                v = f1 - 20.0 * x6
                Y[r, k] = (x1 * exp(-u * u * a1) + c2 * exp(t2 * c8)
                           + c6 * exp(-v * v * a5) + c4 * exp(f2 * x7 / 250.0))
    return out


def kriging_sums(const double[:, ::1] U, const double[:, :, ::1] Xs, const double[:, ::1] theta,
                 const double[:, ::1] p, const double[:, ::1] W):
    """``out[i, g] = sum_j W[g, j] R_g(U[i], Xs[g, j])`` for a bank of GPs sharing n and d."""
    cdef Py_ssize_t m = U.shape[0], G = Xs.shape[0], n = Xs.shape[1], d = U.shape[1], i, g, j, l
    cdef double s, acc, t
    out = np.empty((m, G), dtype=np.float64)
    cdef double[:, ::1] K = out
    with nogil:
        for i in range(m):
            for g in range(G):
                acc = 0.0
                for j in range(n):
                    s = 0.0
                    for l in range(d):
                        t = U[i, l] - Xs[g, j, l]
                        if p[g, l] == 2.0:
                            s += theta[g, l] * t * t
                        else:
                            s += theta[g, l] * _abspow(fabs(t), p[g, l])
                    acc += W[g, j] * exp(-s)
                K[i, g] = acc
    return out
