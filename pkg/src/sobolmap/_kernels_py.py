"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np


def _abspow(t, p):
    return t * t if p == 2.0 else np.power(t, p)


def corr_matrix(X, theta, p):
    n, d = X.shape
    s = np.zeros((n, n))
    for l in range(d):
        s += theta[l] * _abspow(np.abs(X[:, l, None] - X[None, :, l]), p[l])
    R = np.exp(-s)
    np.fill_diagonal(R, 1.0)
    return R


def cross_corr(Xa, Xb, theta, p):
    s = np.zeros((Xa.shape[0], Xb.shape[0]))
    for l in range(Xa.shape[1]):
        s += theta[l] * _abspow(np.abs(Xa[:, l, None] - Xb[None, :, l]), p[l])
    return np.exp(-s)


def corr_grad(X, p, M, with_p):
    d = X.shape[1]
    gt = np.zeros(d)
    gp = np.zeros(d)
    W = M + M.T
    iu = np.triu_indices(X.shape[0], 1)
    w = W[iu]
    for l in range(d):
        t = np.abs(X[iu[0], l] - X[iu[1], l])
        tp = _abspow(t, p[l])
        gt[l] = np.dot(w, tp)
        if with_p:
            with np.errstate(divide="ignore", invalid="ignore"):
                lg = np.where(t > 0, np.log(np.where(t > 0, t, 1.0)), 0.0)
            gp[l] = np.dot(w, tp * lg)
    return gt, gp


def campbell2d(X, z1, z2):
    t1 = 0.8 * z1 + 0.2 * z2
    t2 = 0.5 * z1 + 0.5 * z2
    f1 = 0.4 * z1 + 0.6 * z2
    f2 = 0.3 * z1 + 0.7 * z2
    x = [X[:, i, None] for i in range(8)]
    return (
        x[0] * np.exp(-((t1 - 10.0 * x[1]) ** 2) / (60.0 * x[0] ** 2))
        + (x[1] + x[3]) * np.exp(t2 * x[0] / 500.0)
        + x[4] * (x[2] - 2.0) * np.exp(-((f1 - 20.0 * x[5]) ** 2) / (40.0 * x[4] ** 2))
        + (x[5] + x[7]) * np.exp(f2 * x[6] / 250.0)
    )


def kriging_sums(U, Xs, theta, p, W):
    out = np.empty((U.shape[0], Xs.shape[0]))
    for g in range(Xs.shape[0]):
        out[:, g] = cross_corr(U, Xs[g], theta[g], p[g]) @ W[g]
    return out
