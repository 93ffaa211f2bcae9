"""Select the compiled kernels when built, the numpy twins otherwise.

Set ``SOBOLMAP_PURE_PYTHON=1`` to force the fallback. Correlation kernels
with fractional exponents always use numpy, whose vectorized ``pow`` beats
scalar libm calls.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("SOBOLMAP_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"



def _integral(p) -> bool:
    p = np.asarray(p)
    return bool(np.all((p == 1.0) | (p == 2.0)))


def corr_matrix(X, theta, p):
    return (_impl if _integral(p) else _kernels_py).corr_matrix(X, theta, p)


def cross_corr(Xa, Xb, theta, p):
    return (_impl if _integral(p) else _kernels_py).cross_corr(Xa, Xb, theta, p)


def kriging_sums(U, Xs, theta, p, W):
    return (_impl if _integral(p) else _kernels_py).kriging_sums(U, Xs, theta, p, W)


def corr_grad(X, p, M, with_p):
    return (_impl if _integral(p) else _kernels_py).corr_grad(X, p, M, with_p)


campbell2d = _impl.campbell2d

__all__ = ["BACKEND", "corr_matrix", "cross_corr", "corr_grad", "campbell2d", "kriging_sums"]
