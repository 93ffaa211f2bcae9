"""Campbell2D analytical test function and its first-order Sobol' oracles.

The function maps eight inputs ``X_i ~ U[-1, 5]`` to a map over
``(z1, z2) in [-90, 90]^2``::

    g = X1 exp[-(t1 - 10 X2)^2 / (60 X1^2)] + (X2 + X4) exp[t2 X1 / 500]
        + X5 (X3 - 2) exp[-(f1 - 20 X6)^2 / (40 X5^2)] + (X6 + X8) exp[f2 X7 / 250]

with ``t1 = 0.8 z1 + 0.2 z2``, ``t2 = 0.5 z1 + 0.5 z2``,
``f1 = 0.4 z1 + 0.6 z2`` and ``f2 = 0.3 z1 + 0.7 z2``.

The closed and semi-closed first-order expressions below give
``Var[E(Y | X_i)]``; :func:`analytic_first_order` divides them by a Monte
Carlo estimate of ``Var(Y)`` to obtain indices.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import _backend
from .designs import MarginalDistribution
from .field import GridField, is_pow2, read_array_field, write_array_field

logger = logging.getLogger(__name__)

D = 8
LOWER, UPPER = -1.0, 5.0
Z_RANGE = (-90.0, 90.0)
MARGINALS = tuple(MarginalDistribution.uniform(LOWER, UPPER) for _ in range(D))

#: corner and mixed input vectors with known map statistics
CORNER_INPUTS = {
    "low": (-1.0,) * 8,
    "high": (5.0,) * 8,
    "mixed": (5.0, 3.0, 1.0, -1.0, 5.0, 3.0, 1.0, -1.0),
}


class CampbellDomainError(ValueError):
    """X1 or X5 equal to zero (the Gaussian widths vanish)."""


@dataclass(frozen=True)
class Campbell2DGrid:
    nr: int = 64
    nc: int = 64

    def __post_init__(self):
        if not (is_pow2(self.nr) and is_pow2(self.nc)):
            raise ValueError("Campbell2D grid sides must be powers of two")

    @property
    def shape(self) -> tuple[int, int]:
        return self.nr, self.nc

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        z1 = np.linspace(*Z_RANGE, self.nr)
        z2 = np.linspace(*Z_RANGE, self.nc)
        return np.meshgrid(z1, z2, indexing="ij")

    def field(self, values) -> GridField:
        return GridField(np.asarray(values).reshape(self.shape), Z_RANGE, Z_RANGE)


def variable_changes(z1, z2):
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    return 0.8 * z1 + 0.2 * z2, 0.5 * z1 + 0.5 * z2, 0.4 * z1 + 0.6 * z2, 0.3 * z1 + 0.7 * z2


class Campbell2D:
    """Map evaluator on a grid, or on an explicit list of ``(z1, z2)`` points.

    With ``points`` the output shape is ``(1, len(points))``.
    """

    d = D
    z1_range = Z_RANGE
    z2_range = Z_RANGE

    def __init__(self, grid: Campbell2DGrid | None = None, points=None, check_bounds: bool = True):
        if points is not None:
            pts = np.asarray(points, dtype=float).reshape(-1, 2)
            self.z1 = np.ascontiguousarray(pts[:, 0])
            self.z2 = np.ascontiguousarray(pts[:, 1])
            self.shape = (1, pts.shape[0])
        else:
            grid = grid or Campbell2DGrid()
            Z1, Z2 = grid.coords()
            self.z1 = np.ascontiguousarray(Z1.ravel())
            self.z2 = np.ascontiguousarray(Z2.ravel())
            self.shape = grid.shape
        self.check_bounds = check_bounds

    def __call__(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != D:
            raise ValueError(f"Campbell2D takes {D} inputs, got {X.shape[1]}")
        if np.any(X[:, 0] == 0.0) or np.any(X[:, 4] == 0.0):
            raise CampbellDomainError("x1 and x5 must be non-zero")
        if self.check_bounds and (np.any(X < LOWER) or np.any(X > UPPER)):
            warnings.warn("Campbell2D inputs outside [-1, 5]", stacklevel=2)
        return _backend.campbell2d(X, self.z1, self.z2).reshape((X.shape[0],) + self.shape)


def campbell2d_eval(x, grid: Campbell2DGrid | None = None) -> GridField:
    grid = grid or Campbell2DGrid()
    return grid.field(Campbell2D(grid)(np.asarray(x, dtype=float)[None, :])[0])


# -- first-order oracles ----------------------------------------------------------

def _gauss_legendre(a: float, b: float, nodes: int):
    t, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def _uniform_rule(nodes: int):
    """Nodes/weights for E[f(X)], X ~ U[-1, 5], split at 0 where integrands kink."""
    x1, w1 = _gauss_legendre(LOWER, 0.0, nodes)
    x2, w2 = _gauss_legendre(0.0, UPPER, nodes)
    return np.concatenate([x1, x2]), np.concatenate([w1, w2]) / (UPPER - LOWER)


def _exp_gap(t, a, b):
    """``(exp(a t) - exp(-b t)) / t`` with its limit ``a + b`` at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    safe = np.where(t == 0.0, 1.0, t)
    return np.where(t == 0.0, a + b, (np.expm1(a * safe) - np.expm1(-b * safe)) / safe)


def _variance(values, weights):
    mean = values @ weights
    return ((values - mean[..., None]) ** 2) @ weights


def _s1(t1, t2, nodes):
    x, w = _uniform_rule(nodes)
    s = np.sqrt(30.0) * x
    h = (np.sqrt(np.pi / 60.0) * x ** 2
         * (ndtr((50.0 - t1[:, None]) / s) - ndtr(-(10.0 + t1[:, None]) / s))
         + 4.0 * np.exp(t2[:, None] * x / 500.0))
    return _variance(h, w)


def _s2(t1, t2, nodes):
    xo, wo = _uniform_rule(nodes)  # outer: X2
    xi, wi = _uniform_rule(nodes)  # inner: X1 (the x/6 density is folded into wi)
    c = 250.0 / 3.0 * _exp_gap(t2, 1 / 100.0, 1 / 500.0)
    out = np.empty(t1.size)
    for k in range(t1.size):
        u = (t1[k] - 10.0 * xo)[:, None] / (np.sqrt(30.0) * xi[None, :])
        inner = (xi[None, :] * np.exp(-0.5 * u * u)) @ wi
        out[k] = _variance(c[k] * xo + inner, wo)
    return out


def _s3(f1, nodes):
    x, w = _uniform_rule(nodes)
    s = np.sqrt(20.0) * x
    integrand = x ** 2 * (ndtr((100.0 - f1[:, None]) / s) - ndtr((-20.0 - f1[:, None]) / s))
    return np.pi / 120.0 * (integrand @ w) ** 2


def _s4(t2):
    return (250.0 * _exp_gap(t2, 1 / 100.0, 1 / 500.0)) ** 2 / 3.0


def _s6(f2):
    return (125.0 * _exp_gap(f2, 1 / 50.0, 1 / 250.0)) ** 2 / 3.0


def _s7(f2):
    val = (8.0 / 3.0 * 125.0 * _exp_gap(f2, 1 / 25.0, 1 / 125.0)
           - 4.0 / 9.0 * (250.0 * _exp_gap(f2, 1 / 50.0, 1 / 250.0)) ** 2)
    val = np.where(f2 == 0.0, 0.0, val)
    if np.any(val < -1e-9):
        raise ArithmeticError("negative first-order variance for X7")
    return np.maximum(val, 0.0)


def first_order_variance(i: int, z1, z2, nodes: int = 64) -> np.ndarray:
    """``Var[E(Y | X_i)]`` at the given coordinates (same shape as ``z1``)."""
    if i not in range(1, D + 1):
        raise ValueError(f"input index must be in 1..{D}, got {i}")
    z1 = np.asarray(z1, dtype=float)
    t1, t2, f1, f2 = (np.ravel(v) for v in variable_changes(z1, z2))
    if i == 1:
        out = _s1(t1, t2, nodes)
    elif i == 2:
        out = _s2(t1, t2, nodes)
    elif i == 3:
        out = _s3(f1, nodes)
    elif i == 4:
        out = _s4(t2)
    elif i == 5:
        out = np.zeros(t1.size)
    elif i == 7:
        out = _s7(f2)
    else:  # X6 and X8 enter only through (X6 + X8) exp(f2 X7 / 250)
        out = _s6(f2)
    return out.reshape(z1.shape)


def output_variance(z1, z2, mc_n: int = 10**6, seed: int = 0, batch: int = 4096) -> np.ndarray:
    """Monte Carlo ``Var(Y)`` at each coordinate; draws with x1 = 0 or x5 = 0 are redrawn."""
    z1 = np.ascontiguousarray(np.ravel(z1), dtype=float)
    z2 = np.ascontiguousarray(np.ravel(z2), dtype=float)
    rng = np.random.default_rng(seed)
    shift = None
    s1 = np.zeros(z1.size)
    s2 = np.zeros(z1.size)
    done = 0
    while done < mc_n:
        m = min(batch, mc_n - done)
        X = rng.uniform(LOWER, UPPER, (m, D))
        bad = (X[:, 0] == 0.0) | (X[:, 4] == 0.0)
        while np.any(bad):
            X[bad] = rng.uniform(LOWER, UPPER, (int(bad.sum()), D))
            bad = (X[:, 0] == 0.0) | (X[:, 4] == 0.0)
        Y = _backend.campbell2d(X, z1, z2)
        if shift is None:
            shift = Y.mean(axis=0)
        Y -= shift
        s1 += Y.sum(axis=0)
        s2 += (Y * Y).sum(axis=0)
        done += m
    mean = s1 / mc_n
    return (s2 - mc_n * mean * mean) / (mc_n - 1)


def analytic_first_order(i: int, grid: Campbell2DGrid | None = None, nodes: int = 64,
                         mc_n: int = 10**6, seed: int = 0, variance=None) -> GridField:
    """Normalized first-order index map ``Var[E(Y|X_i)] / Var(Y)``.

    ``variance`` may carry a precomputed ``Var(Y)`` map to share across inputs.
    """
    grid = grid or Campbell2DGrid()
    Z1, Z2 = grid.coords()
    if variance is None:
        variance = output_variance(Z1, Z2, mc_n=mc_n, seed=seed)
    num = first_order_variance(i, Z1, Z2, nodes)
    if i == 5:
        return grid.field(np.zeros(grid.shape))
    return grid.field(num / np.asarray(variance).reshape(grid.shape))


def analytic_first_order_all(grid: Campbell2DGrid | None = None, nodes: int = 64, mc_n: int = 10**6,
                             seed: int = 0, variance=None) -> np.ndarray:
    """All eight normalized first-order maps, shape ``(8, nr, nc)``; S8 is S6 by construction."""
    grid = grid or Campbell2DGrid()
    Z1, Z2 = grid.coords()
    if variance is None:
        variance = output_variance(Z1, Z2, mc_n=mc_n, seed=seed)
    variance = np.asarray(variance).reshape(grid.shape)
    out = np.empty((D,) + grid.shape)
    for i in range(1, D + 1):
        if i == 8:
            out[7] = out[5]
        elif i == 5:
            out[4] = 0.0
        else:
            out[i - 1] = first_order_variance(i, Z1, Z2, nodes) / variance
    return out


# -- cached reference fixtures ------------------------------------------------------

def _cache_name(kind: str, grid: Campbell2DGrid, **params) -> str:
    tag = "_".join(f"{k}{v}" for k, v in sorted(params.items()))
    return f"{kind}_{grid.nr}x{grid.nc}_{tag}"


def cached_output_variance(grid: Campbell2DGrid, mc_n: int, seed: int, cache_dir=None) -> np.ndarray:
    if cache_dir is not None:
        path = Path(cache_dir) / (_cache_name("var", grid, n=mc_n, seed=seed) + ".fld")
        if path.exists():
            return read_array_field(path)[0]
    Z1, Z2 = grid.coords()
    var = output_variance(Z1, Z2, mc_n=mc_n, seed=seed).reshape(grid.shape)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_array_field(var, path, Z_RANGE, Z_RANGE)
    return var


def exact_total_reference(grid: Campbell2DGrid | None = None, N: int = 10**5, seed: int = 0,
                          cache_dir=None, batch: int = 512):
    """Saltelli total (and first-order) maps computed on the function itself.

    Returns a :class:`~sobolmap.sobol.SensitivityMaps`; with ``cache_dir`` the
    ``ST_<i>.fld``/``S_<i>.fld`` files are stored and reused.
    """
    from .sobol import SensitivityMaps, saltelli_maps

    grid = grid or Campbell2DGrid()
    if cache_dir is not None:
        sub = Path(cache_dir) / _cache_name("saltelli", grid, N=N, seed=seed)
        if (sub / "sobol_meta.txt").exists():
            return SensitivityMaps.load(sub)
    maps = saltelli_maps(Campbell2D(grid), MARGINALS, N, seed=seed, batch=batch)
    if cache_dir is not None:
        maps.save(sub)
    return maps


def fixture_digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()[:16]
