"""Space-filling input designs over the unit hypercube.

Designs live in ``[0, 1]^d``; :func:`scale` maps them to native units through
each input's marginal distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist


class DesignError(ValueError):
    """Invalid design parameters or malformed marginal definitions."""


@dataclass(frozen=True)
class MarginalDistribution:
    """Uniform or tabulated inverse-CDF marginal of one input.

    For ``kind="inverse_cdf"`` the table holds ``(probability, quantile)``
    pairs; probabilities strictly increase from 0 to 1 and quantiles never
    decrease. Values in between are linearly interpolated.
    """

    kind: str = "uniform"
    lower: float = 0.0
    upper: float = 1.0
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
                raise DesignError("uniform bounds must be finite")
            if not self.lower < self.upper:
                raise DesignError(f"uniform requires lower < upper, got {self.lower}, {self.upper}")
        elif self.kind == "inverse_cdf":
            tab = np.asarray(self.table, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != 2 or tab.shape[0] < 2:
                raise DesignError("inverse_cdf table needs at least two (p, q) pairs")
            prob, quant = tab[:, 0], tab[:, 1]
            if prob[0] != 0.0 or prob[-1] != 1.0:
                raise DesignError("inverse_cdf table must span probabilities 0 to 1")
            if np.any(np.diff(prob) <= 0):
                raise DesignError("inverse_cdf probabilities must be strictly increasing")
            if np.any(np.diff(quant) < 0):
                raise DesignError("inverse_cdf quantiles must be non-decreasing")
        else:
            raise DesignError(f"unknown marginal kind {self.kind!r}")

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "MarginalDistribution":
        return cls("uniform", float(lower), float(upper))

    @classmethod
    def inverse_cdf(cls, table: Sequence[tuple[float, float]]) -> "MarginalDistribution":
        return cls("inverse_cdf", table=tuple((float(p), float(q)) for p, q in table))

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.lower, self.upper
        return self.table[0][1], self.table[-1][1]

    def ppf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.lower + (self.upper - self.lower) * u
        tab = np.asarray(self.table)
        return np.interp(u, tab[:, 0], tab[:, 1])

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.clip((x - self.lower) / (self.upper - self.lower), 0.0, 1.0)
        tab = np.asarray(self.table)
        return np.interp(x, tab[:, 1], tab[:, 0])


@dataclass(frozen=True)
class InputDesign:
    points: np.ndarray
    marginals: tuple[MarginalDistribution, ...] = field(default=())

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DesignError("design points must be a 2-D array")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise DesignError("design points must lie in [0, 1]^d")
        margs = tuple(self.marginals) or tuple(
            MarginalDistribution.uniform(0.0, 1.0) for _ in range(pts.shape[1])
        )
        if len(margs) != pts.shape[1]:
            raise DesignError(f"{len(margs)} marginals for {pts.shape[1]} columns")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "marginals", margs)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_marginals(self, marginals: Sequence[MarginalDistribution]) -> "InputDesign":
        return InputDesign(self.points, tuple(marginals))

    def subset(self, rows: Sequence[int]) -> "InputDesign":
        return InputDesign(self.points[np.asarray(rows, dtype=int)], self.marginals)

    @property
    def bounds(self) -> np.ndarray:
        """(d, 2) array of marginal supports in native units."""
        return np.array([m.support for m in self.marginals], dtype=float)


def _check_nd(n: int, d: int) -> None:
    if n < 1 or d < 1:
        raise DesignError(f"need n >= 1 and d >= 1, got n={n}, d={d}")


def _lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    perms = np.argsort(rng.random((d, n)), axis=1).T
    return (perms + rng.random((n, d))) / n


def lhs(n: int, d: int, seed=None, marginals=()) -> InputDesign:
    """Random Latin hypercube: one point per stratum ``[(i-1)/n, i/n)`` in every column."""
    _check_nd(n, d)
    rng = np.random.default_rng(seed)
    return InputDesign(_lhs_unit(n, d, rng), tuple(marginals))


def min_distance(points: np.ndarray) -> float:
    """Smallest pairwise Euclidean distance between rows."""
    if len(points) < 2:
        raise DesignError("min distance needs at least two points")
    return float(pdist(points).min())


def maximin_lhs(n: int, d: int, sweeps: int = 100, seed=None, marginals=()) -> InputDesign:
    """Latin hypercube improved by within-column swaps.

    Starts from ``lhs(n, d, seed)``. Each sweep proposes, for every column,
    one exchange between a point of the current closest pair and a random
    other point; the swap is kept only if the minimum pairwise distance
    strictly increases. Swapping entries inside a column keeps the Latin
    stratification intact.
    """
    if n < 2:
        raise DesignError("maximin_lhs needs n >= 2")
    _check_nd(n, d)
    rng = np.random.default_rng(seed)
    pts = _lhs_unit(n, d, rng)
    sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(sq, np.inf)
    best = sq.min()
    for _ in range(sweeps):
        for col in range(d):
            flat = int(np.argmin(sq))
            pair = divmod(flat, n)
            i = pair[int(rng.integers(2))]
            j = int(rng.integers(n - 1))
            j += j >= i
            cand = pts.copy()
            cand[[i, j], col] = cand[[j, i], col]
            row_i = np.sum((cand - cand[i]) ** 2, axis=1)
            row_j = np.sum((cand - cand[j]) ** 2, axis=1)
            new = sq.copy()
            new[i, :] = row_i
            new[:, i] = row_i
            new[j, :] = row_j
            new[:, j] = row_j
            new[i, i] = new[j, j] = np.inf
            val = new.min()
            if val > best:
                pts, sq, best = cand, new, val
    return InputDesign(pts, tuple(marginals))


def scale(design: InputDesign) -> np.ndarray:
    """Map unit-cube points to native units via each marginal's inverse CDF."""
    out = np.empty_like(design.points)
    for j, marg in enumerate(design.marginals):
        out[:, j] = marg.ppf(design.points[:, j])
    return out


def unscale(x: np.ndarray, marginals: Sequence[MarginalDistribution]) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for j, marg in enumerate(marginals):
        out[:, j] = marg.cdf(x[:, j])
    return out


def sample_native(n: int, marginals: Sequence[MarginalDistribution], rng: np.random.Generator,
                  method: str = "mc") -> np.ndarray:
    """Draw ``n`` independent input vectors in native units (plain MC or LHS)."""
    d = len(marginals)
    u = rng.random((n, d)) if method == "mc" else _lhs_unit(n, d, rng)
    return np.column_stack([m.ppf(u[:, j]) for j, m in enumerate(marginals)]) if d else u


# -- files -------------------------------------------------------------------

def write_design_csv(path, x_native: np.ndarray) -> None:
    x_native = np.atleast_2d(x_native)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(x_native.shape[1])])
        for row in x_native:
            w.writerow([repr(float(v)) for v in row])


def read_design_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DesignError(f"{path}: empty design file")
    header = rows[0]
    if header != [f"x{j + 1}" for j in range(len(header))]:
        raise DesignError(f"{path}: header must be x1,...,xd")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DesignError(f"{path}: non-numeric cell ({exc})") from None
    return data.reshape(-1, len(header))


def read_bounds_csv(path) -> list[MarginalDistribution]:
    """Read ``name,lower,upper`` rows (header optional) into uniform marginals."""
    margs = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                lo, hi = float(row[-2]), float(row[-1])
            except ValueError:
                continue  # header line
            margs.append(MarginalDistribution.uniform(lo, hi))
    if not margs:
        raise DesignError(f"{Path(path)}: no bounds found")
    return margs


def design_from_native(x_native: np.ndarray, marginals: Sequence[MarginalDistribution]) -> InputDesign:
    return InputDesign(np.clip(unscale(x_native, marginals), 0.0, 1.0), tuple(marginals))
