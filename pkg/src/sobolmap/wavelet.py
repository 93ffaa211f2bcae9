"""Orthonormal periodic 2-D discrete wavelet transform and coefficient ranking.

Coefficients use the Mallat layout: after each level the approximation
block sits in the top-left corner of an ``nr x nc`` array and the three
detail blocks (LH top-right, HL bottom-left, HH bottom-right) surround it.
The flat index of a coefficient is its row-major position in that array.

Each level applies the same orthogonal one-level matrix ``W_N`` to rows and
then columns of the current approximation block, so the full transform is
orthogonal and ``idwt2`` is its exact transpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .field import GridField, is_pow2

# Minimum-phase Daubechies lowpass filters (2N taps), sum(h) = sqrt(2).
_DAUBECHIES = {
    1: (0.7071067811865475244008, 0.7071067811865475244008),
    2: (0.4829629131445341433749, 0.8365163037378079055753,
        0.2241438680420133810260, -0.1294095225512603811744),
    4: (0.2303778133088965008633, 0.7148465705529156470899, 0.6308807679298589078817,
        -0.02798376941685985421141, -0.1870348117190930840796, 0.03084138183556076362722,
        0.03288301166688519973541, -0.01059740178506903210488),
    6: (0.1115407433501094636213, 0.4946238903984530856772, 0.7511339080210953506789,
        0.3152503517091976290860, -0.2262646939654398200763, -0.1297668675672619355623,
        0.09750160558732304910234, 0.02752286553030572862554, -0.03158203931748602956508,
        0.0005538422011614961392519, 0.004777257510945510639636, -0.001077301085308479564853),
    8: (0.05441584224310400995501, 0.3128715909142999706592, 0.6756307362972898068078,
        0.5853546836542067127713, -0.01582910525634930566738, -0.2840155429615469265162,
        0.0004724845739132827703606, 0.1287474266204784588570, -0.01736930100180754616962,
        -0.04408825393079475150676, 0.01398102791739828164872, 0.008746094047405776716383,
        -0.004870352993451574310422, -0.0003917403733769470462981, 0.0006754494064505693663695,
        -0.0001174767841247695337306),
}


class WaveletError(ValueError):
    """Incompatible grid, level count or wavelet family."""


def lowpass(family: str) -> np.ndarray:
    """Lowpass analysis filter for ``haar`` or ``dbN`` (N in 1, 2, 4, 6, 8)."""
    name = family.lower()
    if name == "haar":
        order = 1
    elif name.startswith("db") and name[2:].isdigit():
        order = int(name[2:])
    else:
        raise WaveletError(f"unknown wavelet family {family!r}")
    if order not in _DAUBECHIES:
        raise WaveletError(f"Daubechies order {order} not tabulated (choose from {sorted(_DAUBECHIES)})")
    return np.array(_DAUBECHIES[order])


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "db4"
    levels: int | None = None  # None: full depth log2(min(nr, nc))
    boundary: str = "periodic"

    def __post_init__(self):
        lowpass(self.family)
        if self.boundary != "periodic":
            raise WaveletError("only periodic boundary handling is supported")
        if self.levels is not None and self.levels < 0:
            raise WaveletError("levels must be non-negative")

    def depth(self, shape: tuple[int, int]) -> int:
        nr, nc = shape
        if not (is_pow2(nr) and is_pow2(nc)):
            raise WaveletError(f"grid {nr}x{nc} is not dyadic")
        full = int(np.log2(min(nr, nc)))
        if self.levels is None:
            return full
        if self.levels > full:
            raise WaveletError(f"{self.levels} levels exceed log2(min(nr, nc)) = {full}")
        return self.levels

    def to_text(self) -> str:
        return f"{self.family}:{'full' if self.levels is None else self.levels}:{self.boundary}"

    @classmethod
    def from_text(cls, text: str) -> "WaveletSpec":
        fam, lev, bnd = text.split(":")
        return cls(fam, None if lev == "full" else int(lev), bnd)


@lru_cache(maxsize=64)
def _level_matrix(family: str, n: int) -> np.ndarray:
    """Orthogonal one-level periodic analysis matrix: lowpass rows, then highpass rows."""
    h = lowpass(family)
    L = len(h)
    g = h[::-1] * (-1.0) ** np.arange(L)
    W = np.zeros((n, n))
    half = n // 2
    for k in range(half):
        for t in range(L):
            col = (2 * k + t) % n
            W[k, col] += h[t]
            W[half + k, col] += g[t]
    W.setflags(write=False)
    return W


@dataclass(frozen=True)
class WaveletDecomposition:
    coeffs: np.ndarray  # flat, length nr * nc
    shape: tuple[int, int]
    spec: WaveletSpec
    z1_range: tuple[float, float] = (0.0, 1.0)
    z2_range: tuple[float, float] = (0.0, 1.0)

    @property
    def K(self) -> int:
        return self.coeffs.size

    def as_array(self) -> np.ndarray:
        return self.coeffs.reshape(self.shape)


def dwt2_array(values: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    """Forward transform of ``(..., nr, nc)`` arrays; returns Mallat-layout arrays."""
    a = np.array(values, dtype=float, copy=True)
    nr, nc = a.shape[-2:]
    levels = spec.depth((nr, nc))
    r, c = nr, nc
    for _ in range(levels):
        Wr = _level_matrix(spec.family, r)
        Wc = _level_matrix(spec.family, c)
        block = a[..., :r, :c]
        a[..., :r, :c] = Wr @ block @ Wc.T
        r //= 2
        c //= 2
    return a


def idwt2_array(coeffs: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    """Inverse of :func:`dwt2_array` for ``(..., nr, nc)`` coefficient arrays."""
    a = np.array(coeffs, dtype=float, copy=True)
    nr, nc = a.shape[-2:]
    levels = spec.depth((nr, nc))
    sizes = [(nr >> lev, nc >> lev) for lev in range(levels)]
    for r, c in reversed(sizes):
        Wr = _level_matrix(spec.family, r)
        Wc = _level_matrix(spec.family, c)
        a[..., :r, :c] = Wr.T @ a[..., :r, :c] @ Wc
    return a


def dwt2(field: GridField, spec: WaveletSpec = WaveletSpec()) -> WaveletDecomposition:
    coeffs = dwt2_array(field.values, spec)
    return WaveletDecomposition(coeffs.ravel(), field.shape, spec, field.z1_range, field.z2_range)


def idwt2(decomp: WaveletDecomposition) -> GridField:
    if decomp.coeffs.size != decomp.shape[0] * decomp.shape[1]:
        raise WaveletError("coefficient vector does not match the grid size")
    vals = idwt2_array(decomp.coeffs.reshape(decomp.shape), decomp.spec)
    return GridField(vals, decomp.z1_range, decomp.z2_range)


def basis_images(flat_indices: Sequence[int], shape: tuple[int, int], spec: WaveletSpec) -> np.ndarray:
    """Synthesis images of unit coefficients, shape ``(len(flat_indices), nr, nc)``."""
    idx = np.asarray(flat_indices, dtype=int)
    unit = np.zeros((idx.size, shape[0] * shape[1]))
    unit[np.arange(idx.size), idx] = 1.0
    return idwt2_array(unit.reshape(idx.size, *shape), spec)


def coefficient_address(flat_index: int, shape: tuple[int, int], spec: WaveletSpec) -> tuple[int, str, tuple[int, int]]:
    """``(level, subband, (row, col))`` of a flat coefficient index.

    Level 1 is the finest scale; the coarsest approximation is reported with
    subband ``"LL"`` at level ``depth``.
    """
    nr, nc = shape
    row, col = divmod(int(flat_index), nc)
    depth = spec.depth(shape)
    for lev in range(1, depth + 1):
        hr, hc = nr >> lev, nc >> lev
        if row >= hr or col >= hc:
            # letters name the (row, column) filters
            band = ("L" if row < hr else "H") + ("L" if col < hc else "H")
            return lev, band, (row % hr, col % hc)
    return depth, "LL", (row, col)


@dataclass(frozen=True)
class CoefficientRanking:
    order: np.ndarray  # flat indices, most variable first
    empirical_variances: np.ndarray  # indexed by flat index

    @property
    def K(self) -> int:
        return self.order.size

    def sorted_variances(self) -> np.ndarray:
        return self.empirical_variances[self.order]


def rank_coefficients(coeffs: np.ndarray) -> CoefficientRanking:
    """Rank columns of an ``(n, K)`` coefficient matrix by variance (divisor n).

    Ties keep ascending flat-index order.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 2 or coeffs.shape[0] < 2:
        raise WaveletError("ranking needs at least two decompositions")
    var = coeffs.var(axis=0)
    order = np.argsort(-var, kind="stable")
    return CoefficientRanking(order, var)


def rank_by_variance(decomps: Sequence[WaveletDecomposition]) -> CoefficientRanking:
    if len(decomps) < 2:
        raise WaveletError("ranking needs at least two decompositions")
    spec, shape = decomps[0].spec, decomps[0].shape
    for dec in decomps[1:]:
        if dec.spec != spec or dec.shape != shape:
            raise WaveletError("decompositions use different specs or grids")
    return rank_coefficients(np.stack([dec.coeffs for dec in decomps]))
