"""Spatial maps on dyadic grids, ensembles of maps, and their text formats.

``.fld`` layout: a header line ``nr nc z1_min z1_max z2_min z2_max``
followed by the ``nr * nc`` values one per line in row-major order. Rows
run along ``z1`` and columns along ``z2``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .designs import InputDesign, read_design_csv, write_design_csv


class FieldFormatError(ValueError):
    """Malformed map file, grid mismatch or invalid grid geometry."""


def is_pow2(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class GridField:
    values: np.ndarray
    z1_range: tuple[float, float] = (0.0, 1.0)
    z2_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2:
            raise FieldFormatError("field values must be a 2-D array")
        nr, nc = vals.shape
        if not (is_pow2(nr) and is_pow2(nc)):
            raise FieldFormatError(f"grid {nr}x{nc} is not a power of two per axis")
        if not np.all(np.isfinite(vals)):
            raise FieldFormatError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "z1_range", (float(self.z1_range[0]), float(self.z1_range[1])))
        object.__setattr__(self, "z2_range", (float(self.z2_range[0]), float(self.z2_range[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def geometry(self) -> tuple:
        return self.shape + self.z1_range + self.z2_range

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (inclusive of range endpoints), as ``(z1, z2)`` meshes."""
        nr, nc = self.shape
        z1 = np.linspace(*self.z1_range, nr)
        z2 = np.linspace(*self.z2_range, nc)
        return np.meshgrid(z1, z2, indexing="ij")

    def like(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.z1_range, self.z2_range)


@dataclass(frozen=True)
class FieldEnsemble:
    """n maps sharing one grid, paired row-for-row with an input design."""

    design: InputDesign
    values: np.ndarray  # (n, nr, nc)
    z1_range: tuple[float, float] = (0.0, 1.0)
    z2_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise FieldFormatError("ensemble values must be (n, nr, nc)")
        if vals.shape[0] != self.design.n:
            raise FieldFormatError(f"{vals.shape[0]} maps for a design of {self.design.n} points")
        if not (is_pow2(vals.shape[1]) and is_pow2(vals.shape[2])):
            raise FieldFormatError("ensemble grid is not a power of two per axis")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_fields(cls, design: InputDesign, fields: Sequence[GridField]) -> "FieldEnsemble":
        if not fields:
            raise FieldFormatError("empty ensemble")
        geo = fields[0].geometry
        for f in fields[1:]:
            if f.geometry != geo:
                raise FieldFormatError("ensemble fields do not share one grid geometry")
        return cls(design, np.stack([f.values for f in fields]), fields[0].z1_range, fields[0].z2_range)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def field(self, i: int) -> GridField:
        return GridField(self.values[i], self.z1_range, self.z2_range)

    def fields(self) -> list[GridField]:
        return [self.field(i) for i in range(self.n)]

    def wrap(self, values: np.ndarray) -> GridField:
        return GridField(values, self.z1_range, self.z2_range)

    def subset(self, rows) -> "FieldEnsemble":
        rows = np.asarray(rows, dtype=int)
        return FieldEnsemble(self.design.subset(rows), self.values[rows], self.z1_range, self.z2_range)

    def same_grid(self, other: "FieldEnsemble") -> bool:
        return (self.shape == other.shape and self.z1_range == other.z1_range
                and self.z2_range == other.z2_range)


def mean_field(ensemble: FieldEnsemble) -> GridField:
    if ensemble.n < 1:
        raise FieldFormatError("mean of an empty ensemble")
    return ensemble.wrap(ensemble.values.mean(axis=0))


def variance_field(ensemble: FieldEnsemble) -> GridField:
    """Pointwise sample variance with divisor n - 1."""
    if ensemble.n < 2:
        raise FieldFormatError("variance needs at least two maps")
    return ensemble.wrap(ensemble.values.var(axis=0, ddof=1))


# -- .fld text format ---------------------------------------------------------

def format_field(field: GridField) -> str:
    nr, nc = field.shape
    head = " ".join([str(nr), str(nc)] + [repr(v) for v in field.z1_range + field.z2_range])
    body = "\n".join(map(repr, field.values.ravel().tolist()))
    return head + "\n" + body + "\n"


def write_field(field: GridField, path) -> None:
    Path(path).write_text(format_field(field))


def write_array_field(values: np.ndarray, path, z1_range=(0.0, 1.0), z2_range=(0.0, 1.0)) -> None:
    """Write values that may contain NaN (index maps) in ``.fld`` layout."""
    values = np.asarray(values, dtype=float)
    nr, nc = values.shape
    if not (is_pow2(nr) and is_pow2(nc)):
        raise FieldFormatError(f"grid {nr}x{nc} is not a power of two per axis")
    head = " ".join([str(nr), str(nc)] + [repr(float(v)) for v in tuple(z1_range) + tuple(z2_range)])
    Path(path).write_text(head + "\n" + "\n".join(map(repr, values.ravel().tolist())) + "\n")


def read_array_field(path) -> tuple[np.ndarray, tuple[float, float], tuple[float, float]]:
    lines = Path(path).read_text().split()
    if len(lines) < 6:
        raise FieldFormatError(f"{path}: malformed header")
    try:
        nr, nc = int(lines[0]), int(lines[1])
        rng = [float(v) for v in lines[2:6]]
    except ValueError:
        raise FieldFormatError(f"{path}: malformed header") from None
    if not (is_pow2(nr) and is_pow2(nc)):
        raise FieldFormatError(f"{path}: grid {nr}x{nc} is not a power of two per axis")
    body = lines[6:]
    if len(body) != nr * nc:
        raise FieldFormatError(f"{path}: expected {nr * nc} values, found {len(body)}")
    try:
        vals = np.array([float(v) for v in body]).reshape(nr, nc)
    except ValueError:
        raise FieldFormatError(f"{path}: non-numeric cell") from None
    return vals, (rng[0], rng[1]), (rng[2], rng[3])


def read_field(path) -> GridField:
    vals, r1, r2 = read_array_field(path)
    if not np.all(np.isfinite(vals)):
        raise FieldFormatError(f"{path}: non-finite cell")
    return GridField(vals, r1, r2)


# -- ensemble directories -----------------------------------------------------

def _map_name(i: int) -> str:
    return f"map_{i + 1:04d}.fld"


def write_ensemble(ensemble: FieldEnsemble, directory, x_native: np.ndarray | None = None) -> None:
    """Write ``design.csv``, ``map_0001.fld``... and ``manifest.txt``."""
    from .designs import scale

    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    x = scale(ensemble.design) if x_native is None else x_native
    write_design_csv(out / "design.csv", x)
    if all(m.kind == "uniform" for m in ensemble.design.marginals):
        rows = ["name,lower,upper"] + [f"x{j + 1},{m.lower!r},{m.upper!r}"
                                      for j, m in enumerate(ensemble.design.marginals)]
        (out / "bounds.csv").write_text("\n".join(rows) + "\n")
    lines = [
        f"n {ensemble.n}",
        f"grid {ensemble.shape[0]} {ensemble.shape[1]} "
        + " ".join(repr(v) for v in ensemble.z1_range + ensemble.z2_range),
    ]
    for i in range(ensemble.n):
        text = format_field(ensemble.field(i))
        (out / _map_name(i)).write_text(text)
        lines.append(f"{_map_name(i)} {hashlib.sha256(text.encode()).hexdigest()}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_ensemble(directory, marginals=None, verify: bool = True) -> FieldEnsemble:
    """Load an ensemble directory; checksums are verified against the manifest.

    Marginals default to ``bounds.csv`` when present, else the data range.
    """
    from .designs import MarginalDistribution, design_from_native, read_bounds_csv

    src = Path(directory)
    x = read_design_csv(src / "design.csv")
    manifest = (src / "manifest.txt").read_text().splitlines() if (src / "manifest.txt").exists() else []
    sums = dict(line.split() for line in manifest[2:] if line.strip())
    fields = []
    for i in range(x.shape[0]):
        path = src / _map_name(i)
        if not path.exists():
            raise FieldFormatError(f"{src}: missing {_map_name(i)}")
        if verify and sums:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if sums.get(path.name) != digest:
                raise FieldFormatError(f"{path}: checksum mismatch with manifest")
        fields.append(read_field(path))
    if marginals is None and (src / "bounds.csv").exists():
        marginals = read_bounds_csv(src / "bounds.csv")
    if marginals is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        marginals = [MarginalDistribution.uniform(a, b) for a, b in zip(lo, hi)]
    design = design_from_native(x, marginals)
    return FieldEnsemble.from_fields(design, fields)


def read_design_rows(directory) -> np.ndarray:
    return read_design_csv(Path(directory) / "design.csv")
