"""Heatmaps of maps as plain (P3) portable pixmaps."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

# fixed ramp: dark blue, blue, cyan, yellow, red, dark red
_RAMP = np.array([
    [0, 0, 131], [0, 60, 255], [0, 255, 255], [255, 255, 0], [255, 0, 0], [128, 0, 0],
], dtype=float)
NAN_COLOR = (255, 0, 255)


def colorize(values: np.ndarray, vmin: float | None = None, vmax: float | None = None,
             nan_color: Sequence[int] = NAN_COLOR) -> np.ndarray:
    """Map values to ``(nr, nc, 3)`` uint8 colors on the fixed ramp.

    ``vmin``/``vmax`` default to the finite data range; values outside are
    clipped. NaN cells get ``nan_color``. A flat field maps to the ramp start.
    """
    vals = np.asarray(values, dtype=float)
    finite = np.isfinite(vals)
    lo = float(np.min(vals[finite])) if vmin is None and finite.any() else (vmin or 0.0)
    hi = float(np.max(vals[finite])) if vmax is None and finite.any() else (vmax if vmax is not None else 1.0)
    span = hi - lo
    t = np.zeros_like(vals) if span <= 0 else np.clip((np.where(finite, vals, lo) - lo) / span, 0.0, 1.0)
    pos = t * (len(_RAMP) - 1)
    i0 = np.minimum(pos.astype(int), len(_RAMP) - 2)
    frac = (pos - i0)[..., None]
    rgb = np.rint(_RAMP[i0] * (1.0 - frac) + _RAMP[i0 + 1] * frac).astype(np.uint8)
    rgb[~finite] = np.asarray(nan_color, dtype=np.uint8)
    return rgb


def write_ppm(values: np.ndarray, path, vmin: float | None = None, vmax: float | None = None,
              zoom: int = 1, nan_color: Sequence[int] = NAN_COLOR) -> None:
    """Write a heatmap; row 0 of the array is the top image row."""
    rgb = colorize(values, vmin, vmax, nan_color)
    if zoom > 1:
        rgb = rgb.repeat(zoom, axis=0).repeat(zoom, axis=1)
    h, w = rgb.shape[:2]
    body = "\n".join(" ".join(str(int(v)) for v in row.ravel()) for row in rgb)
    try:
        Path(path).write_text(f"P3\n{w} {h}\n255\n{body}\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    """Read a P3 pixmap back into ``(h, w, 3)`` uint8 (used for audits)."""
    tokens = Path(path).read_text().split()
    if tokens[0] != "P3":
        raise ValueError(f"{path}: not a plain PPM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.array(tokens[4:4 + 3 * w * h], dtype=np.uint8)
    return data.reshape(h, w, 3)


def shared_range(arrays: Sequence[np.ndarray]) -> tuple[float, float]:
    """Common finite min/max over several maps."""
    lo = min(float(np.nanmin(a)) for a in arrays)
    hi = max(float(np.nanmax(a)) for a in arrays)
    return lo, hi
