"""Rebuild the cached Campbell2D reference fixtures.

Usage: python3 fixtures/generate.py [--force] [--with-total]

Writes ``var_64x64_n1000000_seed0.fld`` (Monte Carlo output variance per
pixel, 1e6 draws, seed 0) and a ``MANIFEST.txt`` with seeds and digests.
``--with-total`` also stores the direct Saltelli reference (N=1e5, seed 0),
which takes well over an hour on one core.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from sobolmap.campbell2d import (
    Campbell2DGrid,
    cached_output_variance,
    exact_total_reference,
    fixture_digest,
)

HERE = Path(__file__).resolve().parent


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--force", action="store_true", help="recompute even when a cached file exists")
    ap.add_argument("--with-total", action="store_true")
    args = ap.parse_args(argv)
    grid = Campbell2DGrid()
    target = HERE / "var_64x64_n1000000_seed0.fld"
    if args.force:
        target.unlink(missing_ok=True)
    t0 = time.time()
    var = cached_output_variance(grid, 10**6, 0, HERE)
    lines = [
        f"{target.name}: Var(Y) per pixel, 64x64 grid on [-90,90]^2, MC n=1000000, seed 0, "
        f"sha256[:16] of float64 values {fixture_digest(var)}"
    ]
    if args.with_total:
        maps = exact_total_reference(grid, N=10**5, seed=0, cache_dir=HERE)
        lines.append(f"saltelli_64x64_N100000_seed0/: total-index digest {fixture_digest(maps.total)}")
    (HERE / "MANIFEST.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"done in {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
