"""Compiled vs numpy kernel timings, plus the backend's per-call choice.

Usage: python3 benchmarks/bench_kernels.py [--repeat R] [--csv out.csv]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sobolmap import _backend, _kernels_py

try:
    from sobolmap import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def cases(rng: np.random.Generator) -> dict:
    X200 = rng.uniform(size=(200, 8))
    theta = rng.uniform(0.5, 10, 8)
    p = np.full(8, 2.0)
    p_frac = np.full(8, 1.5)
    M = rng.normal(size=(200, 200))
    U = rng.uniform(size=(2000, 8))
    G = 30
    Xs = rng.uniform(size=(G, 200, 8))
    thetas = rng.uniform(0.5, 10, (G, 8))
    ps = np.full((G, 8), 1.7)
    W = rng.normal(size=(G, 200))
    Xc = rng.uniform(-1, 5, (256, 8))
    z = np.linspace(-90, 90, 64)
    z1, z2 = (np.ascontiguousarray(a.ravel()) for a in np.meshgrid(z, z, indexing="ij"))
    return {
        "corr_matrix n=200 d=8 p=2": ("corr_matrix", (X200, theta, p)),
        "corr_matrix n=200 d=8 p=1.5": ("corr_matrix", (X200, theta, p_frac)),
        "cross_corr 2000x200 d=8": ("cross_corr", (U, X200, theta, p)),
        "corr_grad n=200 with p": ("corr_grad", (X200, p_frac, M, True)),
        "kriging_sums 2000 pts, 30 GPs p=1.7": ("kriging_sums", (U, Xs, thetas, ps, W)),
        "kriging_sums 2000 pts, 30 GPs p=1": ("kriging_sums", (U, Xs, thetas, np.ones((G, 8)), W)),
        "campbell2d 256 inputs x 64x64": ("campbell2d", (Xc, z1, z2)),
    }


def best_time(fn, args, repeat: int) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    rows = []
    for label, (name, fargs) in cases(np.random.default_rng(0)).items():
        t_py = best_time(getattr(_kernels_py, name), fargs, args.repeat)
        t_c = best_time(getattr(_compiled, name), fargs, args.repeat) if _compiled else float("nan")
        if _compiled:
            a = np.asarray(getattr(_compiled, name)(*fargs), dtype=object if name == "corr_grad" else float)
            b = np.asarray(getattr(_kernels_py, name)(*fargs), dtype=object if name == "corr_grad" else float)
            if name != "corr_grad":
                assert np.allclose(a, b, rtol=1e-10, atol=1e-12), label
        t_d = best_time(getattr(_backend, name), fargs, args.repeat)
        rows.append((label, t_py, t_c, t_d))
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy ms':>10}  {'cython ms':>10}  {'speedup':>8}  {'dispatched ms':>13}")
    for label, t_py, t_c, t_d in rows:
        print(f"{label:<{width}}  {1e3 * t_py:10.2f}  {1e3 * t_c:10.2f}  {t_py / t_c:7.1f}x  {1e3 * t_d:13.2f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("kernel,numpy_seconds,cython_seconds,dispatched_seconds\n")
            fh.writelines(f"{label},{t_py!r},{t_c!r},{t_d!r}\n" for label, t_py, t_c, t_d in rows)


if __name__ == "__main__":
    main()
