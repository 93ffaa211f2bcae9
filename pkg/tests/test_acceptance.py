"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a PASS/FAIL line (shown in the terminal summary and with
``-s``) and then asserts, so failures are reported, never softened.
Set ``SOBOLMAP_LONG=1`` for the optional N = 1e5 total-index precision run.
"""

from __future__ import annotations

import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import campbell_ensemble, record
from sobolmap.campbell2d import (MARGINALS, Campbell2D, Campbell2DGrid, analytic_first_order_all,
                                 cached_output_variance, first_order_variance, output_variance)
from sobolmap.designs import MarginalDistribution, lhs
from sobolmap.field import GridField
from sobolmap.funcmeta import convergence_study, fit_functional_metamodel, q2
from sobolmap.gp import GpOptions, fit_gp
from sobolmap.sobol import (CountingEvaluator, FunctionEvaluator, bootstrap_sd, doubleloop_maps,
                            index_law_violations, rmae, saltelli_maps)
from sobolmap.wavelet import WaveletSpec, dwt2, idwt2

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
REFERENCE_RMAE = {1: 8.75, 2: 16.25, 3: 16.35, 4: 12.8, 6: 13.17, 7: 11.80, 8: 9.96}
WINDOW = 8.0
SEEDS = (1, 2, 3)

pytestmark = pytest.mark.acceptance


# -- shared Campbell2D state -----------------------------------------------------------

@pytest.fixture(scope="module")
def grid():
    return Campbell2DGrid()


@pytest.fixture(scope="module")
def exact_first(grid):
    var = cached_output_variance(grid, 10**6, 0, FIXTURES)
    return analytic_first_order_all(grid, variance=var)


@pytest.fixture(scope="module")
def test_maps(grid):
    return campbell_ensemble(1000, 999, grid)


_META: dict = {}


def metamodel(n: int, seed: int, grid):
    if (n, seed) not in _META:
        train = campbell_ensemble(n, seed, grid, maximin=True)
        _META[(n, seed)] = fit_functional_metamodel(train, WaveletSpec("db4"), method=3, k=30, k_prime=500)
    return _META[(n, seed)]


_MAPS: dict = {}  # every index-map set produced here, for the pointwise-law check


# -- 1 ---------------------------------------------------------------------------------

def test_criterion_01_wavelet_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_rt, worst_parseval = 0.0, 0.0
    for _ in range(100):
        f = GridField(rng.normal(scale=10.0, size=(64, 64)))
        energy = np.sum(f.values ** 2)
        for family in ("haar", "db4"):
            for levels in (1, None):
                dec = dwt2(f, WaveletSpec(family, levels))
                worst_rt = max(worst_rt, float(np.max(np.abs(idwt2(dec).values - f.values))))
                worst_parseval = max(worst_parseval, abs(np.sum(dec.coeffs ** 2) / energy - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_rt < 1e-10 and worst_parseval < 1e-9 and elapsed < 10
    record(1, ok, f"max round-trip {worst_rt:.2e} (<1e-10), Parseval {worst_parseval:.2e} (<1e-9), {elapsed:.1f}s (<10s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------------

def test_criterion_02_gp_interpolation():
    t0 = time.perf_counter()
    worst_mean, worst_var = 0.0, 0.0
    for s in range(50):
        rng = np.random.default_rng(100 + s)
        X = lhs(30, 8, seed=s).points
        a, b = rng.normal(size=8), rng.uniform(1, 4, 8)
        y = np.sin(X * b) @ a + 0.5 * (X[:, 0] - X[:, 1]) ** 2
        m = fit_gp(X, y, GpOptions(nugget=0.0, seed=s))
        worst_mean = max(worst_mean, float(np.max(np.abs(m.predict_mean(X) - y) / (1 + np.abs(y)))))
        worst_var = max(worst_var, float(np.max(m.predict_var(X)) / m.sigma2))
    elapsed = time.perf_counter() - t0
    ok = worst_mean <= 1e-8 and worst_var < 1e-8 and elapsed < 120
    record(2, ok, f"max |mean-y|/(1+|y|) {worst_mean:.1e}, max var/sigma2 {worst_var:.1e}, {elapsed:.1f}s (<120s)")
    assert ok


# -- 3 ---------------------------------------------------------------------------------

def test_criterion_03_estimator_sanity():
    t0 = time.perf_counter()
    N, d = 10_000, 5
    ev = CountingEvaluator(FunctionEvaluator(
        lambda X: np.broadcast_to((X[:, 0] + X[:, 1])[:, None, None], (X.shape[0], 2, 2)).copy(), d, (2, 2)))
    maps = saltelli_maps(ev, [MarginalDistribution.uniform(0, 1)] * d, N, seed=0)
    elapsed = time.perf_counter() - t0
    s1 = float(np.max(np.abs(maps.first_order[0] - 0.5)))
    gap = float(np.max(np.abs(maps.total - maps.first_order)))
    ok = s1 <= 0.02 and gap <= 0.02 and ev.count == N * (d + 2) and elapsed < 30
    _MAPS["additive toy"] = maps
    record(3, ok, f"|S1-0.5| {s1:.4f}, max|STi-Si| {gap:.4f}, evaluations {ev.count} (= {N * (d + 2)}), "
                  f"{elapsed:.1f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------------------

def test_criterion_04_analytic_vs_brute_force(grid, exact_first):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    pts = rng.uniform(-90, 90, (16, 2))
    brute = doubleloop_maps(Campbell2D(points=pts), MARGINALS, seed=4, excursion_tol=np.inf)
    var = output_variance(pts[:, 0], pts[:, 1], mc_n=10**6, seed=0)
    exact = np.stack([first_order_variance(i, pts[:, 0], pts[:, 1]) for i in range(1, 9)]) / var
    idx = [0, 1, 2, 3, 5, 6, 7]
    worst = float(np.max(np.abs(brute.first_order[idx, 0, :] - exact[idx])))
    s5_zero = bool(np.all(exact_first[4] == 0.0))
    s8_s6 = exact_first[7].tobytes() == exact_first[5].tobytes()
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and s5_zero and s8_s6 and elapsed < 600
    record(4, ok, f"max |analytic - nested MC| over 16 pixels {worst:.4f} (<=0.02), S5==0 {s5_zero}, "
                  f"S8==S6 {s8_s6}, {elapsed:.0f}s")
    assert ok


# -- 5 ---------------------------------------------------------------------------------

def _quadrant_means(a: np.ndarray) -> list[float]:
    h, w = a.shape[0] // 2, a.shape[1] // 2
    return [a[:h, :w].mean(), a[:h, w:].mean(), a[h:, :w].mean(), a[h:, w:].mean()]


def test_criterion_05_direct_total_reference(grid):
    maps = saltelli_maps(Campbell2D(grid), MARGINALS, 10_000, seed=5, batch=1000)
    _MAPS["Campbell2D direct N=1e4"] = maps
    st5 = float(maps.total[4].mean())
    st2 = maps.total[1]
    q = _quadrant_means(st2)
    top = int(np.argmax(q))
    h, w = st2.shape[0] // 2, st2.shape[1] // 2
    mask = np.ones(st2.shape, bool)
    mask[(top // 2) * h:(top // 2 + 1) * h, (top % 2) * w:(top % 2 + 1) * w] = False
    ratio = q[top] / float(st2[mask].mean())
    ok = st5 < 0.02 and ratio > 2.0
    record(5, ok, f"grid-mean S_T5 {st5:.4f} (<0.02), S_T2 top-quadrant/elsewhere {ratio:.2f} (>2)")
    assert ok


@pytest.mark.skipif(not os.environ.get("SOBOLMAP_LONG"), reason="set SOBOLMAP_LONG=1 for the N=1e5 run")
def test_criterion_05_optional_precision_run(grid):
    maps = saltelli_maps(Campbell2D(grid), MARGINALS, 100_000, seed=50, batch=1000)
    sd = bootstrap_sd(maps, B=100, seed=0)
    level = float(sd.total.mean())
    print(f"criterion 5 (optional): grid-mean bootstrap SD of S_Ti at N=1e5 = {level:.2e} (order 5e-3)")
    assert level < 1e-2


# -- 6 ---------------------------------------------------------------------------------

def test_criterion_06_metamodel_predictivity(grid, test_maps):
    t0 = time.perf_counter()
    q200 = q2(metamodel(200, 1, grid), test_maps)
    q500 = q2(metamodel(500, 1, grid), test_maps)
    elapsed = time.perf_counter() - t0
    ok = q200 >= 0.88 and q500 >= 0.93 and elapsed < 7200
    record(6, ok, f"Q2(n=200) {q200:.4f} (>=0.88; reference 0.929), Q2(n=500) {q500:.4f} (>=0.93; reference 0.966), "
                  f"{elapsed:.0f}s")
    assert ok


# -- 7 ---------------------------------------------------------------------------------

def test_criterion_07_method_ordering(grid, test_maps):
    lines, ok = [], True
    for seed in SEEDS:
        train = campbell_ensemble(200, seed, grid, maximin=True)
        res = convergence_study(train, test_maps, [30, 50], [200], methods=(1, 2, 3), k_prime=500, seed=seed)
        e = {(m, k): v for m, k, _, v in res.rows}
        order_ok = e[(3, 30)] <= e[(1, 30)] <= e[(2, 30)]
        plateau = abs(e[(3, 30)] - e[(3, 50)]) / e[(3, 50)]
        ok &= order_ok and plateau <= 0.10
        lines.append(f"seed {seed}: MSE m3 {e[(3, 30)]:.4f} m1 {e[(1, 30)]:.4f} m2 {e[(2, 30)]:.4f}, "
                     f"m3 k30 vs k50 {100 * plateau:.1f}%")
    record(7, ok, "; ".join(lines))
    assert ok


# -- 8 ---------------------------------------------------------------------------------

def test_criterion_08_reference_rmae(grid, exact_first):
    passes, lines = 0, []
    for seed in SEEDS:
        maps = doubleloop_maps(metamodel(200, seed, grid), MARGINALS, seed=seed)
        _MAPS[f"metamodel double loop seed {seed}"] = maps
        errs = {i: 100 * rmae(maps.first_order[i - 1], exact_first[i - 1]) for i in REFERENCE_RMAE}
        bad = [i for i in REFERENCE_RMAE if abs(errs[i] - REFERENCE_RMAE[i]) > WINDOW]
        passes += not bad
        lines.append(f"seed {seed}: " + " ".join(f"X{i} {errs[i]:.1f}" for i in REFERENCE_RMAE)
                     + (f" outside window for X{','.join(map(str, bad))}" if bad else " all within window"))
    ok = passes >= 2
    record(8, ok, f"{passes}/3 seeds pass (need 2); rMAE % vs reference +-{WINDOW:.0f}: " + "; ".join(lines))
    assert ok


# -- 9 ---------------------------------------------------------------------------------

def test_criterion_09_index_laws():
    if not _MAPS:
        pytest.skip("no index maps produced in this session")
    worst, lines = 1.0, []
    for name, maps in _MAPS.items():
        sd = bootstrap_sd(maps, B=100, seed=9)
        v = index_law_violations(maps, sd)
        frac_ok = min(1.0 - float(np.max(v["total_below_first"])), 1.0 - v["sum_above_one"])
        worst = min(worst, frac_ok)
        lines.append(f"{name} {100 * frac_ok:.2f}%")
    ok = worst >= 0.99
    record(9, ok, "pixels satisfying both laws (>=99%): " + ", ".join(lines))
    assert ok


# -- 10 --------------------------------------------------------------------------------

def test_criterion_10_cli_reproducibility(tmp_path):
    from sobolmap.cli import main

    d = tmp_path
    (d / "run.ini").write_text(
        "[pipeline]\nseed = 3\n[design]\nn = 20\nsweeps = 5\n[model]\ngrid = 8x8\n[test]\nn = 20\n"
        "[fit]\nk = 3\nk_prime = 10\nrestarts = 1\n[validate]\nfolds = 2\n"
        "[sobol]\nn = 32\nbootstrap = 5\n[oracle]\nmc_n = 5000\n")
    fit = ["--k", "3", "--k-prime", "10", "--restarts", "1"]
    stages = {
        "design": ["design", "--n", "20", "--bounds", "campbell2d", "--seed", "1", "-o", d / "design.csv"],
        "eval": ["eval", "--design", d / "design.csv", "--model", "campbell2d", "--grid", "8x8", "-o", d / "ens"],
        "decompose": ["decompose", d / "ens", "-o", d / "rank.csv"],
        "fit": ["fit", "--ensemble", d / "ens", *fit, "-o", d / "meta"],
        "predict": ["predict", "--model", d / "meta", "--design", d / "design.csv", "-o", d / "pred"],
        "validate": ["validate", "--model", d / "meta", "--test", d / "ens", "--ensemble", d / "ens", "--folds", "2",
                     *fit, "-o", d / "val.txt"],
        "converge": ["converge", "--ensemble", d / "ens", "--test", d / "ens", "--k-grid", "1,3", "--n-grid", "15,20",
                     "--restarts", "1", "--k-prime", "10", "-o", d / "conv.csv"],
        "sobol saltelli": ["sobol", "--evaluator", f"meta:{d / 'meta'}", "--N", "50", "--bootstrap", "5",
                           "-o", d / "sal"],
        "sobol doubleloop": ["sobol", "--evaluator", f"meta:{d / 'meta'}", "--estimator", "doubleloop",
                             "--n-outer-i", "10", "--n-inner-i", "10", "--n-outer-noti", "10", "--n-inner-noti", "10",
                             "--n-var", "50", "-o", d / "dl"],
        "campbell2d": ["campbell2d", "--x", "5,3,1,-1,5,3,1,-1", "--grid", "8x8", "-o", d / "c.fld"],
        "campbell2d-oracle": ["campbell2d-oracle", "--index", "2", "--grid", "8x8", "--mc-n", "5000",
                              "-o", d / "o.fld"],
        "plot": ["plot", d / "o.fld", d / "c.fld", "--shared-scale", "-o", d / "plots"],
        "pipeline": ["pipeline", "--config", d / "run.ini", "--workdir", d / "pipe"],
    }

    def snapshot():
        return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
                if p.is_file() and p.name != "sobol_runtime.txt"}

    codes = {name: main([str(a) for a in argv]) for name, argv in stages.items()}
    first = snapshot()
    codes2 = {name: main([str(a) for a in argv]) for name, argv in stages.items()}
    second = snapshot()
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = all(c == 0 for c in codes.values()) and all(c == 0 for c in codes2.values()) and not differing
    record(10, ok, f"{len(stages)} stages run twice, {len(first)} artifacts compared, "
                   f"{len(differing)} differ" + (f": {differing[:5]}" if differing else ""))
    assert ok
