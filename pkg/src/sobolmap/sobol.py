"""Per-pixel Sobol' index maps: pick-freeze and double-loop Monte Carlo estimators.

An *evaluator* is any callable taking an ``(m, d)`` array of inputs in native
units and returning an ``(m, nr, nc)`` array of maps. It also exposes
``d``, ``shape`` and optionally ``z1_range``/``z2_range``. An evaluator may
offer ``mean_maps(Xg)`` for ``(g, m, d)`` groups, returning the ``(g, nr*nc)``
group means directly; the double-loop estimator uses it when present.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .designs import MarginalDistribution, sample_native
from .field import FieldFormatError, GridField, read_array_field, write_array_field

logger = logging.getLogger(__name__)


class EvaluatorError(RuntimeError):
    """The evaluator raised or returned malformed output for some input row."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = x


class ReferenceMeanError(ValueError):
    """rMAE is undefined for a reference map whose grid mean is zero."""


class CountingEvaluator:
    """Wraps an evaluator and counts the input rows it has been asked to evaluate."""

    def __init__(self, evaluator):
        self.inner = evaluator
        self.count = 0
        self.d = evaluator.d
        self.shape = tuple(evaluator.shape)
        self.z1_range = getattr(evaluator, "z1_range", (0.0, 1.0))
        self.z2_range = getattr(evaluator, "z2_range", (0.0, 1.0))

    def __call__(self, X):
        X = np.atleast_2d(X)
        self.count += X.shape[0]
        return self.inner(X)


class FunctionEvaluator:
    """Adapter for a plain ``f(X) -> (m, nr, nc)`` callable."""

    def __init__(self, func, d: int, shape: tuple[int, int], z1_range=(0.0, 1.0), z2_range=(0.0, 1.0)):
        self.func = func
        self.d = d
        self.shape = tuple(shape)
        self.z1_range = z1_range
        self.z2_range = z2_range

    def __call__(self, X):
        return self.func(np.atleast_2d(X))


def _evaluate(evaluator, X: np.ndarray) -> np.ndarray:
    """Evaluate rows, returning ``(m, npix)``; failures name the offending input."""
    m = X.shape[0]
    npix = int(np.prod(evaluator.shape))
    try:
        Y = np.asarray(evaluator(X), dtype=float)
    except Exception as exc:
        for row in X:  # locate the first failing row
            try:
                evaluator(row[None, :])
            except Exception:
                raise EvaluatorError(f"evaluator failed at x={row.tolist()}: {exc}", row) from exc
        raise EvaluatorError(f"evaluator failed on a batch of {m} rows: {exc}") from exc
    if Y.size != m * npix:
        raise EvaluatorError(f"evaluator returned {Y.shape}, expected ({m}, {evaluator.shape})")
    return Y.reshape(m, npix)


@dataclass
class SensitivityMaps:
    """First-order and total index maps, each ``(d, nr, nc)``; NaN marks failed pixels."""

    first_order: np.ndarray
    total: np.ndarray
    meta: dict
    z1_range: tuple[float, float] = (0.0, 1.0)
    z2_range: tuple[float, float] = (0.0, 1.0)
    artifacts: object = field(default=None, repr=False, compare=False)
    runtime: float = field(default=0.0, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.first_order.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.first_order.shape[1:]

    def first_field(self, i: int) -> GridField:
        """First-order map of input ``i`` (1-based)."""
        return GridField(self.first_order[i - 1], self.z1_range, self.z2_range)

    def total_field(self, i: int) -> GridField:
        return GridField(self.total[i - 1], self.z1_range, self.z2_range)

    def save(self, directory, write_runtime: bool = True) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(self.d):
            write_array_field(self.first_order[i], out / f"S_{i + 1}.fld", self.z1_range, self.z2_range)
            write_array_field(self.total[i], out / f"ST_{i + 1}.fld", self.z1_range, self.z2_range)
        lines = [f"{k} {v}" for k, v in self.meta.items()]
        (out / "sobol_meta.txt").write_text("\n".join(lines) + "\n")
        if write_runtime:
            # kept apart from the numeric artifacts so reruns stay byte-identical
            (out / "sobol_runtime.txt").write_text(f"runtime_seconds {self.runtime:.3f}\n")

    @classmethod
    def load(cls, directory) -> "SensitivityMaps":
        src = Path(directory)
        meta = {}
        for line in (src / "sobol_meta.txt").read_text().splitlines():
            if line.strip():
                key, _, val = line.partition(" ")
                meta[key] = _parse_meta(val)
        d = int(meta["d"])
        first, total = [], []
        for i in range(1, d + 1):
            s, r1, r2 = read_array_field(src / f"S_{i}.fld")
            t, q1, q2 = read_array_field(src / f"ST_{i}.fld")
            if (q1, q2) != (r1, r2) or s.shape != t.shape:
                raise FieldFormatError(f"{src}: index maps do not share a grid")
            first.append(s)
            total.append(t)
        return cls(np.stack(first), np.stack(total), meta, r1, r2)


def _parse_meta(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _finish(first, total, evaluator, meta, excursion_tol, clamp) -> SensitivityMaps:
    d = first.shape[0]
    shape = tuple(evaluator.shape)
    first = first.reshape((d,) + shape)
    total = total.reshape((d,) + shape)
    bad = np.isnan(first).any(axis=0) | np.isnan(total).any(axis=0)
    meta["nan_pixels"] = int(bad.sum())
    if meta["nan_pixels"]:
        logger.warning("%d pixels produced NaN indices", meta["nan_pixels"])
    with np.errstate(invalid="ignore"):
        both = np.concatenate([first, total])
        excursion = float(np.nanmax(np.maximum(-both, both - 1.0), initial=0.0))
    meta["max_excursion"] = max(excursion, 0.0)
    if excursion > excursion_tol:
        warnings.warn(f"index estimates leave [0, 1] by {excursion:.3g} (> {excursion_tol})", stacklevel=3)
    if clamp:
        first = np.clip(first, 0.0, 1.0)
        total = np.clip(total, 0.0, 1.0)
    return SensitivityMaps(first, total, meta,
                           tuple(getattr(evaluator, "z1_range", (0.0, 1.0))),
                           tuple(getattr(evaluator, "z2_range", (0.0, 1.0))))


# -- pick-freeze estimator -------------------------------------------------------

@dataclass
class SaltelliArtifacts:
    evaluator: object
    A: np.ndarray
    B: np.ndarray
    batch: int
    shift: np.ndarray


def _saltelli_sums(evaluator, A, B, weights, batch, shift=None):
    """Weighted per-pixel sums over pick-freeze rows.

    ``weights`` is ``(R, N)``: one row of ones for the plain estimate, or
    multinomial counts for bootstrap replicates. Outputs are shifted by a
    per-pixel constant (the first batch mean) to avoid cancellation.
    """
    N, d = A.shape
    R = weights.shape[0]
    npix = int(np.prod(evaluator.shape))
    sA = np.zeros((R, npix))
    sB = np.zeros((R, npix))
    sQ = np.zeros((R, npix))
    P = np.zeros((d, R, npix))
    D = np.zeros((d, R, npix))
    T = np.zeros((d, R, npix))
    for start in range(0, N, batch):
        rows = slice(start, min(start + batch, N))
        a, b = A[rows], B[rows]
        yA = _evaluate(evaluator, a)
        yB = _evaluate(evaluator, b)
        if shift is None:
            shift = 0.5 * (yA.mean(axis=0) + yB.mean(axis=0))
        yA -= shift
        yB -= shift
        w = weights[:, rows]
        sA += w @ yA
        sB += w @ yB
        sQ += w @ (yA * yA + yB * yB)
        for i in range(d):
            hybrid = a.copy()
            hybrid[:, i] = b[:, i]
            diff = _evaluate(evaluator, hybrid) - shift - yA
            P[i] += w @ (yB * diff)
            D[i] += w @ diff
            T[i] += w @ (diff * diff)
    return (sA, sB, sQ, P, D, T), shift


def _saltelli_indices(sums, N):
    """First-order and total indices from weighted sums, each ``(d, R, npix)``.

    With ``y_C`` the output at A with column i taken from B:

    * ``Var[E(Y|X_i)]`` is the covariance of ``y_B`` and ``y_C - y_A`` (the
      two rows share only ``x_i``), computed around the pooled A/B mean;
    * ``E[Var(Y|X_~i)]`` is ``(1/2N) sum (y_A - y_C)^2`` (rows share all but ``x_i``);

    both divided by the pooled A/B variance.
    """
    sA, sB, sQ, P, D, T = sums
    m = (sA + sB) / (2 * N)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (sQ - 2 * N * m * m) / (2 * N - 1)
        first = (P - m * D) / N / var
        total = T / (2 * N) / var
    zero = var <= 0.0
    if np.any(zero):
        # constant pixels carry no variance to apportion
        first = np.where(zero & ~np.isnan(var), 0.0, first)
        total = np.where(zero & ~np.isnan(var), 0.0, total)
    return first, total


def saltelli_maps(evaluator, marginals: Sequence[MarginalDistribution], N: int, seed=0,
                  batch: int = 256, excursion_tol: float = 0.1, clamp: bool = False) -> SensitivityMaps:
    """Pick-freeze estimate of all first-order and total index maps.

    Makes exactly ``N (d + 2)`` evaluator calls, streamed ``batch`` rows at a
    time. The returned maps keep the sample matrices in ``artifacts`` for
    :func:`bootstrap_sd`.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if batch < 1:
        raise ValueError("batch must be positive")
    d = len(marginals)
    if d != evaluator.d:
        raise ValueError(f"{d} marginals for an evaluator of dimension {evaluator.d}")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    A = sample_native(N, marginals, rng)
    B = sample_native(N, marginals, rng)
    sums, shift = _saltelli_sums(evaluator, A, B, np.ones((1, N)), batch)
    first, total = _saltelli_indices(sums, N)
    meta = {"estimator": "saltelli", "d": d, "N": N, "seed": seed, "eval_count": N * (d + 2)}
    maps = _finish(first[:, 0], total[:, 0], evaluator, meta, excursion_tol, clamp)
    maps.artifacts = SaltelliArtifacts(evaluator, A, B, batch, shift)
    maps.runtime = time.perf_counter() - t0
    return maps


# -- double-loop estimator -------------------------------------------------------

@dataclass(frozen=True)
class DoubleLoopBudget:
    """Sample sizes for the nested estimator.

    ``n_inner_i`` draws of the other inputs average the output for each of
    ``n_outer_i`` values of ``x_i``; the complementary nesting fixes the
    other inputs (``n_outer_noti`` times) and averages over ``n_inner_noti``
    draws of ``x_i``.
    """

    n_outer_i: int = 200
    n_inner_i: int = 1000
    n_outer_noti: int = 1000
    n_inner_noti: int = 100
    n_var: int = 20000

    def __post_init__(self):
        if min(self.n_outer_i, self.n_inner_i, self.n_outer_noti, self.n_inner_noti, self.n_var) < 2:
            raise ValueError("all double-loop budgets must be at least 2")

    def eval_count(self, d: int) -> int:
        return d * (self.n_outer_i * self.n_inner_i + self.n_outer_noti * self.n_inner_noti) + self.n_var


@dataclass
class DoubleLoopArtifacts:
    first_means: np.ndarray  # (d, n_outer_i, npix) conditional means given x_i
    total_means: np.ndarray  # (d, n_outer_noti, npix) conditional means given x_~i
    var_sums: np.ndarray  # (groups, 2, npix) shifted sums of y and y^2
    group_sizes: np.ndarray
    shift: np.ndarray


def group_means(evaluator, Xg: np.ndarray, batch: int = 256) -> np.ndarray:
    """Mean output map of each group in ``Xg (g, m, d)``, shape ``(g, npix)``."""
    if hasattr(evaluator, "mean_maps"):
        return np.asarray(evaluator.mean_maps(Xg), dtype=float)
    g, m, d = Xg.shape
    npix = int(np.prod(evaluator.shape))
    out = np.empty((g, npix))
    if m >= batch:
        for k in range(g):
            acc = np.zeros(npix)
            for start in range(0, m, batch):
                acc += _evaluate(evaluator, Xg[k, start:start + batch]).sum(axis=0)
            out[k] = acc / m
        return out
    per = max(1, batch // m)
    for start in range(0, g, per):
        chunk = Xg[start:start + per]
        Y = _evaluate(evaluator, chunk.reshape(-1, d))
        out[start:start + chunk.shape[0]] = Y.reshape(chunk.shape[0], m, npix).mean(axis=1)
    return out


def _nested(marginals, fixed, n_outer, n_inner, rng, sampling):
    """Groups of inputs sharing the columns in ``fixed``: ``(n_outer, n_inner, d)``."""
    d = len(marginals)
    free = [j for j in range(d) if j not in fixed]
    Xg = np.empty((n_outer, n_inner, d))
    outer = sample_native(n_outer, [marginals[j] for j in fixed], rng, sampling)
    Xg[:, :, fixed] = outer[:, None, :]
    sub = [marginals[j] for j in free]
    for o in range(n_outer):
        Xg[o][:, free] = sample_native(n_inner, sub, rng, sampling)
    return Xg


def doubleloop_maps(evaluator, marginals: Sequence[MarginalDistribution],
                    budget: DoubleLoopBudget = DoubleLoopBudget(), seed=0, sampling: str = "lhs",
                    batch: int = 256, var_groups: int = 100, excursion_tol: float = 0.1,
                    clamp: bool = False) -> SensitivityMaps:
    """Nested Monte Carlo estimate of ``Var[E(Y|X_i)]`` and ``Var[E(Y|X_~i)]`` per pixel.

    ``S_i = Var[E(Y|X_i)] / Var(Y)`` and ``S_Ti = 1 - Var[E(Y|X_~i)] / Var(Y)``,
    with ``Var(Y)`` from ``n_var`` separate draws. By default every outer and
    inner sample is a Latin hypercube; ``sampling="mc"`` draws them
    independently. Stratifying the 200 outer values of ``x_i`` removes most
    of the sampling noise in ``Var[E(Y|X_i)]`` at the default budgets.
    """
    if sampling not in ("mc", "lhs"):
        raise ValueError(f"unknown sampling {sampling!r}")
    d = len(marginals)
    if d != evaluator.d:
        raise ValueError(f"{d} marginals for an evaluator of dimension {evaluator.d}")
    t0 = time.perf_counter()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2 * d + 1)]
    npix = int(np.prod(evaluator.shape))

    # Var(Y), kept as group sums for the bootstrap
    groups = max(1, min(var_groups, budget.n_var // 2))
    sizes = np.diff(np.linspace(0, budget.n_var, groups + 1).astype(int))
    X = sample_native(budget.n_var, marginals, streams[0], sampling)
    var_sums = np.empty((groups, 2, npix))
    shift = None
    start = 0
    for g, size in enumerate(sizes):
        acc1 = np.zeros(npix)
        acc2 = np.zeros(npix)
        for s in range(start, start + size, batch):
            Y = _evaluate(evaluator, X[s:min(s + batch, start + size)])
            if shift is None:
                shift = Y.mean(axis=0)
            Y -= shift
            acc1 += Y.sum(axis=0)
            acc2 += (Y * Y).sum(axis=0)
        var_sums[g] = acc1, acc2
        start += size
    var = _grouped_variance(var_sums[None], np.ones((1, groups)), sizes)[0]

    first_means = np.empty((d, budget.n_outer_i, npix))
    total_means = np.empty((d, budget.n_outer_noti, npix))
    for i in range(d):
        Xg = _nested(marginals, [i], budget.n_outer_i, budget.n_inner_i, streams[1 + i], sampling)
        first_means[i] = group_means(evaluator, Xg, batch)
        others = [j for j in range(d) if j != i]
        Xg = _nested(marginals, others, budget.n_outer_noti, budget.n_inner_noti, streams[1 + d + i], sampling)
        total_means[i] = group_means(evaluator, Xg, batch)

    with np.errstate(invalid="ignore", divide="ignore"):
        vi = first_means.var(axis=1, ddof=1)
        vnoti = total_means.var(axis=1, ddof=1)
        first = np.where(var > 0, vi / var, 0.0)
        total = np.where(var > 0, 1.0 - vnoti / var, 0.0)
    first = np.where(np.isnan(var), np.nan, first)
    total = np.where(np.isnan(var), np.nan, total)
    meta = {"estimator": "doubleloop", "d": d, "n_outer_i": budget.n_outer_i, "n_inner_i": budget.n_inner_i,
            "n_outer_noti": budget.n_outer_noti, "n_inner_noti": budget.n_inner_noti,
            "n_var": budget.n_var, "sampling": sampling, "seed": seed, "eval_count": budget.eval_count(d)}
    maps = _finish(first, total, evaluator, meta, excursion_tol, clamp)
    maps.artifacts = DoubleLoopArtifacts(first_means, total_means, var_sums, sizes, shift)
    maps.runtime = time.perf_counter() - t0
    return maps


def _grouped_variance(var_sums, counts, sizes):
    """Variance from weighted group sums; ``var_sums (1, G, 2, npix)``, ``counts (R, G)``."""
    s = var_sums[0]
    n = counts @ sizes
    s1 = counts @ s[:, 0]
    s2 = counts @ s[:, 1]
    mean = s1 / n[:, None]
    return (s2 - n[:, None] * mean * mean) / (n[:, None] - 1)


def _weighted_var(counts, values):
    """Sample variance (ddof 1) of ``values (n, npix)`` under each row of ``counts (R, n)``."""
    n = values.shape[0]
    centered = values - values.mean(axis=0)
    mean = counts @ centered / n
    return (counts @ (centered * centered) - n * mean * mean) / (n - 1)


# -- bootstrap -------------------------------------------------------------------

@dataclass
class BootstrapSD:
    """Per-pixel bootstrap standard deviations, ``(d, nr, nc)`` except ``sum_first``."""

    first: np.ndarray
    total: np.ndarray
    gap: np.ndarray  # S_Ti - S_i
    sum_first: np.ndarray  # sum over i of S_i, (nr, nc)
    B: int
    z1_range: tuple[float, float] = (0.0, 1.0)
    z2_range: tuple[float, float] = (0.0, 1.0)

    def total_field(self, i: int) -> GridField:
        return GridField(self.total[i - 1], self.z1_range, self.z2_range)

    def first_field(self, i: int) -> GridField:
        return GridField(self.first[i - 1], self.z1_range, self.z2_range)


def bootstrap_sd(maps: SensitivityMaps, B: int = 200, seed=0, chunk: int = 50) -> BootstrapSD:
    """Resample the estimator's rows with replacement ``B`` times and report per-pixel SDs.

    Pick-freeze runs re-evaluate the retained sample matrices (the evaluator
    must be deterministic); double-loop runs resample the retained
    conditional means and variance groups. Resampling treats the retained
    rows as independent draws, so for Latin hypercube double-loop runs the
    reported SD overstates the true one (a conservative band).
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    art = maps.artifacts
    if art is None:
        raise ValueError("these maps carry no estimator artifacts (loaded from disk?)")
    rng = np.random.default_rng(seed)
    if isinstance(art, SaltelliArtifacts):
        N = art.A.shape[0]
        counts = rng.multinomial(N, np.full(N, 1.0 / N), size=B).astype(float)
        sums, _ = _saltelli_sums(art.evaluator, art.A, art.B, counts, art.batch, art.shift)
        first, total = _saltelli_indices(sums, N)
    elif isinstance(art, DoubleLoopArtifacts):
        d = art.first_means.shape[0]
        G = art.var_sums.shape[0]
        gcounts = rng.multinomial(G, np.full(G, 1.0 / G), size=B).astype(float)
        var = _grouped_variance(art.var_sums[None], gcounts, art.group_sizes)
        first = np.empty((d, B, var.shape[1]))
        total = np.empty_like(first)
        for i in range(d):
            n1 = art.first_means.shape[1]
            c1 = rng.multinomial(n1, np.full(n1, 1.0 / n1), size=B).astype(float)
            n2 = art.total_means.shape[1]
            c2 = rng.multinomial(n2, np.full(n2, 1.0 / n2), size=B).astype(float)
            with np.errstate(invalid="ignore", divide="ignore"):
                first[i] = _weighted_var(c1, art.first_means[i]) / var
                total[i] = 1.0 - _weighted_var(c2, art.total_means[i]) / var
    else:
        raise TypeError(f"unsupported artifacts {type(art).__name__}")
    shape = (first.shape[0],) + maps.shape
    sd_first = first.std(axis=1, ddof=1).reshape(shape)
    sd_total = total.std(axis=1, ddof=1).reshape(shape)
    sd_gap = (total - first).std(axis=1, ddof=1).reshape(shape)
    sd_sum = first.sum(axis=0).std(axis=0, ddof=1).reshape(maps.shape)
    return BootstrapSD(sd_first, sd_total, sd_gap, sd_sum, B, maps.z1_range, maps.z2_range)


# -- comparison -------------------------------------------------------------------

def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)


def rmae(estimated, reference) -> float:
    """Grid mean of ``|estimated - reference|`` over the grid mean of ``reference``."""
    est, ref = _values(estimated), _values(reference)
    if est.shape != ref.shape:
        raise FieldFormatError(f"grid mismatch {est.shape} vs {ref.shape}")
    if isinstance(estimated, GridField) and isinstance(reference, GridField):
        if estimated.geometry != reference.geometry:
            raise FieldFormatError("maps are on different grids")
    denom = ref.mean()
    if denom == 0.0:
        raise ReferenceMeanError("reference map has zero grid mean")
    return float(np.abs(est - ref).mean() / denom)


def index_law_violations(maps: SensitivityMaps, sd: BootstrapSD, k: float = 3.0) -> dict:
    """Fractions of pixels breaking ``S_Ti >= S_i - k sd`` and ``sum S_i <= 1 + k sd``."""
    gap_bad = maps.total < maps.first_order - k * sd.gap
    sum_bad = maps.first_order.sum(axis=0) > 1.0 + k * sd.sum_first
    return {
        "total_below_first": gap_bad.reshape(maps.d, -1).mean(axis=1),
        "sum_above_one": float(sum_bad.mean()),
    }
