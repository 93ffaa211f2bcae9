"""Functional metamodel: mean map plus modeled wavelet coefficients.

A map is predicted as ``mu(z) + sum_j A_j(x) phi_j(z)`` where ``phi_j`` are
the orthonormal wavelet basis images and ``A_j`` a per-coefficient model:

* method 1: GP for the ``k`` most variable coefficients, empirical mean for the rest;
* method 2: stepwise-AIC linear regression for the top ``k``, mean for the rest;
* method 3: GP for the top ``k``, linear for the next ``k_prime``, mean for the rest.

Every model output is linear in a small feature vector (normalized inputs and,
for each GP, its kriging term ``r(x)' w``), so maps are synthesized as
``base + U @ lin_maps + G @ gp_maps`` without running the inverse transform
per prediction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from . import _backend
from .designs import scale
from .field import FieldEnsemble, FieldFormatError, GridField, read_field, write_field
from .gp import (GpFitError, GpModel, GpOptions, TrendModel, fit_gp, fit_linear_aic, fit_mean,
                 format_model, parse_model, refit_predictor)
from .wavelet import (CoefficientRanking, WaveletSpec, basis_images, dwt2_array, idwt2_array,
                      rank_coefficients)

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "sobolmap-metamodel 1"


class MetamodelError(ValueError):
    """Invalid metamodel configuration or incompatible data."""


@dataclass(frozen=True, eq=False)
class FunctionalMetamodel:
    """Fitted map predictor.

    ``models[r]`` models the coefficient ``ranking.order[r]``; it is a
    :class:`GpModel` or a linear :class:`TrendModel` on normalized inputs.
    Coefficients beyond ``len(models)`` are predicted by ``coef_means``.
    """

    mean_field: GridField
    spec: WaveletSpec
    ranking: CoefficientRanking
    method: int
    k: int
    k_prime: int
    lower: np.ndarray
    upper: np.ndarray
    coef_means: np.ndarray
    models: tuple = ()
    _base: np.ndarray = field(default=None, repr=False)
    _lin_maps: np.ndarray = field(default=None, repr=False)
    _gp_maps: np.ndarray = field(default=None, repr=False)
    _gp_pos: tuple = field(default=(), repr=False)
    _gp_bank: tuple = field(default=None, repr=False)

    def __post_init__(self):
        K = self.coef_means.size
        if self.method not in (1, 2, 3):
            raise MetamodelError(f"method must be 1, 2 or 3, got {self.method}")
        if self.method != 3 and self.k_prime:
            raise MetamodelError("k_prime applies to method 3 only")
        if self.k < 0 or self.k_prime < 0 or self.k + self.k_prime > K:
            raise MetamodelError(f"k + k_prime must lie in [0, {K}]")
        if len(self.models) != self.k + self.k_prime:
            raise MetamodelError("one model per rank position up to k + k_prime")
        if self._base is None:
            self._synthesize()

    def _synthesize(self):
        shape = self.shape
        d = self.d
        coef = self.coef_means.copy()
        lin = np.zeros((d, coef.size))
        gp_pos = []
        for r, model in enumerate(self.models):
            j = int(self.ranking.order[r])
            trend = model.trend if isinstance(model, GpModel) else model
            coef[j] = trend.intercept
            lin[:, j] = trend.full_coefs(d)
            if isinstance(model, GpModel) and model.sigma2 > 0.0:
                gp_pos.append(r)
        base = self.mean_field.values.ravel() + _synth(coef[None], shape, self.spec)[0]
        lin_maps = _synth(lin, shape, self.spec)
        flat = [int(self.ranking.order[r]) for r in gp_pos]
        gp_maps = basis_images(flat, shape, self.spec).reshape(len(flat), -1) if flat else np.zeros((0, base.size))
        object.__setattr__(self, "_base", base)
        object.__setattr__(self, "_lin_maps", lin_maps)
        object.__setattr__(self, "_gp_maps", gp_maps)
        object.__setattr__(self, "_gp_pos", tuple(gp_pos))
        gps = [self.models[r] for r in gp_pos]
        if gps and len({m.X.shape for m in gps}) == 1:
            bank = (np.ascontiguousarray(np.stack([m.X for m in gps])),
                    np.ascontiguousarray(np.stack([m.corr.theta for m in gps])),
                    np.ascontiguousarray(np.stack([m.corr.p for m in gps])),
                    np.ascontiguousarray(np.stack([m._weights for m in gps])))
            object.__setattr__(self, "_gp_bank", bank)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean_field.shape

    @property
    def z1_range(self):
        return self.mean_field.z1_range

    @property
    def z2_range(self):
        return self.mean_field.z2_range

    @property
    def K(self) -> int:
        return self.coef_means.size

    def normalize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise MetamodelError(f"expected {self.d} inputs, got {X.shape[1]}")
        return (X - self.lower) / (self.upper - self.lower)

    def features(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Normalized inputs ``U (m, d)`` and kriging terms ``G (m, #GP)``."""
        U = np.ascontiguousarray(self.normalize(X))
        if self._gp_bank is not None:
            Xs, theta, p, W = self._gp_bank
            if np.all(p == 2.0):
                return U, _gaussian_kriging_sums(U, Xs, theta, W)
            return U, _backend.kriging_sums(U, Xs, theta, p, W)
        G = np.empty((U.shape[0], len(self._gp_pos)))
        for c, r in enumerate(self._gp_pos):
            m = self.models[r]
            G[:, c] = m.cross_corr(U) @ m._weights
        return U, G

    def predict_coefficients(self, X) -> np.ndarray:
        """Full ``(m, K)`` coefficient vectors, model by model."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.tile(self.coef_means, (X.shape[0], 1))
        U = self.normalize(X)
        for r, model in enumerate(self.models):
            j = int(self.ranking.order[r])
            out[:, j] = model.predict_mean(X) if isinstance(model, GpModel) else model.predict(U)
        return out

    def predict_maps_direct(self, X) -> np.ndarray:
        """Maps by inverse transform of the predicted coefficients (reference route)."""
        C = self.predict_coefficients(X)
        return self.mean_field.values + _synth(C, self.shape, self.spec).reshape((-1,) + self.shape)

    def predict_flat(self, X) -> np.ndarray:
        U, G = self.features(X)
        return self._base + U @ self._lin_maps + G @ self._gp_maps

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.predict_flat(X).reshape((X.shape[0],) + self.shape)

    def mean_maps(self, Xg: np.ndarray, batch: int = 20000) -> np.ndarray:
        """Average predicted map of each group of inputs ``(g, m, d)`` -> ``(g, nr*nc)``.

        Averages the features first; exact because the prediction is affine in them.
        """
        g, m, d = Xg.shape
        flat = Xg.reshape(-1, d)
        nf = len(self._gp_pos)
        feats = np.empty((flat.shape[0], d + nf))
        for s in range(0, flat.shape[0], batch):
            U, G = self.features(flat[s:s + batch])
            feats[s:s + batch, :d] = U
            feats[s:s + batch, d:] = G
        mf = feats.reshape(g, m, d + nf).mean(axis=1)
        return self._base + mf[:, :d] @ self._lin_maps + mf[:, d:] @ self._gp_maps


def _gaussian_kriging_sums(U, Xs, theta, W):
    """Kriging terms for squared-exponential GPs via matrix products.

    ``sum_l theta_l (u_l - x_l)^2`` is expanded into three products so that
    BLAS and the vectorized exponential do the work.
    """
    out = np.empty((U.shape[0], Xs.shape[0]))
    UU = U * U
    for g in range(Xs.shape[0]):
        th = theta[g]
        s = (UU @ th)[:, None] + ((Xs[g] * Xs[g]) @ th)[None, :] - 2.0 * (U * th) @ Xs[g].T
        np.maximum(s, 0.0, out=s)
        np.exp(-s, out=s)
        out[:, g] = s @ W[g]
    return out


def _synth(coeffs: np.ndarray, shape, spec) -> np.ndarray:
    """Inverse transform of ``(m, K)`` coefficient rows into ``(m, nr*nc)`` maps."""
    return idwt2_array(coeffs.reshape((-1,) + tuple(shape)), spec).reshape(coeffs.shape[0], -1)


def predict_map(meta: FunctionalMetamodel, x) -> GridField:
    """Predicted map at one input vector; warns when ``x`` leaves the design box."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != meta.d:
        raise MetamodelError(f"expected {meta.d} inputs, got {x.size}")
    if np.any(x < meta.lower) or np.any(x > meta.upper):
        warnings.warn("prediction outside the design bounds", stacklevel=2)
    return GridField(meta(x[None])[0], meta.z1_range, meta.z2_range)


# -- fitting ------------------------------------------------------------------------

def _coefficients(ensemble: FieldEnsemble, spec: WaveletSpec):
    mu = ensemble.values.mean(axis=0)
    coeffs = dwt2_array(ensemble.values - mu, spec).reshape(ensemble.n, -1)
    return mu, coeffs


def _coef_seed(seed: int, flat_index: int) -> int:
    return int(np.random.SeedSequence([seed, flat_index]).generate_state(1)[0])


def _fit_one_gp(X, y, options, bounds, flat_index, rank, fallback, frozen):
    try:
        if frozen is not None:
            return refit_predictor(frozen, X, y)
        return fit_gp(X, y, replace(options, seed=_coef_seed(options.seed, flat_index)), bounds=bounds)
    except (GpFitError, np.linalg.LinAlgError, ValueError) as exc:
        if not fallback:
            raise GpFitError(f"GP fit failed for coefficient rank {rank + 1} (flat index {flat_index}): {exc}") from exc
        warnings.warn(f"GP fit failed at rank {rank + 1}; using a linear model instead ({exc})", stacklevel=2)
        lower, upper = bounds[:, 0], bounds[:, 1]
        return fit_linear_aic((X - lower) / (upper - lower), y)


def _gp_bank(X, coeffs, order, count, options, bounds, fallback, n_jobs):
    jobs = (delayed(_fit_one_gp)(X, coeffs[:, int(order[r])], options, bounds, int(order[r]), r, fallback, None)
            for r in range(count))
    if n_jobs == 1:
        return [fn(*args, **kw) for fn, args, kw in jobs]
    return Parallel(n_jobs=n_jobs)(jobs)


def _linear_bank(U, coeffs, order, positions):
    out = {}
    for r in positions:
        y = coeffs[:, int(order[r])]
        out[r] = fit_mean(y) if np.ptp(y) == 0.0 else fit_linear_aic(U, y)
    return out


def _bounds(ensemble: FieldEnsemble) -> np.ndarray:
    return ensemble.design.bounds


def fit_functional_metamodel(ensemble: FieldEnsemble, spec: WaveletSpec = WaveletSpec(), method: int = 3,
                             k: int = 30, k_prime: int = 500, gp_options: GpOptions = GpOptions(),
                             fallback: bool = False, n_jobs: int = 1, ranking: CoefficientRanking | None = None,
                             frozen: FunctionalMetamodel | None = None) -> FunctionalMetamodel:
    """Fit a functional metamodel to an ensemble of maps.

    Parameters
    ----------
    ensemble : FieldEnsemble
        Learning maps with their design (bounds from the design marginals).
    method, k, k_prime : int
        Model assignment by rank (see module docstring).
    ranking : CoefficientRanking, optional
        Reuse a coefficient order instead of ranking this ensemble.
    frozen : FunctionalMetamodel, optional
        Keep this metamodel's ranking, GP correlation parameters and trend
        terms; only the kriging predictors are re-conditioned on the data.
    """
    if method not in (1, 2, 3):
        raise MetamodelError(f"method must be 1, 2 or 3, got {method}")
    if method != 3:
        k_prime = 0
    if ensemble.n < 2:
        raise MetamodelError("need at least two maps")
    mu, coeffs = _coefficients(ensemble, spec)
    K = coeffs.shape[1]
    if k < 0 or k_prime < 0 or k + k_prime > K:
        raise MetamodelError(f"k + k_prime = {k + k_prime} exceeds K = {K}")
    if frozen is not None:
        ranking = frozen.ranking
        if (frozen.method, frozen.k, frozen.k_prime) != (method, k, k_prime):
            raise MetamodelError("frozen metamodel has a different configuration")
    if ranking is None:
        ranking = rank_coefficients(coeffs)
    X = scale(ensemble.design)
    bounds = _bounds(ensemble)
    U = (X - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    order = ranking.order

    models: list = []
    if method in (1, 3) and k:
        if frozen is None:
            models = _gp_bank(X, coeffs, order, k, gp_options, bounds, fallback, n_jobs)
        else:
            # ranks that fell back to linear in the frozen fit are refitted as linear
            models = [_fit_one_gp(X, coeffs[:, int(order[r])], gp_options, bounds, int(order[r]), r, fallback, m)
                      if isinstance(m, GpModel) else _linear_bank(U, coeffs, order, [r])[r]
                      for r, m in enumerate(frozen.models[:k])]
    if method == 2:
        lin = _linear_bank(U, coeffs, order, range(k))
        models = [lin[r] for r in range(k)]
    elif method == 3 and k_prime:
        lin = _linear_bank(U, coeffs, order, range(k, k + k_prime))
        models += [lin[r] for r in range(k, k + k_prime)]
    return FunctionalMetamodel(ensemble.wrap(mu), spec, ranking, method, k, k_prime,
                               bounds[:, 0].copy(), bounds[:, 1].copy(), coeffs.mean(axis=0), tuple(models))


# -- validation -------------------------------------------------------------------

def _check_grid(meta: FunctionalMetamodel, test: FieldEnsemble):
    if test.shape != meta.shape or test.z1_range != meta.z1_range or test.z2_range != meta.z2_range:
        raise FieldFormatError("test ensemble is on a different grid")


def squared_errors(meta: FunctionalMetamodel, test: FieldEnsemble, batch: int = 512) -> np.ndarray:
    """Per-pixel squared prediction errors averaged over the test maps, ``(nr, nc)``."""
    _check_grid(meta, test)
    X = scale(test.design)
    acc = np.zeros(meta.shape[0] * meta.shape[1])
    for s in range(0, test.n, batch):
        err = meta.predict_flat(X[s:s + batch]) - test.values[s:s + batch].reshape(-1, acc.size)
        acc += (err * err).sum(axis=0)
    return (acc / test.n).reshape(meta.shape)


def mse(meta: FunctionalMetamodel, test: FieldEnsemble) -> float:
    """Mean over test maps of the pixel-averaged squared error."""
    return float(squared_errors(meta, test).mean())


def output_variance(test: FieldEnsemble) -> float:
    """Pixel average of the pointwise variance over the maps (divisor n)."""
    return float(test.values.var(axis=0).mean())


def q2(meta: FunctionalMetamodel, test: FieldEnsemble) -> float:
    """Predictivity ``1 - MSE / E_z[Var_X Y]``, the variance taken over the test maps."""
    denom = output_variance(test)
    if denom == 0.0:
        raise MetamodelError("test ensemble has zero variance")
    return 1.0 - mse(meta, test) / denom


@dataclass(frozen=True)
class CVResult:
    mse: float
    q2: float
    fold_mse: tuple[float, ...]


def kfold_cv(ensemble: FieldEnsemble, folds: int = 10, method: int = 3, k: int = 30, k_prime: int = 500,
             gp_options: GpOptions = GpOptions(), refit_hyperparams: bool = False, seed=0,
             spec: WaveletSpec = WaveletSpec(), fallback: bool = False, n_jobs: int = 1,
             full: FunctionalMetamodel | None = None) -> CVResult:
    """K-fold cross-validated MSE and Q2.

    Without ``refit_hyperparams`` the ranking, GP correlation parameters and
    trend terms of the full-data fit (``full``, fitted here if omitted) are
    kept and only the predictors are re-conditioned on each training part.
    Q2 uses the pixel-averaged variance of the whole ensemble.
    """
    if folds < 2:
        raise MetamodelError("need at least two folds")
    if ensemble.n < folds:
        raise MetamodelError(f"{folds} folds for {ensemble.n} maps")
    if method != 3:
        k_prime = 0
    parts = np.array_split(np.random.default_rng(seed).permutation(ensemble.n), folds)
    if min(len(p) for p in parts) < 1 or ensemble.n - max(len(p) for p in parts) < 2:
        raise MetamodelError("a fold leaves fewer than two training maps")
    if not refit_hyperparams and full is None:
        full = fit_functional_metamodel(ensemble, spec, method, k, k_prime, gp_options, fallback, n_jobs)
    errs = []
    for test_idx in parts:
        train_idx = np.setdiff1d(np.arange(ensemble.n), test_idx)
        train, test = ensemble.subset(train_idx), ensemble.subset(test_idx)
        if refit_hyperparams:
            meta = fit_functional_metamodel(train, spec, method, k, k_prime, gp_options, fallback, n_jobs)
        else:
            meta = fit_functional_metamodel(train, spec, method, k, k_prime, gp_options, fallback, n_jobs,
                                            frozen=full)
        errs.append(mse(meta, test))
    total = float(np.mean(errs))
    denom = output_variance(ensemble)
    return CVResult(total, 1.0 - total / denom if denom > 0 else float("nan"), tuple(errs))


@dataclass(frozen=True)
class ConvergenceResult:
    rows: tuple[tuple[int, int, int, float], ...]  # (method, k, n, mse)
    k_star: dict  # (method, n) -> k

    def to_csv(self) -> str:
        lines = ["method,k,n,mse"] + [f"{m},{k},{n},{e!r}" for m, k, n, e in self.rows]
        lines += ["", "method,n,k_star"] + [f"{m},{n},{k}" for (m, n), k in sorted(self.k_star.items())]
        return "\n".join(lines) + "\n"


def convergence_study(ensemble: FieldEnsemble, test: FieldEnsemble, k_grid: Sequence[int],
                      n_grid: Sequence[int], methods: Sequence[int] = (1, 2, 3), k_prime: int = 500,
                      gp_options: GpOptions = GpOptions(), spec: WaveletSpec = WaveletSpec(), seed=0,
                      tol: float = 0.05, fallback: bool = False, n_jobs: int = 1) -> ConvergenceResult:
    """MSE table over methods, ``k`` and learning-sample sizes ``n``.

    Learning samples are nested random subsets (one permutation, first ``n``
    rows). Per ``n`` the per-coefficient models are fitted once up to the
    largest rank needed and shared by every ``(method, k)``. ``k*`` is the
    smallest ``k`` whose MSE is within ``tol`` (relative) of the minimum.
    """
    k_grid = sorted(int(k) for k in k_grid)
    perm = np.random.default_rng(seed).permutation(ensemble.n)
    rows = []
    k_star = {}
    for n in sorted(int(v) for v in n_grid):
        if n > ensemble.n or n < 2:
            raise MetamodelError(f"learning size {n} outside [2, {ensemble.n}]")
        sub = ensemble.subset(np.sort(perm[:n]))
        mu, coeffs = _coefficients(sub, spec)
        K = coeffs.shape[1]
        ranking = rank_coefficients(coeffs)
        X = scale(sub.design)
        bounds = _bounds(sub)
        U = (X - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
        kmax = min(max(k_grid), K)
        gps = (_gp_bank(X, coeffs, ranking.order, kmax, gp_options, bounds, fallback, n_jobs)
               if set(methods) & {1, 3} else [])
        need = kmax if 2 in methods else 0
        if 3 in methods:
            need = max(need, min(kmax + k_prime, K))
        lin = _linear_bank(U, coeffs, ranking.order, range(need))
        means = coeffs.mean(axis=0)
        for method in methods:
            errs = {}
            for k in k_grid:
                kk = min(k, K)
                kp = min(k_prime, K - kk) if method == 3 else 0
                if method == 2:
                    models = [lin[r] for r in range(kk)]
                else:
                    models = list(gps[:kk]) + [lin[r] for r in range(kk, kk + kp)]
                meta = FunctionalMetamodel(sub.wrap(mu), spec, ranking, method, kk, kp, bounds[:, 0].copy(),
                                           bounds[:, 1].copy(), means, tuple(models))
                errs[k] = mse(meta, test)
                rows.append((method, k, n, errs[k]))
                logger.info("method %d k %d n %d mse %.6g", method, k, n, errs[k])
            best = min(errs.values())
            k_star[(method, n)] = min(k for k, e in errs.items() if e <= (1.0 + tol) * best)
    return ConvergenceResult(tuple(rows), k_star)


# -- bundle -------------------------------------------------------------------------

def _format_linear(model: TrendModel) -> str:
    act = " ".join(str(a) for a in model.active)
    coefs = " ".join(repr(float(c)) for c in model.coefs)
    return f"linear\nintercept {model.intercept!r}\nactive {act}\ncoefs {coefs}\n"


def _parse_linear(text: str) -> TrendModel:
    kv = {}
    for line in text.splitlines()[1:]:
        key, _, rest = line.partition(" ")
        kv[key] = rest.split()
    return TrendModel(float(kv["intercept"][0]), tuple(int(a) for a in kv.get("active", [])),
                      np.array([float(c) for c in kv.get("coefs", [])]))


def save_bundle(meta: FunctionalMetamodel, directory) -> None:
    """Write ``mean.fld``, ``ranking.csv``, ``means.csv``, ``models/`` and ``manifest.txt``."""
    out = Path(directory)
    (out / "models").mkdir(parents=True, exist_ok=True)
    write_field(meta.mean_field, out / "mean.fld")
    var = meta.ranking.empirical_variances
    lines = ["rank,flat_index,variance"] + [
        f"{r + 1},{int(j)},{float(var[j])!r}" for r, j in enumerate(meta.ranking.order)]
    (out / "ranking.csv").write_text("\n".join(lines) + "\n")
    lines = ["flat_index,mean"] + [f"{j},{float(v)!r}" for j, v in enumerate(meta.coef_means)]
    (out / "means.csv").write_text("\n".join(lines) + "\n")
    for r, model in enumerate(meta.models):
        text = format_model(model) if isinstance(model, GpModel) else _format_linear(model)
        (out / "models" / f"rank_{r + 1:04d}.txt").write_text(text)
    manifest = [
        BUNDLE_FORMAT,
        f"method {meta.method}",
        f"k {meta.k}",
        f"k_prime {meta.k_prime}",
        f"wavelet {meta.spec.to_text()}",
        "lower " + " ".join(repr(float(v)) for v in meta.lower),
        "upper " + " ".join(repr(float(v)) for v in meta.upper),
    ]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")


def load_bundle(directory) -> FunctionalMetamodel:
    src = Path(directory)
    lines = (src / "manifest.txt").read_text().splitlines()
    if not lines or lines[0] != BUNDLE_FORMAT:
        raise MetamodelError(f"{src}: not a {BUNDLE_FORMAT!r} bundle")
    kv = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        kv[key] = rest
    mean = read_field(src / "mean.fld")
    rows = [line.split(",") for line in (src / "ranking.csv").read_text().splitlines()[1:] if line]
    order = np.array([int(r[1]) for r in rows])
    var = np.empty(len(rows))
    var[order] = [float(r[2]) for r in rows]
    means = np.array([float(line.split(",")[1])
                      for line in (src / "means.csv").read_text().splitlines()[1:] if line])
    k, k_prime = int(kv["k"]), int(kv["k_prime"])
    models = []
    for r in range(k + k_prime):
        text = (src / "models" / f"rank_{r + 1:04d}.txt").read_text()
        models.append(_parse_linear(text) if text.startswith("linear") else parse_model(text))
    return FunctionalMetamodel(mean, WaveletSpec.from_text(kv["wavelet"]), CoefficientRanking(order, var),
                               int(kv["method"]), k, k_prime, np.array([float(v) for v in kv["lower"].split()]),
                               np.array([float(v) for v in kv["upper"].split()]), means, tuple(models))
