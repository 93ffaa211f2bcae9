"""Gaussian-process regression for scalar outputs, plus the two simple coefficient models.

The process is ``Y(x) = f0(x) + Z(x)`` with a linear trend
``f0(x) = b0 + sum_l b_l x_l`` and ``Cov(Z(x), Z(u)) = s2 * R(x - u)``,
``R = prod_l exp(-theta_l |x_l - u_l|^p_l)``. Inputs are normalized to
``[0, 1]^d`` with the bounds given at fit time (column range by default).

Hyperparameters maximize the concentrated log-likelihood: for fixed
``(theta, p)`` the trend coefficients come from generalized least squares
and the process variance has the closed form ``s2 = r' C^-1 r / n``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import _backend

logger = logging.getLogger(__name__)

MODEL_FORMAT = "sobolmap-gp 1"


class GpFitError(RuntimeError):
    """Singular correlation matrix or likelihood optimization failure."""


@dataclass(frozen=True)
class CorrelationParams:
    theta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        if p.size == 1 and theta.size > 1:
            p = np.full(theta.size, p[0])
        if theta.shape != p.shape:
            raise ValueError("theta and p must have the same length")
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite and non-negative")
        if np.any(p <= 0) or np.any(p > 2):
            raise ValueError("p must lie in (0, 2]")
        theta.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "p", p)

    @property
    def d(self) -> int:
        return self.theta.size


def corr_gen_exp(x, u, params: CorrelationParams) -> float:
    """Generalized exponential correlation between two points."""
    diff = np.abs(np.asarray(x, dtype=float) - np.asarray(u, dtype=float))
    return float(np.exp(-np.sum(params.theta * diff ** params.p)))


@dataclass(frozen=True)
class TrendModel:
    """``intercept + X[:, active] @ coefs``; inactive inputs contribute nothing."""

    intercept: float
    active: tuple[int, ...] = ()
    coefs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        coefs = np.asarray(self.coefs, dtype=float).reshape(-1)
        if coefs.size != len(self.active):
            raise ValueError("one coefficient per active term")
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(coefs))):
            raise ValueError("trend coefficients must be finite")
        object.__setattr__(self, "active", tuple(int(a) for a in self.active))
        object.__setattr__(self, "coefs", coefs)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], float(self.intercept))
        if self.active:
            out += X[:, list(self.active)] @ self.coefs
        return out

    def full_coefs(self, d: int) -> np.ndarray:
        full = np.zeros(d)
        full[list(self.active)] = self.coefs
        return full


def _design_matrix(U: np.ndarray, active: Sequence[int]) -> np.ndarray:
    return np.column_stack([np.ones(U.shape[0])] + [U[:, a] for a in active])


# -- simple coefficient models --------------------------------------------------

def fit_mean(y) -> TrendModel:
    """Empirical mean as a constant model."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise ValueError("mean of an empty sample")
    return TrendModel(float(y.mean()))


def _aic(n: int, rss: float, nparams: int, floor: float) -> float:
    return n * math.log(max(rss, floor) / n) + 2 * nparams


def fit_linear_aic(X, y, candidates: Sequence[int] | None = None) -> TrendModel:
    """Least-squares linear model with stepwise AIC term selection.

    Forward additions while AIC = n ln(RSS/n) + 2 * #params decreases, then
    backward removals under the same rule. RSS is floored at ``1e-14 * TSS``
    so exact fits do not attract round-off terms.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if y.size != n:
        raise ValueError("X and y have different lengths")
    cand = list(range(d)) if candidates is None else [int(c) for c in candidates]
    if n <= len(cand) + 1:
        raise ValueError(f"need n > {len(cand) + 1} samples for {len(cand)} candidate terms")
    full = _design_matrix(X, cand)
    if np.linalg.matrix_rank(full) < full.shape[1]:
        raise ValueError("rank-deficient design: candidate columns are collinear with each other or the intercept")
    tss = float(np.sum((y - y.mean()) ** 2))
    floor = max(1e-14 * tss, 1e-300)

    def rss_of(active):
        F = _design_matrix(X, active)
        coef, _, rank, _ = np.linalg.lstsq(F, y, rcond=None)
        if rank < F.shape[1]:
            return None, None
        r = y - F @ coef
        return float(r @ r), coef

    active: list[int] = []
    rss, coef = rss_of(active)
    best = _aic(n, rss, 1, floor)
    while True:
        trial = None
        for c in cand:
            if c in active:
                continue
            r, cf = rss_of(active + [c])
            if r is None:
                continue
            a = _aic(n, r, len(active) + 2, floor)
            if a < best and (trial is None or a < trial[0]):
                trial = (a, c, r, cf)
        if trial is None:
            break
        best, c, rss, coef = trial
        active.append(c)
    while active:
        trial = None
        for c in active:
            rest = [a for a in active if a != c]
            r, cf = rss_of(rest)
            a = _aic(n, r, len(rest) + 1, floor)
            if a < best and (trial is None or a < trial[0]):
                trial = (a, c, r, cf)
        if trial is None:
            break
        best, c, rss, coef = trial
        active.remove(c)
    order = np.argsort(active)
    act = [active[i] for i in order]
    if active:
        _, coef = rss_of(act)
    else:
        coef = np.array([y.mean()])
    return TrendModel(float(coef[0]), tuple(act), coef[1:])


# -- Gaussian process -------------------------------------------------------------

@dataclass(frozen=True)
class GpOptions:
    trend_selection: bool = True
    nugget: float = 1e-8
    restarts: int = 5
    theta_bounds: tuple[float, float] = (1e-3, 1e3)
    theta_init: tuple[float, float] = (0.1, 30.0)
    estimate_p: bool = False
    p: float = 2.0
    p_bounds: tuple[float, float] = (0.5, 2.0)
    maxiter: int = 300
    seed: int = 0


@dataclass(frozen=True)
class GpModel:
    X: np.ndarray  # normalized design, (n, d)
    y: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    trend: TrendModel
    sigma2: float
    corr: CorrelationParams
    nugget: float
    neg_loglik: float = float("nan")
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    _weights: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._chol is None:
            L = _cholesky(_backend.corr_matrix(self.X, self.corr.theta, self.corr.p), self.nugget)
            if L is None:
                raise GpFitError("correlation matrix is not positive definite; increase the nugget")
            resid = self.y - self.trend.predict(self.X)
            object.__setattr__(self, "_chol", L)
            object.__setattr__(self, "_weights", cho_solve((L, True), resid))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def normalize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} inputs, got {X.shape[1]}")
        return (X - self.lower) / (self.upper - self.lower)

    def cross_corr(self, Xn: np.ndarray) -> np.ndarray:
        return _backend.cross_corr(np.ascontiguousarray(Xn), self.X, self.corr.theta, self.corr.p)

    def predict_mean(self, X) -> np.ndarray:
        Xn = self.normalize(X)
        return self.trend.predict(Xn) + self.cross_corr(Xn) @ self._weights

    def predict_var(self, X) -> np.ndarray:
        Xn = self.normalize(X)
        r = self.cross_corr(Xn)
        v = solve_triangular(self._chol, r.T, lower=True)
        return np.maximum(self.sigma2 * (1.0 - np.sum(v * v, axis=0)), 0.0)


def gp_predict_mean(model: GpModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = model.predict_mean(x)
    return float(out[0]) if x.ndim == 1 else out


def gp_predict_var(model: GpModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    out = model.predict_var(x)
    return float(out[0]) if x.ndim == 1 else out


def _cholesky(R: np.ndarray, nugget: float) -> np.ndarray | None:
    C = R + nugget * np.eye(R.shape[0]) if nugget else R
    try:
        L = cholesky(C, lower=True, check_finite=False)
    except LinAlgError:
        return None
    dg = np.diag(L)
    if dg.min() <= 0 or (dg.min() / dg.max()) ** 2 < 1e-16:
        return None
    return L


class _Profile:
    """Concentrated likelihood of one data set for fixed trend terms."""

    def __init__(self, U, y, active, nugget, estimate_p, p_fixed):
        self.U = np.ascontiguousarray(U)
        self.y = y
        self.n, self.d = U.shape
        self.F = _design_matrix(U, active)
        self.nugget = nugget
        self.estimate_p = estimate_p
        self.p_fixed = p_fixed
        self.eye = np.eye(self.n)

    def unpack(self, z):
        d = self.d
        theta = np.exp(z[:d])
        p = z[d:] if self.estimate_p else np.full(d, self.p_fixed)
        return theta, p

    def value_and_grad(self, z):
        theta, p = self.unpack(z)
        R = _backend.corr_matrix(self.U, theta, p)
        L = _cholesky(R, self.nugget)
        if L is None:
            return 1e10, np.zeros_like(z)
        ly = solve_triangular(L, self.y, lower=True)
        lF = solve_triangular(L, self.F, lower=True)
        beta = np.linalg.lstsq(lF, ly, rcond=None)[0]
        r = ly - lF @ beta
        s2 = float(r @ r) / self.n
        if s2 <= 0:
            return 1e10, np.zeros_like(z)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        nll = 0.5 * (self.n * math.log(s2) + logdet)
        alpha = solve_triangular(L.T, r, lower=False)
        Cinv = cho_solve((L, True), self.eye)
        M = (np.outer(alpha, alpha) / s2 - Cinv) * R
        gt, gp = _backend.corr_grad(self.U, p, M, self.estimate_p)
        # sums cover i != j; d nll/d theta_l = 0.5 * sum_ij M_ij |dx_l|^p_l
        grad = 0.5 * theta * gt
        if self.estimate_p:
            grad = np.concatenate([grad, 0.5 * theta * gp])
        return nll, grad


def _neg2loglik(n: int, s2: float, logdet: float) -> float:
    return n * math.log(2 * math.pi * s2) + logdet + n


def _aicc(neg2ll: float, q: int, n: int) -> float:
    if n - q - 1 <= 0:
        return math.inf
    return neg2ll + 2 * q + 2 * q * (q + 1) / (n - q - 1)


def _optimize(prof: _Profile, opts: GpOptions, rng: np.random.Generator, warm=None):
    d = prof.d
    lo, hi = np.log(opts.theta_bounds[0]), np.log(opts.theta_bounds[1])
    bounds = [(lo, hi)] * d
    if prof.estimate_p:
        bounds += [tuple(opts.p_bounds)] * d
    ilo, ihi = np.log(opts.theta_init[0]), np.log(opts.theta_init[1])
    nstart = max(1, opts.restarts)
    strata = (np.argsort(rng.random((d, nstart)), axis=1).T + rng.random((nstart, d))) / nstart
    starts = [ilo + (ihi - ilo) * s for s in strata]
    if prof.estimate_p:
        starts = [np.concatenate([s, np.full(d, min(1.9, opts.p_bounds[1]))]) for s in starts]
    if warm is not None:
        starts = [np.asarray(warm, dtype=float)] + starts[: nstart - 1]
    best = None
    for z0 in starts:
        f0 = prof.value_and_grad(z0)[0]
        res = minimize(prof.value_and_grad, z0, jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": opts.maxiter})
        z, f = res.x, float(res.fun)
        if f > f0:  # never return worse than the starting point
            z, f = z0, f0
        if f < 1e10 and (best is None or f < best[1]):
            best = (z, f)
    if best is None:
        raise GpFitError("likelihood optimization failed from every restart "
                         "(correlation matrix singular; consider a larger nugget)")
    return best


def _select_trend(U, ys, theta, p, nugget, d_corr):
    """Forward AICC selection of linear trend terms at fixed correlation parameters."""
    n, d = U.shape
    L = _cholesky(_backend.corr_matrix(U, theta, p), nugget)
    if L is None:
        return []
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    ly = solve_triangular(L, ys, lower=True)
    lF = solve_triangular(L, _design_matrix(U, range(d)), lower=True)

    def score(active):
        cols = [0] + [a + 1 for a in active]
        A = lF[:, cols]
        beta = np.linalg.lstsq(A, ly, rcond=None)[0]
        r = ly - A @ beta
        s2 = max(float(r @ r) / n, 1e-300)
        return _aicc(_neg2loglik(n, s2, logdet), len(cols) + d_corr, n)

    active: list[int] = []
    best = score(active)
    while True:
        trial = min(((score(active + [c]), c) for c in range(d) if c not in active), default=None)
        if trial is None or not trial[0] < best:
            return sorted(active)
        best = trial[0]
        active.append(trial[1])


def _finalize(U, y, lower, upper, active, theta, p, nugget, nll=float("nan")) -> GpModel:
    R = _backend.corr_matrix(U, theta, p)
    L = _cholesky(R, nugget)
    if L is None:
        raise GpFitError("correlation matrix is not positive definite at the fitted parameters")
    F = _design_matrix(U, active)
    ly = solve_triangular(L, y, lower=True)
    lF = solve_triangular(L, F, lower=True)
    beta = np.linalg.lstsq(lF, ly, rcond=None)[0]
    r = ly - lF @ beta
    s2 = float(r @ r) / len(y)
    trend = TrendModel(float(beta[0]), tuple(active), beta[1:])
    weights = cho_solve((L, True), y - F @ beta)
    return GpModel(U, y, lower, upper, trend, s2, CorrelationParams(theta, p), nugget, nll, L, weights)


def _normalization(X, bounds):
    if bounds is None:
        lower, upper = X.min(axis=0), X.max(axis=0)
    else:
        b = np.asarray(bounds, dtype=float)
        lower, upper = b[:, 0], b[:, 1]
    upper = np.where(upper > lower, upper, lower + 1.0)
    return lower.astype(float), upper.astype(float)


def fit_gp(X, y, options: GpOptions = GpOptions(), bounds=None,
           fixed: CorrelationParams | None = None, active: Sequence[int] | None = None) -> GpModel:
    """Fit a GP by concentrated maximum likelihood.

    Parameters
    ----------
    X, y : array_like
        Design ``(n, d)`` in native units and scalar outputs ``(n,)``.
    options : GpOptions
        Nugget, restarts, bounds and trend-selection switches.
    bounds : array_like, optional
        ``(d, 2)`` normalization box; column ranges of ``X`` by default.
    fixed : CorrelationParams, optional
        Skip the likelihood search and use these correlation parameters.
    active : sequence of int, optional
        Fix the trend terms instead of selecting them.

    With ``trend_selection`` the correlation parameters are first estimated
    under a constant trend, linear terms are added greedily while the AICC
    (evaluated at those parameters) improves, and the correlation parameters
    are re-estimated under the selected trend.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = X.shape
    if y.size != n:
        raise ValueError("X and y have different lengths")
    if n < 2:
        raise ValueError("a GP needs at least two points")
    lower, upper = _normalization(X, bounds)
    U = np.ascontiguousarray((X - lower) / (upper - lower))
    if options.nugget == 0 and len(np.unique(U, axis=0)) < n:
        raise GpFitError("duplicate design rows with zero nugget")

    scale = float(np.std(y))
    if scale == 0.0 or not np.isfinite(scale):
        theta = np.ones(d) if fixed is None else fixed.theta
        p = np.full(d, options.p) if fixed is None else fixed.p
        L = _cholesky(_backend.corr_matrix(U, theta, p), options.nugget)
        return GpModel(U, y, lower, upper, TrendModel(float(y[0])), 0.0,
                       CorrelationParams(theta, p), options.nugget, float("nan"), L, np.zeros(n))
    ys = (y - y.mean()) / scale

    if fixed is not None:
        act = list(active) if active is not None else []
        if active is None and options.trend_selection:
            act = _select_trend(U, ys, fixed.theta, fixed.p, options.nugget,
                                d * (2 if options.estimate_p else 1))
        return _finalize(U, y, lower, upper, act, fixed.theta, fixed.p, options.nugget)

    rng = np.random.default_rng(options.seed)
    d_corr = d * (2 if options.estimate_p else 1)
    act = list(active) if active is not None else []
    prof = _Profile(U, ys, act, options.nugget, options.estimate_p, options.p)
    z, f = _optimize(prof, options, rng)
    if active is None and options.trend_selection:
        theta, p = prof.unpack(z)
        sel = _select_trend(U, ys, theta, p, options.nugget, d_corr)
        if sel != act:
            act = sel
            prof = _Profile(U, ys, act, options.nugget, options.estimate_p, options.p)
            z, f = _optimize(prof, options, rng, warm=z)
    theta, p = prof.unpack(z)
    return _finalize(U, y, lower, upper, act, theta, p, options.nugget, f)


def refit_predictor(model: GpModel, X, y) -> GpModel:
    """Re-condition a GP on new data keeping correlation parameters and trend terms."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    U = np.ascontiguousarray(model.normalize(X))
    if model.sigma2 == 0.0 and np.std(y) == 0.0:
        return fit_gp(X, y, GpOptions(nugget=model.nugget), bounds=np.column_stack([model.lower, model.upper]),
                      fixed=model.corr, active=())
    return _finalize(U, y, model.lower, model.upper, list(model.trend.active),
                     model.corr.theta, model.corr.p, model.nugget)


def concentrated_nll(model: GpModel, theta=None, p=None) -> float:
    """Negative concentrated log-likelihood (standardized outputs) at given parameters."""
    theta = model.corr.theta if theta is None else np.asarray(theta, dtype=float)
    p = model.corr.p if p is None else np.asarray(p, dtype=float)
    scale = float(np.std(model.y)) or 1.0
    ys = (model.y - model.y.mean()) / scale
    prof = _Profile(model.X, ys, list(model.trend.active), model.nugget, True, 2.0)
    return prof.value_and_grad(np.concatenate([np.log(theta), p]))[0]


# -- serialization -------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def format_model(model: GpModel) -> str:
    lines = [
        MODEL_FORMAT,
        f"n {model.n}",
        f"d {model.d}",
        f"lower {_fmt(model.lower)}",
        f"upper {_fmt(model.upper)}",
        f"theta {_fmt(model.corr.theta)}",
        f"p {_fmt(model.corr.p)}",
        f"nugget {model.nugget!r}",
        f"sigma2 {model.sigma2!r}",
        f"intercept {model.trend.intercept!r}",
        "active " + " ".join(str(a) for a in model.trend.active),
        f"coefs {_fmt(model.trend.coefs)}",
        f"y {_fmt(model.y)}",
    ]
    lines += [f"x {_fmt(row)}" for row in model.X]
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> GpModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT!r} file")
    kv: dict[str, list[str]] = {}
    rows = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "x":
            rows.append([float(v) for v in rest.split()])
        else:
            kv[key] = rest.split()

    def arr(key):
        return np.array([float(v) for v in kv.get(key, [])])

    trend = TrendModel(float(kv["intercept"][0]), tuple(int(a) for a in kv.get("active", [])), arr("coefs"))
    X = np.array(rows, dtype=float).reshape(int(kv["n"][0]), int(kv["d"][0]))
    corr = CorrelationParams(arr("theta"), arr("p"))
    return GpModel(X, arr("y"), arr("lower"), arr("upper"), trend, float(kv["sigma2"][0]),
                   corr, float(kv["nugget"][0]))


def save_model(model: GpModel, path) -> None:
    Path(path).write_text(format_model(model))


def load_model(path) -> GpModel:
    return parse_model(Path(path).read_text())
