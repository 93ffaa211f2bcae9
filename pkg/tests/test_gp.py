from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolmap.designs import lhs
from sobolmap.gp import (CorrelationParams, GpFitError, GpOptions, concentrated_nll, corr_gen_exp, fit_gp,
                         fit_linear_aic, fit_mean, format_model, gp_predict_mean, gp_predict_var, parse_model,
                         refit_predictor)


def _branin_like(X):
    return np.sin(3 * X[:, 0]) + 0.5 * X[:, 1] ** 2 + 0.3 * X[:, 0] * X[:, 1]


# -- correlation -------------------------------------------------------------------

def test_corr_examples():
    assert corr_gen_exp([0.3, 0.2], [0.3, 0.2], CorrelationParams([1, 1], [2, 2])) == 1.0
    assert corr_gen_exp([0.0], [1.0], CorrelationParams([1.0], [2.0])) == pytest.approx(math.exp(-1), abs=1e-15)
    assert corr_gen_exp([0, 0], [1, 0.5], CorrelationParams([1, 2], [1, 1])) == pytest.approx(math.exp(-2))


def test_corr_param_validation():
    with pytest.raises(ValueError):
        CorrelationParams([-1.0], [2.0])
    with pytest.raises(ValueError):
        CorrelationParams([1.0], [2.5])
    with pytest.raises(ValueError):
        CorrelationParams([1.0], [0.0])
    with pytest.raises(ValueError):
        CorrelationParams([1.0, 2.0], [1.0, 1.0, 1.0])


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.lists(st.floats(0, 50), min_size=3, max_size=3), st.lists(st.floats(0.1, 2), min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_corr_in_unit_interval_and_symmetric(x, u, theta, p):
    params = CorrelationParams(theta, p)
    r = corr_gen_exp(x, u, params)
    assert 0.0 <= r <= 1.0
    assert r == corr_gen_exp(u, x, params)


# -- simple models ---------------------------------------------------------------

def test_fit_mean_examples():
    assert fit_mean([1, 2, 3]).intercept == 2.0
    assert fit_mean([4.5]).intercept == 4.5
    assert fit_mean([7.0] * 5).predict(np.zeros((3, 2))).tolist() == [7.0] * 3
    with pytest.raises(ValueError):
        fit_mean([])


def test_linear_exact_recovery(rng):
    X = rng.uniform(size=(40, 3))
    m = fit_linear_aic(X, 2 + 3 * X[:, 0])
    assert m.active == (0,)
    assert m.intercept == pytest.approx(2, abs=1e-9)
    assert m.coefs[0] == pytest.approx(3, abs=1e-9)


def test_linear_two_of_twenty(rng):
    X = rng.uniform(size=(100, 20))
    m = fit_linear_aic(X, X[:, 0] + X[:, 1])
    assert sorted(m.active) == [0, 1]


def test_linear_pure_noise_rarely_selects_spurious_terms():
    # AIC admits a null term when its chi2(1) statistic exceeds 2 (about 16%),
    # so at most one spurious term out of three candidates has chance ~0.93
    ok = 0
    for seed in range(200):
        r = np.random.default_rng(seed)
        X = r.uniform(size=(60, 3))
        ok += len(fit_linear_aic(X, r.normal(size=60)).active) <= 1
    assert ok >= 180


def test_linear_null_inclusion_rate_matches_chi2_tail():
    from scipy.stats import chi2

    hits = 0
    for seed in range(400):
        r = np.random.default_rng(1000 + seed)
        X = r.uniform(size=(200, 1))
        hits += len(fit_linear_aic(X, r.normal(size=200)).active)
    rate, oracle = hits / 400, chi2.sf(2.0, 1)
    assert abs(rate - oracle) < 4 * np.sqrt(oracle * (1 - oracle) / 400)


def test_linear_rank_deficient():
    X = np.ones((10, 2))
    with pytest.raises(ValueError):
        fit_linear_aic(X, np.arange(10.0))


# -- GP ------------------------------------------------------------------------------

def test_constant_output_predicts_constant():
    X = lhs(8, 2, seed=0).points
    m = fit_gp(X, np.full(8, 4.2))
    assert m.trend.intercept == 4.2
    np.testing.assert_allclose(m.predict_mean(np.random.default_rng(0).uniform(size=(5, 2))), 4.2)


def test_linear_trend_absorbs_linear_signal():
    X = np.linspace(0, 1, 6)[:, None]
    m = fit_gp(X, 3 * X[:, 0])
    held = np.array([[0.05], [0.37], [0.91]])
    np.testing.assert_allclose(m.predict_mean(held), 3 * held[:, 0], atol=1e-6)


def test_interpolation_without_nugget():
    X = lhs(12, 2, seed=3).points
    y = _branin_like(X)
    m = fit_gp(X, y, GpOptions(nugget=0.0, p=1.0))
    np.testing.assert_allclose(m.predict_mean(X), y, rtol=1e-8, atol=1e-8 * np.abs(y).max())
    assert np.all(m.predict_var(X) <= 1e-8 * m.sigma2)


def test_far_point_reverts_to_trend_and_sigma2():
    X = lhs(10, 2, seed=1).points
    m = fit_gp(X, _branin_like(X), GpOptions(trend_selection=False))
    far = np.array([[40.0, -40.0]])
    assert gp_predict_mean(m, far[0]) == pytest.approx(float(m.trend.predict(m.normalize(far))[0]), abs=1e-10)
    assert gp_predict_var(m, far[0]) == pytest.approx(m.sigma2, rel=1e-10)


def test_variance_bounds(rng):
    X = lhs(15, 3, seed=2).points
    m = fit_gp(X, X.sum(axis=1) ** 2)
    v = m.predict_var(rng.uniform(-0.5, 1.5, (200, 3)))
    assert np.all(v >= 0) and np.all(v <= m.sigma2 * (1 + 1e-12))


def test_prediction_accuracy_on_smooth_function(rng):
    X = lhs(40, 2, seed=5).points
    m = fit_gp(X, _branin_like(X))
    T = rng.uniform(size=(300, 2))
    err = m.predict_mean(T) - _branin_like(T)
    assert np.sqrt(np.mean(err ** 2)) < 1e-2 * np.std(_branin_like(T))


def test_dimension_mismatch():
    X = lhs(6, 2, seed=0).points
    m = fit_gp(X, X[:, 0])
    with pytest.raises(ValueError):
        m.predict_mean(np.zeros((1, 3)))


def test_duplicates_rejected_without_nugget():
    X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.9]])
    with pytest.raises(GpFitError):
        fit_gp(X, np.array([1.0, 1.0, 2.0]), GpOptions(nugget=0.0))


def test_optimum_is_local_minimum():
    X = lhs(20, 2, seed=7).points
    m = fit_gp(X, _branin_like(X), GpOptions(trend_selection=False))
    base = concentrated_nll(m)
    for j in range(2):
        for f in (0.8, 1.25):
            theta = m.corr.theta.copy()
            theta[j] *= f
            if not (1e-3 < theta[j] < 1e3):
                continue
            assert concentrated_nll(m, theta=theta) >= base - 1e-6


def test_fixed_parameters_skip_search():
    X = lhs(10, 2, seed=0).points
    fixed = CorrelationParams([2.0, 3.0], [2.0, 2.0])
    m = fit_gp(X, _branin_like(X), fixed=fixed, active=())
    np.testing.assert_array_equal(m.corr.theta, fixed.theta)
    assert m.trend.active == ()


def test_refit_keeps_hyperparameters():
    X = lhs(20, 2, seed=4).points
    m = fit_gp(X, _branin_like(X))
    sub = refit_predictor(m, X[:15], _branin_like(X[:15]))
    np.testing.assert_array_equal(sub.corr.theta, m.corr.theta)
    assert sub.trend.active == m.trend.active
    assert sub.n == 15


def test_fit_is_deterministic():
    X = lhs(15, 3, seed=8).points
    y = X @ [1.0, -2.0, 0.5] + np.sin(5 * X[:, 0])
    a, b = fit_gp(X, y), fit_gp(X, y)
    np.testing.assert_array_equal(a.corr.theta, b.corr.theta)


def test_text_round_trip():
    X = lhs(10, 2, seed=1).points
    m = fit_gp(X, _branin_like(X))
    back = parse_model(format_model(m))
    T = np.random.default_rng(0).uniform(size=(20, 2))
    np.testing.assert_array_equal(back.predict_mean(T), m.predict_mean(T))
    with pytest.raises(ValueError):
        parse_model("garbage\n")
