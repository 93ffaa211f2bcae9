from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sobolmap.campbell2d import (CORNER_INPUTS, MARGINALS, Campbell2D, Campbell2DGrid, CampbellDomainError,
                                 _s4, _s6, _s7, analytic_first_order, analytic_first_order_all, campbell2d_eval,
                                 first_order_variance, output_variance, variable_changes)
from sobolmap.sobol import DoubleLoopBudget, doubleloop_maps


def reference_eval(x, z1, z2):
    """Plain numpy transcription of the function, independent of the compiled kernel."""
    t1, t2, f1, f2 = 0.8 * z1 + 0.2 * z2, 0.5 * z1 + 0.5 * z2, 0.4 * z1 + 0.6 * z2, 0.3 * z1 + 0.7 * z2
    x1, x2, x3, x4, x5, x6, x7, x8 = x
    return (x1 * np.exp(-(t1 - 10 * x2) ** 2 / (60 * x1 ** 2))
            + (x2 + x4) * np.exp(t2 * x1 / 500)
            + x5 * (x3 - 2) * np.exp(-(f1 - 20 * x6) ** 2 / (40 * x5 ** 2))
            + (x6 + x8) * np.exp(f2 * x7 / 250))


def test_grid_geometry():
    g = Campbell2DGrid()
    Z1, Z2 = g.coords()
    assert g.shape == (64, 64)
    assert Z1[0, 0] == -90 and Z1[-1, 0] == 90 and Z2[0, -1] == 90
    with pytest.raises(ValueError):
        Campbell2DGrid(48, 64)


def test_variable_changes_at_origin():
    assert variable_changes(0.0, 0.0) == (0.0, 0.0, 0.0, 0.0)


def test_constructed_zero_terms():
    # theta1 = 0 at (z1, z2) = (0, 0)
    ev = Campbell2D(points=[(0.0, 0.0)])
    assert ev(np.array([[1, 0, 2, 0, 1, 0, 0, 0]], float))[0, 0, 0] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("name", sorted(CORNER_INPUTS))
def test_kernel_matches_reference_transcription(name):
    g = Campbell2DGrid(32, 32)
    Z1, Z2 = g.coords()
    x = CORNER_INPUTS[name]
    np.testing.assert_allclose(campbell2d_eval(x, g).values, reference_eval(x, Z1, Z2), rtol=1e-13, atol=1e-12)


@given(st.lists(st.floats(-1, 5).filter(lambda v: abs(v) > 1e-3), min_size=8, max_size=8))
@settings(max_examples=40, deadline=None)
def test_kernel_matches_reference_random(x):
    g = Campbell2DGrid(8, 8)
    Z1, Z2 = g.coords()
    np.testing.assert_allclose(Campbell2D(g)(np.array([x]))[0], reference_eval(x, Z1, Z2), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name,lo,hi,mean", [
    ("low", -5.709072435485157, -1.2009006232548534, -3.830427075073467),
    ("high", 5.7186960523916035, 100.38583596056542, 26.731734836623655),
    ("mixed", 2.2088306144597656, 8.985126759911974, 5.2324114594931785),
])
def test_corner_map_statistics(name, lo, hi, mean):
    v = campbell2d_eval(CORNER_INPUTS[name]).values
    assert (v.min(), v.max(), v.mean()) == pytest.approx((lo, hi, mean), rel=1e-12)


def test_domain_errors_and_bounds_warning():
    ev = Campbell2D(Campbell2DGrid(4, 4))
    for col in (0, 4):
        x = np.ones((1, 8))
        x[0, col] = 0.0
        with pytest.raises(CampbellDomainError):
            ev(x)
    with pytest.warns(UserWarning):
        ev(np.full((1, 8), 6.0))
    with pytest.raises(ValueError):
        ev(np.ones((1, 7)))


# -- analytic first-order maps ---------------------------------------------------------

@pytest.fixture(scope="module")
def grid16():
    return Campbell2DGrid(16, 16)


@pytest.fixture(scope="module")
def var16(grid16):
    Z1, Z2 = grid16.coords()
    return output_variance(Z1, Z2, mc_n=200_000, seed=0).reshape(grid16.shape)


def test_s5_zero_and_s8_equals_s6(grid16, var16):
    S = analytic_first_order_all(grid16, variance=var16)
    assert np.all(S[4] == 0.0)
    assert S[7].tobytes() == S[5].tobytes()
    assert np.all(analytic_first_order(5, grid16, variance=var16).values == 0.0)


def test_invalid_index():
    with pytest.raises(ValueError):
        first_order_variance(9, 0.0, 0.0)


def test_s4_diagonal_branch_equals_var_x4():
    assert first_order_variance(4, 30.0, -30.0) == pytest.approx(3.0, rel=1e-14)


def test_normalized_s4_on_diagonal(grid16, var16):
    # coordinates are symmetric, so (k, n-1-k) lies on z1 = -z2
    S4 = analytic_first_order(4, grid16, variance=var16).values
    k = 5
    assert S4[k, 15 - k] == pytest.approx(3.0 / var16[k, 15 - k], rel=1e-12)


@pytest.mark.parametrize("fn", [_s4, _s6, _s7])
def test_branch_continuity(fn):
    at0 = fn(np.array([0.0]))[0]
    near = fn(np.array([1e-6, -1e-6]))
    if at0 == 0.0:
        assert np.all(np.abs(near) < 1e-6)
    else:
        np.testing.assert_allclose(near, at0, rtol=1e-6)


def test_indices_nonnegative_and_sum_below_one(grid16, var16):
    S = analytic_first_order_all(grid16, variance=var16)
    assert S.min() >= 0.0
    assert S.sum(axis=0).max() <= 1.0 + 0.01  # MC tolerance of Var(Y) at 2e5 draws


def test_brute_force_nested_oracle():
    """Nested Monte Carlo straight on the function at 16 random pixels."""
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-90, 90, (16, 2))
    ev = Campbell2D(points=pts)
    budget = DoubleLoopBudget(256, 2000, 2, 2, 200_000)
    est = doubleloop_maps(ev, MARGINALS, budget, seed=1, sampling="lhs",
                          excursion_tol=np.inf).first_order[:, 0, :]
    var = output_variance(pts[:, 0], pts[:, 1], mc_n=400_000, seed=3)
    exact = np.stack([first_order_variance(i, pts[:, 0], pts[:, 1]) for i in range(1, 9)]) / var
    assert np.max(np.abs(est - exact)) < 0.02


def test_quadrature_converged(grid16):
    Z1, Z2 = grid16.coords()
    for i in (1, 2, 3):
        a = first_order_variance(i, Z1, Z2, nodes=48)
        b = first_order_variance(i, Z1, Z2, nodes=96)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-10)
