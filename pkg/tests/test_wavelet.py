from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sobolmap.field import GridField
from sobolmap.wavelet import (WaveletDecomposition, WaveletError, WaveletSpec, basis_images, coefficient_address,
                              dwt2, dwt2_array, idwt2, idwt2_array, lowpass, rank_by_variance, rank_coefficients)

FAMILIES = ["haar", "db2", "db4", "db6", "db8"]


@pytest.mark.parametrize("family", FAMILIES)
def test_filters_are_orthonormal(family):
    h = lowpass(family)
    assert abs(np.sum(h * h) - 1.0) < 1e-12
    assert abs(np.sum(h) - np.sqrt(2.0)) < 1e-12
    # double-shift orthogonality
    for k in range(1, len(h) // 2):
        assert abs(np.dot(h[2 * k:], h[:-2 * k])) < 1e-12


def test_unknown_family():
    with pytest.raises(WaveletError):
        lowpass("sym4")
    with pytest.raises(WaveletError):
        lowpass("db3")


def test_constant_two_by_two_haar():
    c = 3.5
    dec = dwt2(GridField(np.full((2, 2), c)), WaveletSpec("haar", 1))
    np.testing.assert_allclose(dec.as_array(), [[2 * c, 0.0], [0.0, 0.0]], atol=1e-14)


@pytest.mark.parametrize("family", ["haar", "db4"])
@pytest.mark.parametrize("levels", [1, 3, None])
def test_round_trip_and_parseval(rng, family, levels):
    f = GridField(rng.uniform(-1e3, 1e3, (64, 32)))
    spec = WaveletSpec(family, levels)
    dec = dwt2(f, spec)
    assert dec.K == f.values.size
    assert np.max(np.abs(idwt2(dec).values - f.values)) < 1e-10
    assert abs(np.sum(dec.coeffs ** 2) / np.sum(f.values ** 2) - 1.0) < 1e-9


def test_unit_coefficient_round_trip():
    spec = WaveletSpec("db4")
    img = basis_images([77], (32, 32), spec)[0]
    back = dwt2_array(img, spec).ravel()
    expected = np.zeros(32 * 32)
    expected[77] = 1.0
    np.testing.assert_allclose(back, expected, atol=1e-12)


def test_zero_coefficients_give_zero_field():
    dec = WaveletDecomposition(np.zeros(64), (8, 8), WaveletSpec())
    assert np.all(idwt2(dec).values == 0.0)


def test_coarsest_approximation_is_constant():
    spec = WaveletSpec("db4")
    img = basis_images([0], (16, 16), spec)[0]
    np.testing.assert_allclose(img, np.full((16, 16), 1.0 / 16.0), atol=1e-13)


def test_level_bounds():
    with pytest.raises(WaveletError):
        WaveletSpec("haar", 4).depth((8, 16))
    with pytest.raises(WaveletError):
        dwt2_array(np.zeros((6, 8)), WaveletSpec())


def test_incomplete_coefficients_rejected():
    with pytest.raises(WaveletError):
        idwt2(WaveletDecomposition(np.zeros(10), (4, 4), WaveletSpec()))


@given(arrays(np.float64, (2, 8, 8), elements=st.floats(-100, 100)), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_linearity(fields, a, b):
    spec = WaveletSpec("db2")
    lhs = dwt2_array(a * fields[0] + b * fields[1], spec)
    rhs = a * dwt2_array(fields[0], spec) + b * dwt2_array(fields[1], spec)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(fields)))


def test_batched_transform_matches_single(rng):
    spec = WaveletSpec("db4")
    stack = rng.normal(size=(3, 16, 16))
    batched = dwt2_array(stack, spec)
    for i in range(3):
        np.testing.assert_array_equal(batched[i], dwt2_array(stack[i], spec))
    np.testing.assert_allclose(idwt2_array(batched, spec), stack, atol=1e-12)


def test_addresses():
    spec = WaveletSpec("haar")
    assert coefficient_address(0, (8, 8), spec) == (3, "LL", (0, 0))
    assert coefficient_address(4, (8, 8), spec) == (1, "LH", (0, 0))
    assert coefficient_address(8 * 4, (8, 8), spec) == (1, "HL", (0, 0))
    assert coefficient_address(63, (8, 8), spec) == (1, "HH", (3, 3))
    assert coefficient_address(2 * 8 + 2, (8, 8), spec) == (2, "HH", (0, 0))


def test_rank_single_varying_coefficient(rng):
    coeffs = np.zeros((10, 16))
    coeffs[:, 7] = rng.normal(size=10)
    rank = rank_coefficients(coeffs)
    assert rank.order[0] == 7
    assert np.all(np.diff(rank.sorted_variances()) <= 0)


def test_rank_constant_ensemble_is_identity():
    rank = rank_coefficients(np.ones((4, 9)))
    np.testing.assert_array_equal(rank.order, np.arange(9))
    assert np.all(rank.empirical_variances == 0)


def test_rank_uses_divisor_n():
    coeffs = np.array([[0.0, 1.0], [2.0, 1.0]])
    np.testing.assert_allclose(rank_coefficients(coeffs).empirical_variances, [1.0, 0.0])


def test_rank_invariant_to_added_constant_field(rng):
    spec = WaveletSpec("db4")
    fields = rng.normal(size=(6, 16, 16))
    shift = rng.normal(size=(16, 16))
    a = rank_by_variance([dwt2(GridField(f), spec) for f in fields])
    b = rank_by_variance([dwt2(GridField(f + shift), spec) for f in fields])
    np.testing.assert_allclose(a.empirical_variances, b.empirical_variances, atol=1e-10)


def test_rank_needs_two_and_same_spec(rng):
    f = GridField(rng.normal(size=(4, 4)))
    with pytest.raises(WaveletError):
        rank_by_variance([dwt2(f)])
    with pytest.raises(WaveletError):
        rank_by_variance([dwt2(f, WaveletSpec("haar")), dwt2(f, WaveletSpec("db2"))])


def test_campbell_variance_concentrated_in_top_ranks():
    from conftest import campbell_ensemble

    ens = campbell_ensemble(200, 5)
    spec = WaveletSpec()
    coeffs = dwt2_array(ens.values - ens.values.mean(axis=0), spec).reshape(200, -1)
    var = rank_coefficients(coeffs).sorted_variances()
    share_30 = var[:30].sum() / var.sum()
    share_10pct = var[: int(0.1 * var.size)].sum() / var.sum()
    assert share_30 > 0.9
    assert share_10pct > 0.99
