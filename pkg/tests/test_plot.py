from __future__ import annotations

import numpy as np

from sobolmap.plot import NAN_COLOR, colorize, read_ppm, shared_range, write_ppm


def test_ramp_endpoints_and_monotone_clip():
    rgb = colorize(np.array([[0.0, 1.0], [-5.0, 9.0]]), vmin=0.0, vmax=1.0)
    assert tuple(rgb[0, 0]) == tuple(rgb[1, 0]) == (0, 0, 131)
    assert tuple(rgb[0, 1]) == tuple(rgb[1, 1]) == (128, 0, 0)


def test_nan_and_flat():
    rgb = colorize(np.array([[np.nan, 2.0], [2.0, 2.0]]))
    assert tuple(rgb[0, 0]) == NAN_COLOR
    assert len({tuple(c) for c in rgb.reshape(-1, 3)[1:]}) == 1


def test_ppm_round_trip(tmp_path, rng):
    vals = rng.normal(size=(4, 8))
    write_ppm(vals, tmp_path / "x.ppm", zoom=3)
    img = read_ppm(tmp_path / "x.ppm")
    assert img.shape == (12, 24, 3)
    np.testing.assert_array_equal(img[::3, ::3], colorize(vals))


def test_shared_range_ignores_nan():
    assert shared_range([np.array([np.nan, 1.0]), np.array([-2.0, 0.5])]) == (-2.0, 1.0)
