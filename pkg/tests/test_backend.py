from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from sobolmap import _backend, _kernels_py

compiled = pytest.importorskip("sobolmap._kernels", reason="compiled kernels not built")


@pytest.fixture
def data(rng):
    X = rng.uniform(size=(25, 4))
    Y = rng.uniform(size=(9, 4))
    theta = rng.uniform(0.1, 20, 4)
    p = rng.uniform(0.5, 2.0, 4)
    return X, Y, theta, p


def test_corr_matrix_parity(data):
    X, _, theta, p = data
    np.testing.assert_allclose(compiled.corr_matrix(X, theta, p), _kernels_py.corr_matrix(X, theta, p),
                               rtol=1e-13, atol=1e-15)


def test_cross_corr_parity(data):
    X, Y, theta, p = data
    np.testing.assert_allclose(compiled.cross_corr(Y, X, theta, p), _kernels_py.cross_corr(Y, X, theta, p),
                               rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("with_p", [False, True])
def test_corr_grad_parity(data, rng, with_p):
    X, _, theta, p = data
    M = rng.normal(size=(25, 25))
    M = M + M.T
    np.testing.assert_allclose(np.asarray(compiled.corr_grad(X, p, M, with_p)),
                               np.asarray(_kernels_py.corr_grad(X, p, M, with_p)), rtol=1e-11, atol=1e-12)


def test_campbell_parity(rng):
    X = rng.uniform(-1, 5, (6, 8))
    z1, z2 = rng.uniform(-90, 90, 50), rng.uniform(-90, 90, 50)
    np.testing.assert_allclose(compiled.campbell2d(X, z1, z2), _kernels_py.campbell2d(X, z1, z2),
                               rtol=1e-13, atol=1e-13)


def test_kriging_sums_parity(rng):
    G, n, d = 3, 20, 4
    U = rng.uniform(size=(15, d))
    Xs = rng.uniform(size=(G, n, d))
    theta = rng.uniform(0.5, 10, (G, d))
    p = np.full((G, d), 2.0)
    p[1] = 1.3
    W = rng.normal(size=(G, n))
    np.testing.assert_allclose(compiled.kriging_sums(U, Xs, theta, p, W), _kernels_py.kriging_sums(U, Xs, theta, p, W),
                               rtol=1e-12, atol=1e-12)


def test_backend_selection_default_is_compiled():
    assert _backend.BACKEND == "cython"


def test_pure_python_switch():
    env = dict(os.environ, SOBOLMAP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sobolmap import _backend; print(_backend.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_fractional_exponents_route_to_numpy(monkeypatch):
    calls = []
    monkeypatch.setattr(_kernels_py, "corr_matrix", lambda *a: calls.append("py") or np.eye(2))
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    _backend.corr_matrix(X, np.ones(2), np.array([1.5, 2.0]))
    assert calls == ["py"]
    calls.clear()
    _backend.corr_matrix(X, np.ones(2), np.array([1.0, 2.0]))
    assert calls == ([] if _backend.BACKEND == "cython" else ["py"])
