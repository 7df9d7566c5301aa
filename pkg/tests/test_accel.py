"""The numba fast path must agree with the pure-numpy reference."""

import numpy as np
import pytest

from biascal import _accel


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(123)


def test_backend_selected():
    assert _accel.BACKEND in ("numba", "numpy")


def test_sq_dists_matches_reference(rng):
    x = rng.normal(size=(17, 3))
    y = rng.normal(size=(9, 3))
    assert np.allclose(_accel.sq_dists(x, y), _accel.sq_dists_numpy(x, y), rtol=1e-14, atol=1e-14)


def test_matern_matches_reference(rng):
    x = rng.normal(size=(20, 2))
    y = rng.normal(size=(15, 2))
    a = _accel.matern32_cross(x, y, 1.7, 0.6)
    b = _accel.matern32_cross_numpy(x, y, 1.7, 0.6)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15)


def test_rbf_matches_reference(rng):
    x = rng.normal(size=(12, 1))
    y = rng.normal(size=(12, 1))
    a = _accel.rbf_cross(x, y, 0.5, 1.3)
    b = _accel.rbf_cross_numpy(x, y, 0.5, 1.3)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-15)


def test_nw_diag_matches_reference_and_anchor_exactness(rng):
    anchors = rng.uniform(0, 10, size=(5, 1))
    variances = rng.uniform(1e-6, 1e-2, size=5)
    queries = np.vstack([anchors[2], rng.uniform(0, 10, size=(8, 1))])
    a = _accel.nw_diag(queries, anchors, variances, 2.0)
    b = _accel.nw_diag_numpy(queries, anchors, variances, 2.0)
    assert np.allclose(a, b, rtol=1e-14, atol=0)
    assert a[0] == variances[2]
