"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The numpy implementations are the reference; the numba versions are
compiled from the same loops and must agree to floating-point noise
(see tests/test_accel.py). Set the environment variable
``BIASCAL_NO_NUMBA=1`` to force the numpy path, e.g. on platforms where
numba is unavailable or for debugging. ``benchmarks/bench_kernels.py``
compares both paths.
"""

import os

import numpy as np

_SQRT3 = np.sqrt(3.0)


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def sq_dists_numpy(x, y):
    """Pairwise squared Euclidean distances between rows of x (n,d) and y (m,d)."""
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def matern32_cross_numpy(x, y, amp2, ell):
    """Matern nu=3/2 cross-covariance: amp2 * (1 + s) * exp(-s), s = sqrt(3) r / ell."""
    s = (_SQRT3 / ell) * np.sqrt(sq_dists_numpy(x, y))
    return amp2 * (1.0 + s) * np.exp(-s)


def rbf_cross_numpy(x, y, amp2, ell):
    """Squared-exponential cross-covariance: amp2 * exp(-r^2 / (2 ell^2))."""
    return amp2 * np.exp(sq_dists_numpy(x, y) / (-2.0 * ell * ell))


def nw_diag_numpy(x, anchors, variances, bandwidth):
    """Nadaraya-Watson noise-variance regression evaluated at rows of x.

    Exact at anchors: a query equal (bitwise) to an anchor returns that
    anchor's variance directly instead of the smoothed value.
    """
    n = x.shape[0]
    m = anchors.shape[0]
    out = np.empty(n)
    for i in range(n):
        hit = -1
        for j in range(m):
            if np.array_equal(x[i], anchors[j]):
                hit = j
                break
        if hit >= 0:
            out[i] = variances[hit]
        else:
            d2 = np.sum((anchors - x[i]) ** 2, axis=1)
            w = np.exp(d2 / (-2.0 * bandwidth * bandwidth))
            out[i] = np.dot(w, variances) / np.sum(w)
    return out


# ---------------------------------------------------------------------------
# numba fast path
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit, prange

    @njit(cache=True, parallel=False)
    def sq_dists(x, y):
        n, d = x.shape
        m = y.shape[0]
        out = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = x[i, k] - y[j, k]
                    acc += t * t
                out[i, j] = acc
        return out

    @njit(cache=True, parallel=True)
    def matern32_cross(x, y, amp2, ell):
        n, d = x.shape
        m = y.shape[0]
        c = _SQRT3 / ell
        out = np.empty((n, m))
        for i in prange(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = x[i, k] - y[j, k]
                    acc += t * t
                s = c * np.sqrt(acc)
                out[i, j] = amp2 * (1.0 + s) * np.exp(-s)
        return out

    @njit(cache=True, parallel=True)
    def rbf_cross(x, y, amp2, ell):
        n, d = x.shape
        m = y.shape[0]
        c = -0.5 / (ell * ell)
        out = np.empty((n, m))
        for i in prange(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = x[i, k] - y[j, k]
                    acc += t * t
                out[i, j] = amp2 * np.exp(c * acc)
        return out

    @njit(cache=True, parallel=False)
    def nw_diag(x, anchors, variances, bandwidth):
        n, d = x.shape
        m = anchors.shape[0]
        c = -0.5 / (bandwidth * bandwidth)
        out = np.empty(n)
        for i in range(n):
            hit = -1
            for j in range(m):
                same = True
                for k in range(d):
                    if x[i, k] != anchors[j, k]:
                        same = False
                        break
                if same:
                    hit = j
                    break
            if hit >= 0:
                out[i] = variances[hit]
            else:
                wsum = 0.0
                acc = 0.0
                for j in range(m):
                    d2 = 0.0
                    for k in range(d):
                        t = x[i, k] - anchors[j, k]
                        d2 += t * t
                    w = np.exp(c * d2)
                    wsum += w
                    acc += w * variances[j]
                out[i] = acc / wsum
        return out

    return sq_dists, matern32_cross, rbf_cross, nw_diag


if os.environ.get("BIASCAL_NO_NUMBA", "") not in ("", "0"):
    BACKEND = "numpy"
else:
    try:
        _nb = _build_numba()
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency here
        BACKEND = "numpy"

if BACKEND == "numba":
    sq_dists, matern32_cross, rbf_cross, nw_diag = _nb
else:
    sq_dists = sq_dists_numpy
    matern32_cross = matern32_cross_numpy
    rbf_cross = rbf_cross_numpy
    nw_diag = nw_diag_numpy
