"""Covariance-function algebra.

Elementary kernels (constant, Matern 3/2, RBF), noise-aware kernels
(white noise, heteroscedastic per-anchor noise with kernel regression),
and their sum/product composition. Each scalar hyperparameter carries a
value, a free flag and bounds in natural units, so a fitted kernel is a
plain copy of the spec with updated values.

Noise semantics: a noise kernel contributes only on the diagonal for
matching *records*, not matching floating-point coordinates. The
pointwise :func:`eval_kernel` uses exact coordinate equality (the case
split of the white-noise definition), while :func:`gram` treats two
coordinate lists as the same records only when they are the same array,
so repeated measurements at one physical location each get their own
diagonal noise entry.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ConfigError, DimensionMismatchError


@dataclass
class Hyper:
    """Scalar hyperparameter: value plus free flag and bounds in natural units.

    ``log_scale`` marks positive quantities the optimizer should search in
    log space; parameters that are already logarithms (heteroscedastic
    log-variances) keep it off.
    """

    value: float
    free: bool = False
    bounds: tuple = (1e-6, 1e6)
    log_scale: bool = True

    def __post_init__(self):
        lo, hi = self.bounds
        if not lo < hi:
            raise ConfigError(f"hyperparameter bounds must satisfy lo < hi, got {self.bounds}")
        if not lo <= self.value <= hi:
            raise ConfigError(
                f"hyperparameter value {self.value} outside bounds {self.bounds}"
            )

    @classmethod
    def fixed(cls, value, log_scale=True):
        if value == 0.0:
            return cls(value, free=False, bounds=(-1.0, 1.0), log_scale=False)
        lo, hi = sorted((value / 2.0, value * 2.0))
        return cls(value, free=False, bounds=(lo, hi), log_scale=log_scale)


def _as_hyper(value, log_scale=True):
    return value if isinstance(value, Hyper) else Hyper.fixed(float(value), log_scale)


class Kernel:
    """Base class for kernel-spec nodes. Treat instances as immutable."""

    name = "kernel"

    def children(self):
        return ()

    def hypers(self):
        """Yield (dotted path, Hyper) pairs over the whole subtree."""
        return ()

    def free_hypers(self):
        return [(p, h) for p, h in self.hypers() if h.free]

    def contains_noise(self):
        return any(c.contains_noise() for c in self.children())

    def clone(self):
        return copy.deepcopy(self)

    def _check_dims(self, x, xp):
        x = np.asarray(x, dtype=float).reshape(-1)
        xp = np.asarray(xp, dtype=float).reshape(-1)
        if x.shape != xp.shape:
            raise DimensionMismatchError(
                f"coordinate dimensions differ: {x.shape[0]} vs {xp.shape[0]}", node=self.name
            )
        return x, xp

    # pointwise evaluation with exact-equality noise semantics
    def __call__(self, x, xp):
        raise NotImplementedError

    # full gram block; ``same`` means rows/columns are the same records
    def cross(self, x, xp, same):
        raise NotImplementedError


@dataclass
class Constant(Kernel):
    """Constant-valued kernel k(x, x') = c."""

    value: Hyper
    name = "constant"

    def __init__(self, value):
        self.value = _as_hyper(value)

    def hypers(self):
        yield "constant.value", self.value

    def __call__(self, x, xp):
        self._check_dims(x, xp)
        return self.value.value

    def cross(self, x, xp, same):
        return np.full((x.shape[0], xp.shape[0]), self.value.value)


@dataclass
class Matern32(Kernel):
    """Matern kernel with nu fixed at 3/2: amp^2 (1 + sqrt(3) r / ell) exp(-sqrt(3) r / ell)."""

    amplitude: Hyper
    lengthscale: Hyper
    name = "matern32"

    def __init__(self, amplitude, lengthscale):
        self.amplitude = _as_hyper(amplitude)
        self.lengthscale = _as_hyper(lengthscale)

    def hypers(self):
        yield "matern32.amplitude", self.amplitude
        yield "matern32.lengthscale", self.lengthscale

    def __call__(self, x, xp):
        x, xp = self._check_dims(x, xp)
        s = np.sqrt(3.0) * np.linalg.norm(x - xp) / self.lengthscale.value
        return self.amplitude.value ** 2 * (1.0 + s) * np.exp(-s)

    def cross(self, x, xp, same):
        return _accel.matern32_cross(x, xp, self.amplitude.value ** 2, self.lengthscale.value)


@dataclass
class RBF(Kernel):
    """Squared-exponential kernel: amp^2 exp(-r^2 / (2 ell^2))."""

    amplitude: Hyper
    lengthscale: Hyper
    name = "rbf"

    def __init__(self, amplitude, lengthscale):
        self.amplitude = _as_hyper(amplitude)
        self.lengthscale = _as_hyper(lengthscale)

    def hypers(self):
        yield "rbf.amplitude", self.amplitude
        yield "rbf.lengthscale", self.lengthscale

    def __call__(self, x, xp):
        x, xp = self._check_dims(x, xp)
        r2 = float(np.sum((x - xp) ** 2))
        return self.amplitude.value ** 2 * np.exp(-0.5 * r2 / self.lengthscale.value ** 2)

    def cross(self, x, xp, same):
        return _accel.rbf_cross(x, xp, self.amplitude.value ** 2, self.lengthscale.value)


@dataclass
class WhiteNoise(Kernel):
    """Homoscedastic noise kernel: variance on the diagonal, zero elsewhere."""

    variance: Hyper
    name = "white_noise"

    def __init__(self, variance):
        self.variance = _as_hyper(variance)

    def hypers(self):
        yield "white_noise.variance", self.variance

    def contains_noise(self):
        return True

    def __call__(self, x, xp):
        x, xp = self._check_dims(x, xp)
        return self.variance.value if np.array_equal(x, xp) else 0.0

    def cross(self, x, xp, same):
        out = np.zeros((x.shape[0], xp.shape[0]))
        if same:
            np.fill_diagonal(out, self.variance.value)
        return out


class Heteroscedastic(Kernel):
    """Per-anchor noise variances extended off-anchor by kernel regression.

    The free parameters are the log-variances (positivity by construction).
    Off anchors the variance is a Nadaraya-Watson regression with
    squared-exponential weights; at an anchor it equals that anchor's
    variance exactly. Default bandwidth is the mean nearest-neighbour
    anchor spacing.
    """

    name = "heteroscedastic"

    def __init__(self, anchors, log_variances, bandwidth=None):
        anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
        if anchors.ndim != 2:
            raise ConfigError("heteroscedastic anchors must form an (m, d) array")
        if len(np.unique(anchors, axis=0)) != len(anchors):
            raise ConfigError("heteroscedastic anchor coordinates must be pairwise distinct")
        self.anchors = anchors
        self.log_variances = [
            lv if isinstance(lv, Hyper) else Hyper(float(lv), bounds=(-60.0, 10.0), log_scale=False)
            for lv in log_variances
        ]
        if len(self.log_variances) != len(anchors):
            raise ConfigError("need one log-variance per anchor")
        if bandwidth is None:
            bandwidth = _mean_nn_spacing(anchors)
        self.bandwidth = _as_hyper(bandwidth)
        if self.bandwidth.value <= 0:
            raise ConfigError("bandwidth must be positive")

    def hypers(self):
        for i, lv in enumerate(self.log_variances):
            yield f"heteroscedastic.log_variance[{i}]", lv
        yield "heteroscedastic.bandwidth", self.bandwidth

    def contains_noise(self):
        return True

    def variances(self):
        return np.exp([lv.value for lv in self.log_variances])

    def noise_at(self, x):
        """Regressed noise variance g(x) for query rows x (m, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.anchors.shape[1]:
            raise DimensionMismatchError(
                f"query dimension {x.shape[1]} != anchor dimension {self.anchors.shape[1]}",
                node=self.name,
            )
        return _accel.nw_diag(x, self.anchors, self.variances(), self.bandwidth.value)

    def __call__(self, x, xp):
        x, xp = self._check_dims(x, xp)
        if x.shape[0] != self.anchors.shape[1]:
            raise DimensionMismatchError(
                f"coordinate dimension {x.shape[0]} != anchor dimension {self.anchors.shape[1]}",
                node=self.name,
            )
        if not np.array_equal(x, xp):
            return 0.0
        return float(self.noise_at(x[None, :])[0])

    def cross(self, x, xp, same):
        out = np.zeros((x.shape[0], xp.shape[0]))
        if same:
            np.fill_diagonal(out, self.noise_at(x))
        return out


@dataclass
class Sum(Kernel):
    left: Kernel
    right: Kernel
    name = "sum"

    def children(self):
        return (self.left, self.right)

    def hypers(self):
        for p, h in self.left.hypers():
            yield f"sum.left.{p}", h
        for p, h in self.right.hypers():
            yield f"sum.right.{p}", h

    def __call__(self, x, xp):
        return self.left(x, xp) + self.right(x, xp)

    def cross(self, x, xp, same):
        return self.left.cross(x, xp, same) + self.right.cross(x, xp, same)


@dataclass
class Product(Kernel):
    left: Kernel
    right: Kernel
    name = "product"

    def children(self):
        return (self.left, self.right)

    def hypers(self):
        for p, h in self.left.hypers():
            yield f"product.left.{p}", h
        for p, h in self.right.hypers():
            yield f"product.right.{p}", h

    def __call__(self, x, xp):
        return self.left(x, xp) * self.right(x, xp)

    def cross(self, x, xp, same):
        return self.left.cross(x, xp, same) * self.right.cross(x, xp, same)


def _mean_nn_spacing(anchors):
    if len(anchors) < 2:
        return 1.0
    d2 = _accel.sq_dists(anchors, anchors)
    np.fill_diagonal(d2, np.inf)
    return float(np.mean(np.sqrt(d2.min(axis=1))))


@dataclass
class GramMatrix:
    """Kernel matrix over row/column coordinate lists.

    ``note`` carries a non-fatal numerical warning (e.g. an ill-conditioned
    orthogonality correction) without interrupting a sampling run.
    """

    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    note: str = field(default="")


def _coords(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ConfigError(f"coordinates must form an (n, d) array, got shape {x.shape}")
    return np.ascontiguousarray(x)


def eval_kernel(spec, x, xp):
    """Evaluate k(x, x') for a single coordinate pair."""
    return spec(x, xp)


def gram_values(spec, x, xp=None, same=None):
    """Kernel matrix as a plain ndarray; ``xp is None`` means x vs itself.

    ``same=True`` marks xp as the same records as x, activating the
    diagonal of any noise kernels.
    """
    x = _coords(x)
    if xp is None:
        xp, same = x, True
    else:
        if same is None:
            same = xp is x
        xp = _coords(xp)
    if x.shape[0] == 0 or xp.shape[0] == 0:
        raise ConfigError("empty coordinate list")
    if x.shape[1] != xp.shape[1]:
        raise DimensionMismatchError(
            f"row dimension {x.shape[1]} != column dimension {xp.shape[1]}", node=spec.name
        )
    return spec.cross(x, xp, bool(same))


def gram(spec, x, xp=None, same=None):
    """Kernel matrix over coordinate lists, wrapped with its coordinates."""
    xc = _coords(x)
    values = gram_values(spec, xc, None if xp is None else _coords(xp), same)
    return GramMatrix(values=values, rows=xc, cols=xc if xp is None else _coords(xp))


def find_nodes(spec, kind):
    """All nodes of a given class in the spec tree, depth first."""
    out = []
    if isinstance(spec, kind):
        out.append(spec)
    for c in spec.children():
        out.extend(find_nodes(c, kind))
    return out


def split_noise(spec):
    """Split a kernel into (smooth part, noise part) across top-level sums.

    Returns (smooth, noise); either may be None. Noise kernels inside a
    product cannot be separated and raise, since the orthogonality
    correction must exclude them.
    """
    if isinstance(spec, Sum):
        ls, ln = split_noise(spec.left)
        rs, rn = split_noise(spec.right)
        smooth = ls if rs is None else (rs if ls is None else Sum(ls, rs))
        noise = ln if rn is None else (rn if ln is None else Sum(ln, rn))
        return smooth, noise
    if spec.contains_noise():
        if isinstance(spec, (WhiteNoise, Heteroscedastic)):
            return None, spec
        raise ConfigError(
            "noise kernels must enter additively to be separated from the smooth part"
        )
    return spec, None


def amplitude_profile(spec):
    """Detect a kernel whose only free parameter scales the whole matrix.

    Returns (hyper, exponent, unit_spec, fixed_diag_variance) when the
    gram factors as scale * K0 + d * I with scale = hyper.value ** exponent,
    K0 the gram of ``unit_spec`` and d a fixed scalar. Returns None when
    the structure does not match. Used by the fit routines to replace a
    simplex search by a one-dimensional profile over an eigendecomposition.
    """
    free = spec.free_hypers()
    if len(free) != 1:
        return None
    smooth, noise = _split_or_none(spec)
    if smooth is None:
        return None
    d = 0.0
    if noise is not None:
        if not isinstance(noise, WhiteNoise) or noise.variance.free:
            return None
        d = noise.variance.value
    res = _scale_split(smooth)
    if res is None:
        return None
    hyper, exponent, unit = res
    if not hyper.free:
        return None
    return hyper, exponent, unit, d


def _split_or_none(spec):
    try:
        return split_noise(spec)
    except ConfigError:
        return None, spec


def _scale_split(spec):
    """Match spec = scale * unit with exactly one free hyper providing the scale."""
    if isinstance(spec, (Matern32, RBF)):
        if spec.amplitude.free and not spec.lengthscale.free:
            unit = spec.clone()
            unit.amplitude = Hyper.fixed(1.0)
            return spec.amplitude, 2, unit
        return None
    if isinstance(spec, Product):
        for first, second in ((spec.left, spec.right), (spec.right, spec.left)):
            if (
                isinstance(first, Constant)
                and first.value.free
                and not second.free_hypers()
                and not second.contains_noise()
            ):
                return first.value, 1, second.clone()
    return None
