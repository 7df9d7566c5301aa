"""Forward models, synthetic data generators and loss-optimum oracles.

Three benchmark pairs are provided:

* a pedagogical linear model f(x, theta) = theta x against the generator
  y(x) = 4x + x sin 5x,
* a tip-loaded Euler-Bernoulli cantilever with a stochastic load surplus
  and a constant sensor offset in the generator,
* a simply supported influence line with a thermal uplift ramp present
  only in the generator.

The structural models are deliberately analytic stand-ins; every
benchmark assertion built on them is a ratio, an ordering or an optimum
derived from the generated data itself, never an absolute deflection.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError, ModelEvaluationError


@dataclass
class Dataset:
    """Observation table: coordinates, optional extension coordinates,
    series id, measured value and the prescribed noise amplitude."""

    x: np.ndarray  # (n, dx)
    y: np.ndarray  # (n,)
    series_id: np.ndarray  # (n,) int
    eta: np.ndarray = None  # (n, de) or None
    sigma_meas: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float).T).T
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.series_id = np.asarray(self.series_id, dtype=int).reshape(-1)
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)
            if self.eta.ndim == 1:
                self.eta = self.eta[:, None]
            if self.eta.shape[0] != self.x.shape[0]:
                raise ConfigError("eta rows must match x rows")
        if self.sigma_meas < 0:
            raise ConfigError("sigma_meas must be nonnegative")
        if not (self.x.shape[0] == self.y.shape[0] == self.series_id.shape[0]):
            raise ConfigError("inconsistent dataset row counts")

    def __len__(self):
        return self.y.shape[0]

    def inputs(self, extended=False):
        """GP input rows: x, or (x, eta) when the bias domain is extended."""
        if not extended:
            return self.x
        if self.eta is None:
            raise ConfigError("dataset has no eta columns but extension was requested")
        return np.hstack([self.x, self.eta])


class ForwardModel:
    """Deterministic computational model f(theta, x) -> scalar output."""

    name = "model"
    param_names = ()
    coord_dim = 1

    def in_domain(self, theta):
        return True

    def eval_many(self, theta, x):
        raise NotImplementedError

    def eval(self, theta, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.eval_many(np.asarray(theta, dtype=float).reshape(-1), x)[0])


class PedagogicalModel(ForwardModel):
    """Linear model f(x, theta) = theta x on [0, 1]."""

    name = "pedagogical"
    param_names = ("theta",)

    def eval_many(self, theta, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return float(theta[0]) * x[:, 0]


def pedagogical_truth(x):
    """Noise-free generating curve y(x) = 4x + x sin 5x."""
    x = np.asarray(x, dtype=float)
    return 4.0 * x + x * np.sin(5.0 * x)


# measurement grid of the pedagogical benchmark: 0.05 spacing over
# [0, 0.25] u [0.4, 0.5] u [0.8, 1.0], interval endpoints inclusive
PEDAGOGICAL_X = np.concatenate(
    [np.linspace(0.0, 0.25, 6), np.linspace(0.4, 0.5, 3), np.linspace(0.8, 1.0, 5)]
)

# noise amplitude of the pedagogical observations; the reported no-bias
# posterior spread (Table-2-style mean 3.33, sd 0.01) pins this to 0.02
PEDAGOGICAL_SIGMA = 0.02


def generate_pedagogical(seed):
    rng = np.random.default_rng(seed)
    x = PEDAGOGICAL_X.copy()
    y = pedagogical_truth(x) + PEDAGOGICAL_SIGMA * rng.standard_normal(x.shape[0])
    return Dataset(
        x=x,
        y=y,
        series_id=np.zeros(x.shape[0], dtype=int),
        sigma_meas=PEDAGOGICAL_SIGMA,
        meta={"seed": int(seed), "true_params": {"theta_curve": "4x + x sin 5x"}},
    )


class CantileverBeamModel(ForwardModel):
    """Midline deflection of a tip-loaded Euler-Bernoulli cantilever.

    u(x) = -P x^2 (3L - x) / (6 E I), downward negative. L = 50 m,
    rectangular section 3 m x 3 m, P = 100 kN.
    """

    name = "beam"
    param_names = ("E",)

    LENGTH = 50.0
    WIDTH = 3.0
    HEIGHT = 3.0
    INERTIA = WIDTH * HEIGHT ** 3 / 12.0
    LOAD = 100e3

    def in_domain(self, theta):
        return theta[0] > 0.0

    def deflection(self, x, modulus, load):
        return -load * x ** 2 * (3.0 * self.LENGTH - x) / (6.0 * modulus * self.INERTIA)

    def eval_many(self, theta, x):
        if theta[0] <= 0.0:
            raise ModelEvaluationError("Young's modulus must be positive", theta=theta)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.deflection(x[:, 0], float(theta[0]), self.LOAD)


BEAM_SENSORS = np.array([10.0, 20.0, 30.0, 40.0, 50.0])
BEAM_TRUE_E = 30e9
BEAM_OFFSET = -0.1
BEAM_SIGMA = math.sqrt(2e-8)
BEAM_N_SERIES = 20
BEAM_LOAD_SURPLUS_MEAN = 20e3
BEAM_LOAD_SURPLUS_SD = 6e3


def lognormal_moment_params(mean, sd):
    """(mu, sigma) of a log-normal with the given distribution mean and SD."""
    s2 = math.log(1.0 + (sd / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


def generate_beam(seed):
    """20 load repetitions at 5 sensors: stochastic load surplus, constant
    sensor offset and prescribed sensor noise."""
    rng = np.random.default_rng(seed)
    model = CantileverBeamModel()
    mu, sig = lognormal_moment_params(BEAM_LOAD_SURPLUS_MEAN, BEAM_LOAD_SURPLUS_SD)
    xs, ys, sid = [], [], []
    for s in range(BEAM_N_SERIES):
        surplus = rng.lognormal(mean=mu, sigma=sig)
        u = model.deflection(BEAM_SENSORS, BEAM_TRUE_E, model.LOAD + surplus)
        noise = BEAM_SIGMA * rng.standard_normal(BEAM_SENSORS.shape[0])
        xs.append(BEAM_SENSORS)
        ys.append(u + BEAM_OFFSET + noise)
        sid.append(np.full(BEAM_SENSORS.shape[0], s, dtype=int))
    return Dataset(
        x=np.concatenate(xs),
        y=np.concatenate(ys),
        series_id=np.concatenate(sid),
        sigma_meas=BEAM_SIGMA,
        meta={
            "seed": int(seed),
            "true_params": {"E": BEAM_TRUE_E},
            "offset": BEAM_OFFSET,
            "load_surplus": {"mean": BEAM_LOAD_SURPLUS_MEAN, "sd": BEAM_LOAD_SURPLUS_SD},
        },
    )


class InfluenceLineModel(ForwardModel):
    """Midspan deflection of a simply supported span under a moving point load.

    delta(a) = -P a (3 L^2 - 4 a^2) / (48 E I) for a <= L/2, mirrored for
    a > L/2, zero once the load is off the span. The run grid extends past
    the span end so the truck leaves the bridge.
    """

    name = "influence"
    param_names = ("E",)

    SPAN = 95.185
    WIDTH = 14.0
    DEPTH = 2.5
    INERTIA = WIDTH * DEPTH ** 3 / 12.0
    LOAD = 98.1e3  # 10 t test truck

    def in_domain(self, theta):
        return theta[0] > 0.0

    def deflection(self, position, modulus):
        a = np.asarray(position, dtype=float)
        span = self.SPAN
        aa = np.where(a > span / 2.0, span - a, a)
        on = (a >= 0.0) & (a <= span)
        d = -self.LOAD * aa * (3.0 * span ** 2 - 4.0 * aa ** 2) / (48.0 * modulus * self.INERTIA)
        return np.where(on, d, 0.0)

    def eval_many(self, theta, x):
        if theta[0] <= 0.0:
            raise ModelEvaluationError("Young's modulus must be positive", theta=theta)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return self.deflection(x[:, 0], float(theta[0]))


INFLUENCE_POSITIONS = np.arange(0.0, 105.0, 1.0)  # 1 m grid over [0, 104]
INFLUENCE_DT_SERIES = np.array([0.01, 0.028, 0.046, 0.064, 0.082, 0.1])  # end-of-run dT, K
INFLUENCE_TRUE_E = 40e9
INFLUENCE_SIGMA = 1e-6
INFLUENCE_ALPHA = 1e-5  # thermal expansion coefficient
INFLUENCE_RUN_END = 104.0


def influence_thermal_uplift(position, dt_end):
    """Midspan uplift from a linear-in-time temperature gradient.

    The top-of-deck temperature difference ramps from 0 at the start of
    the run to ``dt_end`` at position 104 m; curvature alpha dT / h bows
    the span upward by kappa L^2 / 8.
    """
    model = InfluenceLineModel
    dt = dt_end * np.asarray(position, dtype=float) / INFLUENCE_RUN_END
    kappa = INFLUENCE_ALPHA * dt / model.DEPTH
    return kappa * model.SPAN ** 2 / 8.0


def generate_influence(seed):
    """Six influence-line runs, one per end temperature difference.

    No random noise enters the observations: the prescribed amplitude
    ``INFLUENCE_SIGMA`` is the negligible numerical-stability noise of
    this case and acts only through the likelihood and the predictive
    bands. (The reported sub-1e-8 corrected-response distances of this
    benchmark are impossible for observations carrying actual 1e-6
    draws, so the stability reading is the consistent one.)
    """
    model = InfluenceLineModel()
    xs, ys, sid, etas = [], [], [], []
    for s, dt_end in enumerate(INFLUENCE_DT_SERIES):
        u = model.deflection(INFLUENCE_POSITIONS, INFLUENCE_TRUE_E)
        u = u + influence_thermal_uplift(INFLUENCE_POSITIONS, dt_end)
        xs.append(INFLUENCE_POSITIONS)
        ys.append(u)
        sid.append(np.full(INFLUENCE_POSITIONS.shape[0], s, dtype=int))
        etas.append(np.full(INFLUENCE_POSITIONS.shape[0], dt_end))
    return Dataset(
        x=np.concatenate(xs),
        y=np.concatenate(ys),
        series_id=np.concatenate(sid),
        eta=np.concatenate(etas),
        sigma_meas=INFLUENCE_SIGMA,
        meta={"seed": int(seed), "true_params": {"E": INFLUENCE_TRUE_E}},
    )


MODELS = {
    "pedagogical": PedagogicalModel,
    "beam": CantileverBeamModel,
    "influence": InfluenceLineModel,
}

GENERATORS = {
    "pedagogical": generate_pedagogical,
    "beam": generate_beam,
    "influence": generate_influence,
}


def residual_inputs(model, theta, data, extended=False, scaler=None, residual_scale=1.0):
    """Bias-GP training pairs for a parameter sample.

    The model is evaluated on x only; the inputs may carry the extension
    coordinates and an affine scaling, and the residuals an overall
    scale factor.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    inputs = data.inputs(extended=extended)
    if scaler is not None:
        inputs = scaler.transform(inputs)
    r = (data.y - model.eval_many(theta, data.x)) * residual_scale
    return inputs, r


def _golden_refine(loss, grid):
    values = np.array([loss(t) for t in grid])
    k = int(np.argmin(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    if lo == hi:
        return float(grid[k])
    res = minimize_scalar(loss, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(res.x if res.fun <= values[k] else grid[k])


def l2_optimum(model, generator_curve, domain, n_quad=2001, bounds=None, n_grid=200, log_grid=False):
    """Parameter minimizing the trapezoid-quadrature L2 loss over a domain.

    ``generator_curve`` is the noise-free generating function; the scan
    grid over the parameter is refined by a bounded golden-section search.
    """
    lo, hi = domain
    xq = np.linspace(lo, hi, n_quad)
    yq = generator_curve(xq)
    bounds = bounds or (0.0, 10.0)

    def loss(t):
        d = yq - model.eval_many(np.array([t]), xq[:, None])
        return float(np.trapezoid(d * d, xq))

    grid = np.geomspace(*bounds, n_grid) if log_grid else np.linspace(*bounds, n_grid)
    return _golden_refine(loss, grid)


def mse_optimum(model, data, bounds, n_grid=200, log_grid=False):
    """Parameter minimizing the mean squared error over dataset rows."""

    def loss(t):
        d = data.y - model.eval_many(np.array([t]), data.x)
        return float(np.mean(d * d))

    grid = np.geomspace(*bounds, n_grid) if log_grid else np.linspace(*bounds, n_grid)
    return _golden_refine(loss, grid)


def write_csv(data, path):
    """Dataset to CSV (17 significant digits) plus a metadata sidecar."""
    path = Path(path)
    cols = ["series_id", "x"]
    if data.eta is not None:
        cols.append("eta")
    cols.append("y")
    lines = [",".join(cols)]
    for i in range(len(data)):
        row = [str(int(data.series_id[i])), f"{data.x[i, 0]:.17g}"]
        if data.eta is not None:
            row.append(f"{data.eta[i, 0]:.17g}")
        row.append(f"{data.y[i]:.17g}")
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"sigma_meas": data.sigma_meas, **data.meta}
    path.with_suffix(".meta.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def read_csv(path):
    """Dataset from CSV written by :func:`write_csv` (sidecar optional)."""
    path = Path(path)
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    expected = {"series_id", "x", "y"}
    if not expected.issubset(header):
        raise ConfigError(f"dataset CSV must have columns series_id, x[, eta], y; got {header}")
    idx = {name: k for k, name in enumerate(header)}
    rows = [line.split(",") for line in lines[1:]]
    sid = np.array([int(r[idx["series_id"]]) for r in rows])
    x = np.array([float(r[idx["x"]]) for r in rows])
    y = np.array([float(r[idx["y"]]) for r in rows])
    eta = np.array([float(r[idx["eta"]]) for r in rows]) if "eta" in idx else None
    sigma = 0.0
    meta = {}
    sidecar = path.with_suffix(".meta.json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        sigma = float(meta.pop("sigma_meas", 0.0))
    return Dataset(x=x, y=y, series_id=sid, eta=eta, sigma_meas=sigma, meta=meta)
