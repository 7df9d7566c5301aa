"""Pipeline orchestration for the three calibration methods.

Builds the log target for no-bias, KOH and OGP runs, drives the chains,
extracts the MAP sample, refits the bias GP there and produces the
fitted and bias-corrected predictive bands.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import BiascalError, ConfigError
from . import gp as gp_mod
from . import inference as inf
from .diagnostics import summarize
from .gp import predict
from .inference import log_likelihood_biased, log_likelihood_nobias, log_prior, map_estimate, metropolis_hastings
from .models import residual_inputs

METHODS = ("nobias", "koh", "ogp")


class CalibrationAborted(BiascalError):
    """A chain aborted; carries whatever chains completed."""

    def __init__(self, message, chains=()):
        super().__init__(message)
        self.chains = list(chains)


@dataclass
class InputScaler:
    """Per-dimension affine map of inputs onto the unit box."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_data(cls, inputs):
        inputs = np.asarray(inputs, dtype=float)
        lo = inputs.min(axis=0)
        hi = inputs.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(lo=lo, hi=hi)

    def transform(self, inputs):
        return (np.asarray(inputs, dtype=float) - self.lo) / (self.hi - self.lo)

    def inverse(self, unit):
        return np.asarray(unit, dtype=float) * (self.hi - self.lo) + self.lo


@dataclass
class CalibrationConfig:
    method: str
    model: object
    priors: list
    bias: object = None  # BiasModel for koh/ogp
    extended: bool = False
    scaler: InputScaler = None
    residual_scale: float = 1.0
    fd_steps: object = 1e-3
    steps: int = 1100
    burn_in: int = 100
    n_chains: int = 2
    seeds: tuple = (1, 2)
    proposal_sd: np.ndarray = None
    init: np.ndarray = None
    noise_param: str = None
    fit_options: dict = field(default_factory=dict)
    refit_options: dict = field(default_factory=lambda: {"restarts": 4, "xatol": 1e-6, "fatol": 1e-9})
    label: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method in ("koh", "ogp") and self.bias is None:
            raise ConfigError(f"method {self.method!r} needs a bias model")
        if self.method == "ogp":
            if not self.bias.orthogonal:
                raise ConfigError("method 'ogp' requires bias.orthogonal = True")
        if self.method == "koh" and self.bias is not None and self.bias.orthogonal:
            raise ConfigError("method 'koh' must not use an orthogonal bias")
        names = [p.name for p in self.priors]
        model_names = list(self.model.param_names)
        if names[: len(model_names)] != model_names:
            raise ConfigError(
                f"priors must start with the model parameters {model_names}, got {names}"
            )
        extra = names[len(model_names) :]
        if self.noise_param is None and extra:
            raise ConfigError(f"unexpected extra priors {extra} without a noise_param")
        if self.noise_param is not None and extra != [self.noise_param]:
            raise ConfigError(
                f"expected exactly one extra prior named {self.noise_param!r}, got {extra}"
            )
        if len(self.seeds) < self.n_chains:
            raise ConfigError("need one seed per chain")

    @property
    def param_names(self):
        return tuple(p.name for p in self.priors)

    def describe(self):
        """Plain-dict echo of the configuration for run metadata."""
        d = {
            "method": self.method,
            "model": self.model.name,
            "priors": [repr(p) for p in self.priors],
            "extended": self.extended,
            "residual_scale": self.residual_scale,
            "steps": self.steps,
            "burn_in": self.burn_in,
            "n_chains": self.n_chains,
            "seeds": list(self.seeds[: self.n_chains]),
            "label": self.label,
        }
        if self.proposal_sd is not None:
            d["proposal_sd"] = list(np.atleast_1d(self.proposal_sd).astype(float))
        if self.init is not None:
            d["init"] = list(np.atleast_1d(self.init).astype(float))
        if self.bias is not None:
            d["kernel"] = repr(self.bias.kernel)
            d["orthogonal"] = self.bias.orthogonal
        return d


@dataclass
class CalibrationResult:
    config: CalibrationConfig
    chains: list
    summary: object
    theta_star: np.ndarray
    final_gp: object
    wall_seconds: float
    data_sigma: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def pooled_samples(self):
        return np.vstack([c.samples for c in self.chains])


@dataclass
class PredictiveBand:
    """Mean and SD of a predictive response over a query grid."""

    x: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    kind: str
    eta: np.ndarray = None

    def __post_init__(self):
        if self.x.shape[0] == 0:
            raise ConfigError("empty band grid")
        if np.any(self.sd < 0):
            raise ConfigError("negative band SD")


def residuals(model, theta, data, extended=False, scaler=None, residual_scale=1.0):
    """Bias-GP training inputs and residual vector for a parameter sample.

    Inputs are the x rows, or (x, eta) rows when extended, optionally
    mapped to the unit box; residuals are y - f(x, theta) times the
    residual scale factor. The model itself only ever sees x.
    """
    return residual_inputs(
        model, theta, data, extended=extended, scaler=scaler, residual_scale=residual_scale
    )


def _sigma_n_effective(config, data):
    return data.sigma_meas * config.residual_scale


def _prepare_bias(config, data):
    bias = config.bias.clone()
    bias.sigma_n = _sigma_n_effective(config, data)
    return bias


def _make_target(config, data, bias, warm, cache=None):
    model = config.model
    priors = config.priors
    n_model = len(model.param_names)

    def target(theta):
        lp = log_prior(priors, theta)
        if not np.isfinite(lp):
            return -np.inf
        if not model.in_domain(theta[:n_model]):
            return -np.inf
        if config.method == "nobias":
            sigma = theta[n_model] if config.noise_param else data.sigma_meas
            if sigma <= 0:
                return -np.inf
            return lp + log_likelihood_nobias(model, theta[:n_model], data, sigma)
        opts = dict(config.fit_options)
        if warm.get("vector") is not None:
            opts["init"] = warm["vector"]
        ll, fit = log_likelihood_biased(
            model,
            theta[:n_model],
            data,
            bias,
            extended=config.extended,
            scaler=config.scaler,
            residual_scale=config.residual_scale,
            fd_steps=config.fd_steps,
            fit_options=opts,
            cache=cache,
        )
        if fit is not None:
            warm["vector"] = _free_vector(fit.bias)
        return lp + ll

    return target


def _free_vector(bias):
    entries = gp_mod._free_entries(bias)
    return np.array([np.log(h.value) if h.log_scale else h.value for _, h in entries])


def calibrate(config, data):
    """Run the configured chains, summarize, and refit the bias at the MAP."""
    t0 = time.perf_counter()
    if config.extended and data.eta is None:
        raise ConfigError("extended calibration requires a dataset with eta")
    if config.method == "nobias" and config.noise_param is None and data.sigma_meas <= 0:
        raise ConfigError("no-bias likelihood needs a positive sigma_meas or a latent noise prior")

    bias = _prepare_bias(config, data) if config.method in ("koh", "ogp") else None
    init = config.init
    if init is None:
        init = np.array([p.center() for p in config.priors])
    proposal = config.proposal_sd
    if proposal is None:
        proposal = np.array([0.1 * p.spread() for p in config.priors])

    fits_before = gp_mod.fit_call_count()
    failures_before = inf.failed_bias_fit_count()
    # the profile-path eigendecomposition only stays valid while the base
    # covariance is theta-independent, i.e. for the non-orthogonal methods
    cache = {} if config.method == "koh" else None
    chains = []
    for k in range(config.n_chains):
        warm = {"vector": None}
        target = _make_target(config, data, bias, warm, cache=cache)
        try:
            chain = metropolis_hastings(
                target,
                init,
                proposal,
                steps=config.steps,
                burn_in=config.burn_in,
                seed=config.seeds[k],
                param_names=config.param_names,
            )
        except BiascalError as exc:
            raise CalibrationAborted(f"chain {k} aborted: {exc}", chains=chains) from exc
        chains.append(chain)

    summary = summarize(chains)
    theta_star = map_estimate(chains)

    final_gp = None
    if config.method in ("koh", "ogp"):
        _, final_gp = log_likelihood_biased(
            config.model,
            theta_star[: len(config.model.param_names)],
            data,
            bias,
            extended=config.extended,
            scaler=config.scaler,
            residual_scale=config.residual_scale,
            fd_steps=config.fd_steps,
            fit_options=config.refit_options,
            cache=cache,
        )
        if final_gp is None:
            raise CalibrationAborted("bias refit at the MAP sample failed", chains=chains)

    return CalibrationResult(
        config=config,
        chains=chains,
        summary=summary,
        theta_star=theta_star,
        final_gp=final_gp,
        wall_seconds=time.perf_counter() - t0,
        data_sigma=data.sigma_meas,
        diagnostics={
            "bias_fit_calls": gp_mod.fit_call_count() - fits_before,
            "failed_bias_fits": inf.failed_bias_fit_count() - failures_before,
        },
    )


def fitted_response(result, model, grid, max_samples=None):
    """Moments of f(x, theta) over the pooled posterior, plus measurement noise."""
    grid = np.asarray(grid, dtype=float)
    gx = grid[:, None] if grid.ndim == 1 else grid
    samples = result.pooled_samples[:, : len(model.param_names)]
    if max_samples is not None and samples.shape[0] > max_samples:
        rng = np.random.default_rng(0)
        keep = np.sort(rng.choice(samples.shape[0], size=max_samples, replace=False))
        samples = samples[keep]
    preds = np.empty((samples.shape[0], gx.shape[0]))
    for i, theta in enumerate(samples):
        preds[i] = model.eval_many(theta, gx)
    mean = preds.mean(axis=0)
    var = preds.var(axis=0) + result.data_sigma ** 2
    return PredictiveBand(x=grid, mean=mean, sd=np.sqrt(var), kind="fitted")


def bias_corrected_response(result, model, grid, eta=None):
    """Model at the MAP plus the refit bias GP's predictive distribution."""
    if result.config.method not in ("koh", "ogp") or result.final_gp is None:
        raise ConfigError("bias-corrected response needs a koh/ogp result with a final GP")
    if result.config.extended and eta is None:
        raise ConfigError("extended calibration requires eta on the query grid")
    if not result.config.extended and eta is not None:
        raise ConfigError("eta supplied but the calibration was not extended")
    grid = np.asarray(grid, dtype=float)
    gx = grid[:, None] if grid.ndim == 1 else grid
    inputs = gx
    if eta is not None:
        eta_arr = np.asarray(eta, dtype=float)
        eta_col = eta_arr[:, None] if eta_arr.ndim == 1 else eta_arr
        inputs = np.hstack([gx, eta_col])
    if result.config.scaler is not None:
        inputs = result.config.scaler.transform(inputs)
    mean_b, cov_b = predict(result.final_gp, inputs)
    scale = result.config.residual_scale
    theta_model = result.theta_star[: len(model.param_names)]
    mean = model.eval_many(theta_model, gx) + mean_b / scale
    var = np.clip(np.diag(cov_b), 0.0, None) / scale ** 2 + result.data_sigma ** 2
    return PredictiveBand(
        x=grid, mean=mean, sd=np.sqrt(var), kind="bias_corrected",
        eta=None if eta is None else np.asarray(eta, dtype=float),
    )
