"""Priors, likelihood variants and the Metropolis-Hastings sampler."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FactorizationError
from .gp import fit_map
from .models import residual_inputs
from .ogp import model_gradient_fd, orthogonal_builder

LOG_2PI = math.log(2.0 * math.pi)

# diagnostics: bias fits that failed factorization and were scored -inf
_FAILED_BIAS_FITS = 0


def failed_bias_fit_count():
    return _FAILED_BIAS_FITS


def reset_failed_bias_fits():
    global _FAILED_BIAS_FITS
    _FAILED_BIAS_FITS = 0


@dataclass
class NormalPrior:
    name: str
    mean: float
    sd: float

    def __post_init__(self):
        if self.sd <= 0:
            raise ConfigError("normal prior needs sd > 0")

    def logpdf(self, v):
        z = (v - self.mean) / self.sd
        return -math.log(self.sd) - 0.5 * LOG_2PI - 0.5 * z * z

    def center(self):
        return self.mean

    def spread(self):
        return self.sd


@dataclass
class LogNormalPrior:
    name: str
    mu_log: float
    sd_log: float

    def __post_init__(self):
        if self.sd_log <= 0:
            raise ConfigError("log-normal prior needs sd_log > 0")

    def logpdf(self, v):
        if v <= 0:
            return -np.inf
        z = (math.log(v) - self.mu_log) / self.sd_log
        return -math.log(v * self.sd_log) - 0.5 * LOG_2PI - 0.5 * z * z

    def center(self):
        return math.exp(self.mu_log)  # median

    def spread(self):
        m = math.exp(self.mu_log + 0.5 * self.sd_log ** 2)
        return m * math.sqrt(math.exp(self.sd_log ** 2) - 1.0)


@dataclass
class UniformPrior:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("uniform prior needs lo < hi")

    def logpdf(self, v):
        if self.lo <= v <= self.hi:
            return -math.log(self.hi - self.lo)
        return -np.inf

    def center(self):
        return 0.5 * (self.lo + self.hi)

    def spread(self):
        return self.hi - self.lo


def log_prior(priors, theta):
    """Sum of per-parameter prior log densities; -inf outside support."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if len(priors) != theta.size:
        raise ConfigError(f"{len(priors)} priors for {theta.size} parameters")
    total = 0.0
    for prior, v in zip(priors, theta):
        lp = prior.logpdf(float(v))
        if not np.isfinite(lp):
            return -np.inf
        total += lp
    return total


def log_likelihood_nobias(model, theta, data, sigma_meas):
    """Independent Gaussian error model on the residuals y - f(x, theta).

    Every dataset row counts once, so repeated series are independent and
    equally weighted.
    """
    if sigma_meas <= 0:
        raise ConfigError("sigma_meas must be positive")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    r = data.y - model.eval_many(theta, data.x)
    n = r.shape[0]
    return float(-0.5 * np.sum((r / sigma_meas) ** 2) - n * math.log(sigma_meas) - 0.5 * n * LOG_2PI)


def log_likelihood_biased(
    model,
    theta,
    data,
    bias,
    extended=False,
    scaler=None,
    residual_scale=1.0,
    fd_steps=1e-3,
    fit_options=None,
    cache=None,
):
    """Marginal log-likelihood of a parameter sample under the bias GP.

    Fits the bias GP on the residuals for this ``theta`` (orthogonal
    covariance when the bias model says so) and returns its achieved
    marginal log-likelihood together with the fitted GP; this value is
    the data term of the Metropolis ratio. A factorization failure scores
    the sample -inf instead of aborting the run.
    """
    global _FAILED_BIAS_FITS
    theta = np.asarray(theta, dtype=float).reshape(-1)
    inputs, r = residual_inputs(
        model, theta, data, extended=extended, scaler=scaler, residual_scale=residual_scale
    )
    builder = None
    if bias.orthogonal:
        anchors = np.asarray(bias.anchors, dtype=float)
        if anchors.ndim == 1:
            anchors = anchors[:, None]
        model_anchors = anchors[:, : model.coord_dim]
        sens = model_gradient_fd(model, theta[: len(model.param_names)], model_anchors, fd_steps)
        if residual_scale != 1.0:
            sens.values = sens.values * residual_scale
        kernel_anchors = scaler.transform(anchors) if scaler is not None else anchors
        builder = orthogonal_builder(sens, kernel_anchors)
    try:
        fit = fit_map(bias, inputs, r, builder=builder, cache=cache, **(fit_options or {}))
    except FactorizationError:
        _FAILED_BIAS_FITS += 1
        return -np.inf, None
    return fit.log_likelihood, fit


@dataclass
class Chain:
    """Post-burn-in samples of one Metropolis-Hastings run."""

    samples: np.ndarray  # (S, t)
    log_posterior: np.ndarray  # (S,)
    acceptance_rate: float
    proposal_sd: np.ndarray
    seed: int
    burn_in: int
    param_names: tuple = ()

    def __len__(self):
        return self.samples.shape[0]


def metropolis_hastings(log_target, init, proposal_sd, steps, burn_in, seed, param_names=()):
    """Gaussian random-walk Metropolis-Hastings, deterministic given the seed.

    ``steps`` counts all iterations; the first ``burn_in`` are discarded.
    The random stream is consumed identically on accepted and rejected
    proposals so runs are reproducible bit for bit.
    """
    init = np.asarray(init, dtype=float).reshape(-1)
    proposal_sd = np.broadcast_to(np.asarray(proposal_sd, dtype=float), init.shape).copy()
    if np.any(proposal_sd <= 0):
        raise ConfigError("proposal standard deviations must be positive")
    if not steps > burn_in >= 0:
        raise ConfigError(f"need steps > burn_in >= 0, got steps={steps}, burn_in={burn_in}")
    current = init.copy()
    lp = float(log_target(current))
    if not np.isfinite(lp):
        raise ConfigError(f"log target not finite at the initial point {init}")
    kept = steps - burn_in
    samples = np.empty((kept, init.size))
    log_post = np.empty(kept)
    rng = np.random.default_rng(seed)
    accepted = 0
    for step in range(steps):
        prop = current + proposal_sd * rng.standard_normal(init.size)
        lp_prop = float(log_target(prop))
        log_u = math.log(rng.random())
        if lp_prop - lp > log_u:
            current = prop
            lp = lp_prop
            accepted += 1
        if step >= burn_in:
            samples[step - burn_in] = current
            log_post[step - burn_in] = lp
    return Chain(
        samples=samples,
        log_posterior=log_post,
        acceptance_rate=accepted / steps,
        proposal_sd=proposal_sd,
        seed=int(seed),
        burn_in=int(burn_in),
        param_names=tuple(param_names),
    )


def map_estimate(chains):
    """Visited sample with the highest stored log-posterior across chains."""
    chains = list(chains)
    if not chains or all(len(c) == 0 for c in chains):
        raise ConfigError("map_estimate needs nonempty chains")
    best = None
    best_lp = -np.inf
    for c in chains:
        k = int(np.argmax(c.log_posterior))
        if c.log_posterior[k] > best_lp:
            best_lp = float(c.log_posterior[k])
            best = c.samples[k].copy()
    return best
