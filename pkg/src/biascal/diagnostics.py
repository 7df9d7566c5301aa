"""Chain statistics: mean, SD, highest density interval, Monte Carlo
standard errors and the Gelman-Rubin diagnostic."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SUMMARY_FIELDS = ("mean", "sd", "hdi_3", "hdi_97", "mcse_mean", "mcse_sd", "r_hat")


@dataclass
class PosteriorSummary:
    """Per-parameter summary rows keyed by parameter name."""

    params: dict

    def to_dict(self):
        return {name: dict(row) for name, row in self.params.items()}

    def __getitem__(self, name):
        return self.params[name]


def hdi(samples, prob=0.94):
    """Narrowest contiguous interval of sorted samples holding ceil(prob n)."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    n = samples.size
    if n < 10:
        raise ConfigError(f"hdi needs at least 10 samples, got {n}")
    if not 0.0 < prob < 1.0:
        raise ConfigError("prob must lie in (0, 1)")
    s = np.sort(samples)
    m = int(math.ceil(prob * n))
    if m >= n:
        return float(s[0]), float(s[-1])
    widths = s[m:] - s[: n - m]
    k = int(np.argmin(widths))
    return float(s[k]), float(s[k + m])


def gelman_rubin(chain_values):
    """Classical R-hat over chains of one parameter.

    A single chain is split into halves first. Written as
    sqrt((n-1)/n + B/(n W)) so identical chains give exactly
    sqrt((n-1)/n).
    """
    chains = [np.asarray(c, dtype=float).reshape(-1) for c in chain_values]
    if len(chains) == 1:
        c = chains[0]
        half = c.size // 2
        chains = [c[:half], c[half : 2 * half]]
    n = min(c.size for c in chains)
    if n < 4:
        raise ConfigError("gelman_rubin needs chains of length >= 4")
    chains = [c[:n] for c in chains]
    w = float(np.mean([np.var(c, ddof=1) for c in chains]))
    means = np.array([np.mean(c) for c in chains])
    b = n * float(np.var(means, ddof=1))
    if w == 0.0:
        if b == 0.0:
            return math.sqrt((n - 1) / n)
        return math.inf
    return math.sqrt((n - 1) / n + b / (n * w))


def _autocovariance(x):
    """Biased autocovariance function via FFT, lags 0..n-1."""
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real
    return acov / n


def effective_sample_size(chain_values):
    """ESS from Geyer's initial positive sequence on mean-centered chains.

    Accepts one array or a list of equal-length chains; autocovariances
    are averaged across chains around the pooled mean. Floored at 1.
    """
    if isinstance(chain_values, np.ndarray) and chain_values.ndim == 1:
        chains = [chain_values]
    elif isinstance(chain_values, (list, tuple)):
        chains = [np.asarray(c, dtype=float).reshape(-1) for c in chain_values]
    else:
        chains = [np.asarray(chain_values, dtype=float).reshape(-1)]
    n = min(c.size for c in chains)
    chains = [c[:n] for c in chains]
    total = n * len(chains)
    pooled_mean = float(np.mean(np.concatenate(chains)))
    acov = np.mean([_autocovariance(c - pooled_mean) for c in chains], axis=0)
    if acov[0] <= 0.0:
        return 1.0
    rho = acov / acov[0]
    tau = 0.0
    for k in range(0, n // 2):
        pair = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    tau = max(tau - 1.0, 1.0 / total)
    return max(total / tau, 1.0)


def mcse(samples):
    """(MCSE of the mean, MCSE of the SD).

    mcse_mean = sd / sqrt(ESS); mcse_sd uses the documented approximation
    sd / sqrt(2 ESS).
    """
    if isinstance(samples, (list, tuple)):
        pooled = np.concatenate([np.asarray(c, dtype=float).reshape(-1) for c in samples])
    else:
        pooled = np.asarray(samples, dtype=float).reshape(-1)
    if pooled.size < 20:
        raise ConfigError(f"mcse needs at least 20 samples, got {pooled.size}")
    sd = float(np.std(pooled, ddof=1))
    ess = effective_sample_size(samples)
    return sd / math.sqrt(ess), sd / math.sqrt(2.0 * ess)


def summarize(chains, prob=0.94):
    """Pooled-sample summary of a list of chains, one row per parameter."""
    chains = list(chains)
    if not chains:
        raise ConfigError("summarize needs at least one chain")
    names = chains[0].param_names or tuple(
        f"p{k}" for k in range(chains[0].samples.shape[1])
    )
    rows = {}
    for j, name in enumerate(names):
        per_chain = [c.samples[:, j] for c in chains]
        pooled = np.concatenate(per_chain)
        lo, hi = hdi(pooled, prob=prob)
        mc_mean, mc_sd = mcse(per_chain)
        rows[name] = {
            "mean": float(np.mean(pooled)),
            "sd": float(np.std(pooled, ddof=1)),
            "hdi_3": lo,
            "hdi_97": hi,
            "mcse_mean": mc_mean,
            "mcse_sd": mc_sd,
            "r_hat": gelman_rubin(per_chain),
        }
    return PosteriorSummary(params=rows)
