"""Gaussian-process core for the bias term.

Marginal log-likelihood through a triangular factorization, MAP
hyperparameter fitting (derivative-free, bounded), and posterior
prediction. The covariance over arbitrary coordinate pairs is delegated
to a ``builder`` callable so the same machinery runs with the plain
kernel gram or with the orthogonality-corrected covariance.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import qmc

from .errors import ConfigError, FactorizationError
from .kernels import (
    Heteroscedastic,
    Hyper,
    WhiteNoise,
    amplitude_profile,
    find_nodes,
    gram_values,
)

LOG_2PI = math.log(2.0 * math.pi)

# instrumentation: how many GP fits have run in this process
_FIT_CALLS = 0


def fit_call_count():
    return _FIT_CALLS


def reset_fit_counter():
    global _FIT_CALLS
    _FIT_CALLS = 0


def default_builder(kernel, x, xp, same):
    """Covariance values from the plain kernel gram."""
    return gram_values(kernel, x, xp, same=same)


@dataclass
class BiasModel:
    """Specification of the discrepancy GP.

    ``sigma_n`` is the prescribed measurement-noise amplitude entering the
    marginal likelihood as an extra diagonal variance; ``jitter`` is a
    fixed numerical stabilizer on top of which automatic escalation may
    act. ``anchors`` are only used when ``orthogonal`` is set.
    """

    kernel: object
    mean: Hyper = field(default_factory=lambda: Hyper(0.0, free=False, bounds=(-1e12, 1e12), log_scale=False))
    anchors: np.ndarray = None
    orthogonal: bool = False
    jitter: float = 0.0
    sigma_n: float = 0.0
    hyper_priors: dict = None

    def __post_init__(self):
        if self.jitter < 0:
            raise ConfigError("jitter must be nonnegative")
        if self.sigma_n < 0:
            raise ConfigError("sigma_n must be nonnegative")
        if self.orthogonal and (self.anchors is None or len(self.anchors) == 0):
            raise ConfigError("orthogonal bias models require non-empty anchors")

    def clone(self):
        import copy

        return copy.deepcopy(self)


@dataclass
class FittedGP:
    """A bias GP after MAP fitting, with its training-set factorization cached."""

    bias: BiasModel
    x: np.ndarray
    residuals: np.ndarray
    builder: object
    chol: np.ndarray
    alpha: np.ndarray
    log_likelihood: float
    jitter_used: float


def _free_entries(bias):
    """Free hyperparameters of a bias model: kernel hypers plus the mean."""
    entries = [(p, h) for p, h in bias.kernel.hypers() if h.free]
    if bias.mean.free:
        entries.append(("mean", bias.mean))
    return entries


def _factorize(cov, base_jitter, hyper_info=None):
    """Lower Cholesky of cov (+ base jitter), escalating jitter on failure."""
    n = cov.shape[0]
    eye = np.eye(n)
    c = cov if base_jitter == 0.0 else cov + base_jitter * eye
    try:
        return sla.cholesky(c, lower=True, check_finite=False), base_jitter
    except sla.LinAlgError:
        pass
    scale = max(np.trace(cov) / n, np.finfo(float).tiny)
    j = 1e-10 * scale
    while j <= 1e-4 * scale:
        try:
            return (
                sla.cholesky(c + j * eye, lower=True, check_finite=False),
                base_jitter + j,
            )
        except sla.LinAlgError:
            j *= 10.0
    raise FactorizationError(
        "covariance not positive definite after jitter escalation",
        hyperparameters=hyper_info or {},
    )


def _loglik_from_chol(chol, r_tilde):
    alpha = sla.cho_solve((chol, True), r_tilde, check_finite=False)
    n = r_tilde.shape[0]
    ll = -0.5 * float(r_tilde @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * LOG_2PI
    return ll, alpha


def _covariance(bias, x, builder):
    cov = builder(bias.kernel, x, x, True)
    if bias.sigma_n > 0.0:
        cov = cov + (bias.sigma_n ** 2) * np.eye(cov.shape[0])
    return cov


def _hyper_info(bias):
    return {p: h.value for p, h in bias.kernel.hypers()} | {"mean": bias.mean.value}


def log_marginal_likelihood(bias, x, r, builder=None):
    """Marginal log-likelihood of residuals r at inputs x under the bias GP.

    Computed as -1/2 r~' C^-1 r~ - 1/2 log|C| - n/2 log 2pi with
    C = C_b + sigma_n^2 I (plus jitter), via a triangular factorization;
    no explicit inverse is formed.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    r = np.asarray(r, dtype=float).reshape(-1)
    if x.shape[0] != r.shape[0]:
        raise ConfigError(f"|x| = {x.shape[0]} but |r| = {r.shape[0]}")
    builder = builder or default_builder
    cov = _covariance(bias, x, builder)
    chol, _ = _factorize(cov, bias.jitter, _hyper_info(bias))
    ll, _ = _loglik_from_chol(chol, r - bias.mean.value)
    return ll


def _log_hyperprior(bias, entries):
    if not bias.hyper_priors:
        return 0.0
    total = 0.0
    for path, h in entries:
        for key, (mu, sd) in bias.hyper_priors.items():
            if path.endswith(key):
                if h.value <= 0:
                    return -np.inf
                z = (math.log(h.value) - mu) / sd
                total += -math.log(h.value * sd) - 0.5 * LOG_2PI - 0.5 * z * z
    return total


def _finish(bias, x, r, builder):
    cov = _covariance(bias, x, builder)
    chol, jitter_used = _factorize(cov, bias.jitter, _hyper_info(bias))
    r_tilde = r - bias.mean.value
    ll, alpha = _loglik_from_chol(chol, r_tilde)
    return FittedGP(
        bias=bias,
        x=x,
        residuals=r,
        builder=builder,
        chol=chol,
        alpha=alpha,
        log_likelihood=ll,
        jitter_used=jitter_used,
    )


def _smart_start(bias, x, r):
    """Data-informed start values: residual variance for scale parameters,
    per-anchor residual scatter for heteroscedastic log-variances."""
    r_tilde = r - bias.mean.value
    rvar = float(np.var(r_tilde)) or 1.0
    fixed_diag = bias.sigma_n ** 2
    for wn in find_nodes(bias.kernel, WhiteNoise):
        if not wn.variance.free:
            fixed_diag += wn.variance.value
    for het in find_nodes(bias.kernel, Heteroscedastic):
        if not any(lv.free for lv in het.log_variances):
            continue
        d2 = ((x[:, None, :] - het.anchors[None, :, :]) ** 2).sum(axis=2)
        nearest = d2.argmin(axis=1)
        for i, lv in enumerate(het.log_variances):
            if not lv.free:
                continue
            sel = r_tilde[nearest == i]
            if sel.size >= 2:
                est = float(np.var(sel)) - fixed_diag
            else:
                est = rvar
            lo, hi = lv.bounds
            lv.value = float(np.clip(math.log(max(est, 1e-300)), lo, hi))
    for path, h in bias.kernel.hypers():
        if not h.free:
            continue
        lo, hi = h.bounds
        if path.endswith("constant.value"):
            h.value = float(np.clip(rvar, lo, hi))
        elif path.endswith("amplitude"):
            h.value = float(np.clip(math.sqrt(rvar), lo, hi))


def _profile_fit(bias, x, r, builder, entries, cache=None):
    """One free scale parameter: profile the likelihood on an eigenbasis.

    With C(v) = s(v) * K0 + d * I the quadratic form and determinant are
    O(n) per candidate after one symmetric eigendecomposition, so the
    scalar search is cheap. The returned fit goes through the standard
    Cholesky path at the optimum. ``cache`` (a per-run dict) carries the
    eigendecomposition of the fixed base gram across calls; callers must
    only share it while the base covariance builder stays constant.
    """
    prof = amplitude_profile(bias.kernel)
    if prof is None or bias.mean.free:
        return None
    hyper, exponent, unit, extra_diag = prof
    d = bias.sigma_n ** 2 + bias.jitter + extra_diag
    key = (x.shape, tuple((p, h.value) for p, h in unit.hypers()))
    if cache is not None and cache.get("key") == key:
        base, lam, q = cache["base"], cache["lam"], cache["q"]
    else:
        base = builder(unit, x, x, True)
        lam, q = np.linalg.eigh(base)
        lam = np.clip(lam, 0.0, None)
        if cache is not None:
            cache.update(key=key, base=base, lam=lam, q=q)
    p2 = (q.T @ (r - bias.mean.value)) ** 2
    n = x.shape[0]
    lo, hi = hyper.bounds
    tlo, thi = math.log(lo), math.log(hi)

    def nll(t):
        denom = math.exp(exponent * t) * lam + d
        if np.any(denom <= 0.0):
            return np.inf
        value = 0.5 * float(np.sum(p2 / denom) + np.sum(np.log(denom))) + 0.5 * n * LOG_2PI
        if bias.hyper_priors:
            hyper.value = math.exp(t)
            value -= _log_hyperprior(bias, entries)
        return value

    ts = np.linspace(tlo, thi, 41)
    vals = [nll(t) for t in ts]
    k = int(np.argmin(vals))
    bracket = (ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)])
    res = minimize_scalar(nll, bounds=bracket, method="bounded", options={"xatol": 1e-8})
    t_best = res.x if res.fun <= vals[k] else ts[k]
    hyper.value = math.exp(float(t_best))
    # assemble the optimal covariance from the cached base instead of a
    # fresh gram; identical up to floating-point association
    scale = hyper.value ** exponent
    cov = scale * base + (bias.sigma_n ** 2 + extra_diag) * np.eye(n)
    chol, jitter_used = _factorize(cov, bias.jitter, _hyper_info(bias))
    r_tilde = r - bias.mean.value
    ll, alpha = _loglik_from_chol(chol, r_tilde)
    return FittedGP(
        bias=bias,
        x=x,
        residuals=r,
        builder=builder,
        chol=chol,
        alpha=alpha,
        log_likelihood=ll,
        jitter_used=jitter_used,
    )


def fit_map(bias, x, r, builder=None, restarts=4, maxfev=None, xatol=1e-4, fatol=1e-6, init=None, cache=None):
    """MAP fit of the free hyperparameters of a bias GP.

    Positive parameters are searched in log space within their bounds by
    a Nelder-Mead simplex restarted from quasi-random points of the bound
    box; the achieved log-likelihood never falls below the start value.
    ``init`` optionally overrides the first start (e.g. warm starts along
    an MCMC chain).
    """
    global _FIT_CALLS
    _FIT_CALLS += 1

    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    r = np.asarray(r, dtype=float).reshape(-1)
    builder = builder or default_builder
    work = bias.clone()
    entries = _free_entries(work)
    if not entries:
        return _finish(work, x, r, builder)

    fast = _profile_fit(work, x, r, builder, entries, cache=cache)
    if fast is not None:
        return fast

    def to_internal(h):
        return math.log(h.value) if h.log_scale else h.value

    def internal_bounds(h):
        lo, hi = h.bounds
        return (math.log(lo), math.log(hi)) if h.log_scale else (lo, hi)

    def apply(u):
        for ui, (_, h) in zip(u, entries):
            h.value = math.exp(ui) if h.log_scale else float(ui)

    def nll(u):
        apply(u)
        try:
            value = log_marginal_likelihood(work, x, r, builder=builder)
        except FactorizationError:
            return 1e300
        return -(value + _log_hyperprior(work, entries))

    bounds = [internal_bounds(h) for _, h in entries]
    lob = np.array([b[0] for b in bounds])
    hib = np.array([b[1] for b in bounds])
    starts = []
    if init is not None:
        starts.append(np.clip(np.asarray(init, dtype=float), lob, hib))
    current = np.array([to_internal(h) for _, h in entries])
    _smart_start(work, x, r)
    smart = np.array([to_internal(h) for _, h in entries])
    starts.append(smart)
    starts.append(current)
    n_extra = max(restarts - len(starts), 0)
    if n_extra:
        sampler = qmc.Sobol(d=len(entries), scramble=True, seed=20240601)
        for row in sampler.random(n_extra):
            starts.append(lob + row * (hib - lob))
    starts = starts[: max(restarts, 1)]

    best_u, best_f = None, np.inf
    failures = 0
    for u0 in starts:
        f0 = nll(u0)
        if f0 < best_f:
            best_u, best_f = np.array(u0), f0
        if not np.isfinite(f0) or f0 >= 1e300:
            failures += 1
            continue
        res = minimize(
            nll,
            u0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "xatol": xatol,
                "fatol": fatol,
                "maxfev": maxfev or 200 * len(entries) + 100,
            },
        )
        if res.fun < best_f:
            best_u, best_f = res.x, res.fun
    if best_u is None or not np.isfinite(best_f):
        raise FactorizationError(
            "all optimizer restarts failed to factorize the covariance",
            hyperparameters=_hyper_info(work),
        )
    apply(best_u)
    return _finish(work, x, r, builder)


def predict(fit, x_star):
    """Posterior mean and covariance of the bias GP at query inputs.

    The prior block k(X*, X*) follows the kernel's record semantics: any
    noise components contribute their diagonal at the query points, so the
    returned variance is an observation-level band. Cross-covariances to
    the training set carry no noise.
    """
    x_star = np.asarray(x_star, dtype=float)
    if x_star.ndim == 1:
        x_star = x_star[:, None]
    if x_star.shape[0] == 0:
        raise ConfigError("empty query grid")
    bias = fit.bias
    ks = fit.builder(bias.kernel, x_star, fit.x, False)
    kss = fit.builder(bias.kernel, x_star, x_star, True)
    mean = bias.mean.value + ks @ fit.alpha
    v = sla.solve_triangular(fit.chol, ks.T, lower=True, check_finite=False)
    cov = kss - v.T @ v
    diag = np.diag(cov).copy()
    scale = max(float(np.max(np.abs(np.diag(kss)))), 1.0)
    if np.any(diag < -1e-10 * scale):
        raise FactorizationError(
            f"negative predictive variance beyond tolerance: {diag.min()}",
            hyperparameters=_hyper_info(bias),
        )
    np.fill_diagonal(cov, np.clip(diag, 0.0, None))
    return mean, cov
