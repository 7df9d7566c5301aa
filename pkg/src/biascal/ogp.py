"""Orthogonal covariance construction.

Rank-corrects a base kernel so that GP draws at the anchor points are
orthogonal to the forward model's parameter sensitivities, pinning the
inferred parameter to the L2-loss optimum. Sensitivities come from
central finite differences; the corrected covariance is

    C(x, x') = k(x, x') - w(x)' F (F' W F)^+ F' w(x')

with W the anchor gram, w(x) the anchor cross-covariances and F the
N x t sensitivity matrix. Noise kernels are excluded from the correction
and reinstated on the diagonal afterwards.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ModelEvaluationError
from .kernels import gram_values, split_noise

#: relative singular-value cutoff for the pseudo-inverse of F' W F
PINV_RCOND = 1e-12

#: condition number above which a non-degenerate correction gets flagged
COND_WARN = 1e12


@dataclass
class SensitivityMatrix:
    """Central-difference model sensitivities d f / d theta at anchor points."""

    values: np.ndarray  # (N, t)
    anchors: np.ndarray  # (N, d) model-space coordinates
    theta: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ModelEvaluationError(
                "non-finite sensitivity entries", theta=self.theta
            )


def model_gradient_fd(model, theta, anchors, steps):
    """Finite-difference sensitivities of the model at the anchor points.

    ``steps`` is the per-parameter half step of the central scheme; a
    scalar is broadcast over parameters.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    anchors = np.asarray(anchors, dtype=float)
    if anchors.ndim == 1:
        anchors = anchors[:, None]
    steps = np.broadcast_to(np.asarray(steps, dtype=float), theta.shape).copy()
    if np.any(steps <= 0):
        raise ModelEvaluationError("finite-difference steps must be positive", theta=theta)
    cols = []
    for k in range(theta.size):
        up = theta.copy()
        dn = theta.copy()
        up[k] += steps[k]
        dn[k] -= steps[k]
        try:
            f_up = model.eval_many(up, anchors)
            f_dn = model.eval_many(dn, anchors)
        except Exception as exc:
            raise ModelEvaluationError(
                f"model evaluation failed during sensitivity computation: {exc}",
                theta=theta,
                x=anchors,
            ) from exc
        cols.append((f_up - f_dn) / (2.0 * steps[k]))
    values = np.column_stack(cols)
    return SensitivityMatrix(values=values, anchors=anchors, theta=theta, steps=steps)


def orthogonal_cross(kernel, f_sens, kernel_anchors, x, xp, w_anchor=None):
    """Corrected covariance values over (x, xp); returns (values, note).

    ``kernel`` must be the noise-free base kernel and ``kernel_anchors``
    the anchor coordinates expressed in the kernel's input space. A
    numerically singular F' W F falls back to the Moore-Penrose
    pseudo-inverse (exact for F = 0); an ill-conditioned but nonzero one
    is flagged in ``note`` rather than raised, so a sampling run keeps
    going. ``w_anchor`` optionally supplies a precomputed anchor gram.
    """
    f = np.asarray(f_sens.values if isinstance(f_sens, SensitivityMatrix) else f_sens, dtype=float)
    base = gram_values(kernel, x, xp, same=False)
    if not f.any():
        return base, ""
    if w_anchor is None:
        w_anchor = gram_values(kernel, kernel_anchors, kernel_anchors, same=False)
    m = f.T @ w_anchor @ f
    note = ""
    svals = np.linalg.svd(m, compute_uv=False)
    if svals[0] > 0 and svals[-1] / svals[0] < 1.0 / COND_WARN:
        note = (
            f"orthogonality correction ill-conditioned: cond(F'WF) = "
            f"{svals[0] / max(svals[-1], np.finfo(float).tiny):.3e}"
        )
    m_pinv = np.linalg.pinv(m, rcond=PINV_RCOND)
    a = gram_values(kernel, x, kernel_anchors, same=False) @ f
    b = a if xp is x else gram_values(kernel, xp, kernel_anchors, same=False) @ f
    return base - a @ m_pinv @ b.T, note


def orthogonal_gram(kernel, f_sens, kernel_anchors, x, xp=None):
    """GramMatrix of the orthogonality-corrected kernel over (x, xp)."""
    from .kernels import GramMatrix, _coords

    xc = _coords(x)
    xpc = xc if xp is None else _coords(xp)
    values, note = orthogonal_cross(kernel, f_sens, _coords(kernel_anchors), xc, xpc)
    return GramMatrix(values=values, rows=xc, cols=xpc, note=note)


def orthogonal_builder(f_sens, kernel_anchors):
    """Covariance builder for the GP module: corrected smooth part plus
    the untouched noise diagonal for same-record blocks.

    The anchor gram W is memoized per set of kernel hyperparameter
    values, so within one bias fit it is only rebuilt when the optimizer
    actually moves a kernel parameter.
    """
    kernel_anchors = np.asarray(kernel_anchors, dtype=float)
    if kernel_anchors.ndim == 1:
        kernel_anchors = kernel_anchors[:, None]
    memo = {}

    def build(kernel, x, xp, same):
        smooth, noise = split_noise(kernel)
        if smooth is not None:
            key = tuple(h.value for _, h in smooth.hypers())
            if memo.get("key") != key:
                memo["key"] = key
                memo["w"] = gram_values(smooth, kernel_anchors, kernel_anchors, same=False)
            values, _ = orthogonal_cross(smooth, f_sens, kernel_anchors, x, xp, w_anchor=memo["w"])
        else:
            values = np.zeros((x.shape[0], xp.shape[0]))
        if noise is not None:
            values = values + noise.cross(x, xp, same)
        return values

    return build
