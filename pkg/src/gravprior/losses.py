"""Four-term training objective with oracle gate supervision.

``total = main + l_delta * delta + l_tau * tau + l_img * img``, every term a
batch mean. The gate target is derived from the true prior error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibnet import ForwardOutput, OutputGrads
from .errors import EmptyBatch

ACOS_CLAMP = 1.0 - 1e-7
TAU_CENTER_DEG = 25.0
TAU_SCALE_DEG = 5.0


@dataclass(frozen=True)
class LossWeights:
    lambda_delta: float = 1e-4
    lambda_tau: float = 0.05
    lambda_img: float = 0.2

    def __post_init__(self):
        if min(self.lambda_delta, self.lambda_tau, self.lambda_img) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    main: float
    delta: float
    tau: float
    img: float
    total: float

    @classmethod
    def combine(cls, main, delta, tau, img, w: LossWeights) -> "LossBreakdown":
        total = main + w.lambda_delta * delta + w.lambda_tau * tau + w.lambda_img * img
        return cls(float(main), float(delta), float(tau), float(img), float(total))


@dataclass(frozen=True)
class SampleTerms:
    """Per-sample loss terms, arrays of shape (B,)."""

    main: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    img: np.ndarray


def oracle_tau(prior_error_deg):
    """Gate target ``sigmoid((err - 25) / 5)`` with the error in degrees."""
    x = (np.asarray(prior_error_deg, dtype=float) - TAU_CENTER_DEG) / TAU_SCALE_DEG
    out = 0.5 * (1.0 + np.tanh(0.5 * x))
    return float(out) if out.ndim == 0 else out


def _clamped_acos(c):
    cc = np.clip(c, -ACOS_CLAMP, ACOS_CLAMP)
    inside = (c > -ACOS_CLAMP) & (c < ACOS_CLAMP)
    # d/dc arccos(c) inside the clamp, zero where clamped
    dacos = np.where(inside, -1.0 / np.sqrt(1.0 - cc * cc), 0.0)
    return np.arccos(cc), dacos


def loss_terms(out: ForwardOutput, g_star, tau_star) -> SampleTerms:
    g_star = np.atleast_2d(np.asarray(g_star, dtype=float))
    tau_star = np.atleast_1d(np.asarray(tau_star, dtype=float))
    main, _ = _clamped_acos(np.sum(out.g_pred * g_star, axis=1))
    img_ang, _ = _clamped_acos(np.sum(out.g_img * g_star, axis=1))
    return SampleTerms(
        main=main,
        delta=(1.0 - tau_star) * np.sum(out.delta ** 2, axis=1),
        tau=(out.tau - tau_star) ** 2,
        img=(0.5 + tau_star) * img_ang,
    )


def total_loss(terms: SampleTerms, w: LossWeights | None = None) -> LossBreakdown:
    w = w or LossWeights()
    if terms.main.size == 0:
        raise EmptyBatch("loss over an empty batch")
    return LossBreakdown.combine(terms.main.mean(), terms.delta.mean(),
                                 terms.tau.mean(), terms.img.mean(), w)


def loss_and_grads(out: ForwardOutput, g_star, tau_star,
                   w: LossWeights | None = None) -> tuple[LossBreakdown, OutputGrads]:
    """Batch loss and its gradient w.r.t. the forward outputs."""
    w = w or LossWeights()
    g_star = np.atleast_2d(np.asarray(g_star, dtype=float))
    tau_star = np.atleast_1d(np.asarray(tau_star, dtype=float))
    B = g_star.shape[0]
    if B == 0:
        raise EmptyBatch("loss over an empty batch")
    terms = loss_terms(out, g_star, tau_star)
    _, dmain = _clamped_acos(np.sum(out.g_pred * g_star, axis=1))
    _, dimg = _clamped_acos(np.sum(out.g_img * g_star, axis=1))
    grads = OutputGrads(
        g_pred=(dmain / B)[:, None] * g_star,
        g_img=(w.lambda_img * (0.5 + tau_star) * dimg / B)[:, None] * g_star,
        tau=w.lambda_tau * 2.0 * (out.tau - tau_star) / B,
        delta=(w.lambda_delta * 2.0 * (1.0 - tau_star) / B)[:, None] * out.delta,
    )
    return total_loss(terms, w), grads
