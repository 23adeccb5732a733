"""Central finite-difference check of the analytic calibrator gradients.

Each configuration draws random parameters (every block, including the ones
zero-initialized in training), features, priors, targets and gate targets,
then compares ``backward`` against ``(L(p + h) - L(p - h)) / 2h`` element by
element. An element passes when its absolute error is at most ``atol`` or
its relative error at most ``rtol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibnet import CalibratorParams, NetDims, backward, forward, init_params, min_relu_margin
from .losses import LossWeights, loss_and_grads

SMALL_DIMS = NetDims(C=8, H_prior=6, H_head=7, H_img=5)
# a perturbation of h moves a pre-activation by at most ~h * |input|;
# keep every ReLU unit this far from its kink so FD stays on one side
KINK_MARGIN = 1e-3


@dataclass
class GradcheckReport:
    n_configs: int
    n_elements: int
    n_resampled: int
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)
    rtol: float = 1e-4
    atol: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol


def _element_error(analytic: float, numeric: float, atol: float) -> float:
    """Relative error, or 0 when the absolute error is under the floor."""
    err = abs(analytic - numeric)
    if err <= atol:
        return 0.0
    return err / max(abs(analytic), abs(numeric))


def _draw_config(rng, dims: NetDims, batch: int, scale: float):
    p = init_params(dims, seed=int(rng.integers(2**31)), zero_tau_weights=False,
                    zero_delta_weights=False)
    for a in p.arrays().values():
        a[:] = rng.normal(0.0, scale, a.shape)
    f = rng.normal(size=(batch, dims.C))
    g_hat = rng.normal(size=(batch, 3))
    g_hat /= np.linalg.norm(g_hat, axis=1, keepdims=True)
    g_star = rng.normal(size=(batch, 3))
    g_star /= np.linalg.norm(g_star, axis=1, keepdims=True)
    tau_star = rng.uniform(0.0, 1.0, batch)
    return p, f, g_hat, g_star, tau_star


def check_one(params: CalibratorParams, f, g_hat, g_star, tau_star, w: LossWeights,
              step: float = 1e-5, atol: float = 1e-8) -> dict[str, float]:
    """Worst per-element error for every parameter block."""
    def loss(p):
        out, _ = forward(p, f, g_hat)
        return loss_and_grads(out, g_star, tau_star, w)[0].total

    out, cache = forward(params, f, g_hat)
    _, og = loss_and_grads(out, g_star, tau_star, w)
    grads = backward(params, cache, og)
    worst = {}
    for name, a in params.arrays().items():
        ga = getattr(grads, name)
        m = 0.0
        for i in np.ndindex(a.shape):
            old = a[i]
            a[i] = old + step
            lp = loss(params)
            a[i] = old - step
            lm = loss(params)
            a[i] = old
            m = max(m, _element_error(ga[i], (lp - lm) / (2 * step), atol))
        worst[name] = m
    return worst


def run_gradcheck(seed: int = 0, n_configs: int = 100, dims: NetDims = SMALL_DIMS,
                  batch: int = 4, step: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-8,
                  scale: float = 0.5, weights: LossWeights | None = None) -> GradcheckReport:
    w = weights or LossWeights()
    rng = np.random.default_rng(seed)
    per_param = {n: 0.0 for n in CalibratorParams.names()}
    resampled = 0
    n_el = 0
    done = 0
    while done < n_configs:
        p, f, g_hat, g_star, tau_star = _draw_config(rng, dims, batch, scale)
        _, cache = forward(p, f, g_hat)
        if min_relu_margin(p, cache) < KINK_MARGIN:
            resampled += 1
            continue
        for name, e in check_one(p, f, g_hat, g_star, tau_star, w, step, atol).items():
            per_param[name] = max(per_param[name], e)
        n_el += p.flat().size
        done += 1
    worst = max(per_param, key=per_param.get)
    return GradcheckReport(n_configs, n_el, resampled, per_param[worst], worst, per_param,
                           rtol, atol)
