"""Prior-conditioned gravity calibration network.

Forward pass, batched over the leading axis::

    gamma, beta = PriorMLP(g_hat)          gamma = 1 + offset
    f_tilde     = gamma * f + beta
    h           = Head(f_tilde)            3 outputs
    delta       = delta_max * tanh(h[:2])  radians
    tau         = sigmoid(h[2])
    g_corr      = normalize(R_y(dy) R_x(dx) g_hat)
    g_img       = normalize(ImgHead(f))    unconditioned features
    g_pred      = normalize(tau * g_img + (1 - tau) * g_corr)

Gradients are derived by hand; ``g_hat`` and ``f`` are inputs, not
parameters, and receive none.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateVector, MalformedRow, MissingFile, ShapeMismatch
from .geom3 import EPS_NORM

DELTA_MAX = math.pi / 4
TAU_BIAS_INIT = -3.0

CKPT_MAGIC = b"GCKP"
CKPT_VERSION = 1
_ACTS = ("tanh", "relu")


@dataclass(frozen=True)
class NetDims:
    C: int = 64
    H_prior: int = 128
    H_head: int = 256
    H_img: int = 128
    prior_act: str = "tanh"
    head_act: str = "relu"

    def __post_init__(self):
        if min(self.C, self.H_prior, self.H_head, self.H_img) <= 0:
            raise ValueError("all network widths must be positive")
        if self.prior_act not in _ACTS or self.head_act not in _ACTS:
            raise ValueError(f"activations must be one of {_ACTS}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        C = self.C
        return {
            "prior_w1": (self.H_prior, 3), "prior_b1": (self.H_prior,),
            "prior_w2": (2 * C, self.H_prior), "prior_b2": (2 * C,),
            "head_w1": (self.H_head, C), "head_b1": (self.H_head,),
            "head_w2": (3, self.H_head), "head_b2": (3,),
            "img_w1": (self.H_img, C), "img_b1": (self.H_img,),
            "img_w2": (3, self.H_img), "img_b2": (3,),
        }


@dataclass
class CalibratorParams:
    """All trainable weights; also used to hold gradients of the same shape."""

    dims: NetDims
    prior_w1: np.ndarray
    prior_b1: np.ndarray
    prior_w2: np.ndarray
    prior_b2: np.ndarray
    head_w1: np.ndarray
    head_b1: np.ndarray
    head_w2: np.ndarray
    head_b2: np.ndarray
    img_w1: np.ndarray
    img_b1: np.ndarray
    img_w2: np.ndarray
    img_b2: np.ndarray

    @staticmethod
    def names() -> list[str]:
        return [f.name for f in fields(CalibratorParams) if f.name != "dims"]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names()}

    def copy(self) -> "CalibratorParams":
        return CalibratorParams(self.dims, **{n: a.copy() for n, a in self.arrays().items()})

    @classmethod
    def zeros_like(cls, other: "CalibratorParams") -> "CalibratorParams":
        return cls(other.dims, **{n: np.zeros_like(a) for n, a in other.arrays().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def validate(self) -> None:
        for name, shape in self.dims.shapes().items():
            a = getattr(self, name)
            if a.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {a.shape}")


GradientSet = CalibratorParams


class ForwardOutput(NamedTuple):
    g_pred: np.ndarray   # (B, 3)
    g_corr: np.ndarray
    g_img: np.ndarray
    tau: np.ndarray      # (B,)
    delta: np.ndarray    # (B, 2) radians, (dx, dy)
    gamma: np.ndarray    # (B, C)
    beta: np.ndarray


class OutputGrads(NamedTuple):
    """Upstream gradients of a scalar loss w.r.t. the forward outputs."""

    g_pred: np.ndarray | None = None
    g_img: np.ndarray | None = None
    tau: np.ndarray | None = None
    delta: np.ndarray | None = None


@dataclass
class ForwardCache:
    f: np.ndarray
    g_hat: np.ndarray
    prior_pre: np.ndarray
    prior_hid: np.ndarray
    f_tilde: np.ndarray
    head_pre: np.ndarray
    head_hid: np.ndarray
    h: np.ndarray
    img_pre: np.ndarray
    img_hid: np.ndarray
    v_img: np.ndarray
    v_corr: np.ndarray
    s: np.ndarray
    out: ForwardOutput


def _act(name, x):
    return np.tanh(x) if name == "tanh" else np.maximum(x, 0.0)


def _act_grad(name, pre, post):
    return 1.0 - post * post if name == "tanh" else (pre > 0.0).astype(float)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_params(dims: NetDims | None = None, seed: int = 0, zero_tau_weights: bool = True,
                zero_delta_weights: bool = True) -> CalibratorParams:
    """Glorot-uniform weights, zero biases, plus deliberate exceptions.

    The PriorMLP output layer starts at zero so the conditioning is the
    identity (gamma = 1, beta = 0), and the gate logit bias starts at -3 so
    the model initially trusts the corrected prior. With
    ``zero_tau_weights`` the gate logit row is also zero, giving
    tau = sigmoid(-3) exactly at init; ``zero_delta_weights`` does the same
    for the residual rotation rows so the correction starts at identity.
    """
    dims = dims or NetDims()
    rng = np.random.default_rng(seed)
    arrs = {}
    for name, shape in dims.shapes().items():
        if len(shape) == 2:
            fan_out, fan_in = shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            arrs[name] = rng.uniform(-lim, lim, shape)
        else:
            arrs[name] = np.zeros(shape)
    arrs["prior_w2"][:] = 0.0
    arrs["prior_b2"][:] = 0.0
    arrs["head_b2"][2] = TAU_BIAS_INIT
    if zero_tau_weights:
        arrs["head_w2"][2] = 0.0
    if zero_delta_weights:
        arrs["head_w2"][:2] = 0.0
    return CalibratorParams(dims, **arrs)


def _check_inputs(params, f, g_hat):
    f = np.atleast_2d(np.asarray(f, dtype=float))
    g_hat = np.atleast_2d(np.asarray(g_hat, dtype=float))
    if f.shape[1] != params.dims.C:
        raise ShapeMismatch(f"feature width {f.shape[1]} != C={params.dims.C}")
    if g_hat.shape[1] != 3 or g_hat.shape[0] != f.shape[0]:
        raise ShapeMismatch("g_hat must be (B, 3) matching the feature batch")
    return f, g_hat


def _prior_mlp(params, g_hat):
    pre = g_hat @ params.prior_w1.T + params.prior_b1
    hid = _act(params.dims.prior_act, pre)
    mod = hid @ params.prior_w2.T + params.prior_b2
    C = params.dims.C
    return pre, hid, 1.0 + mod[:, :C], mod[:, C:]


def film_condition(params: CalibratorParams, f, g_hat) -> np.ndarray:
    """Feature-wise affine modulation of ``f`` by the prior direction."""
    f, g_hat = _check_inputs(params, f, g_hat)
    _, _, gamma, beta = _prior_mlp(params, g_hat)
    return gamma * f + beta


def _normalize_rows(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(n <= EPS_NORM):
        raise DegenerateVector("cannot normalize a zero output vector")
    return v / n, n


def heads_forward(params: CalibratorParams, f_tilde, f):
    """Residual rotation, gate and image-only direction.

    Returns ``(delta, tau, g_img)``; ``delta`` is ``(B, 2)`` in radians.
    """
    f_tilde = np.atleast_2d(f_tilde)
    f = np.atleast_2d(f)
    *_, h = _head(params, f_tilde)
    *_, v_img = _img_head(params, f)
    delta = DELTA_MAX * np.tanh(h[:, :2])
    tau = _sigmoid(h[:, 2])
    g_img, _ = _normalize_rows(v_img)
    return delta, tau, g_img


def _head(params, f_tilde):
    pre = f_tilde @ params.head_w1.T + params.head_b1
    hid = _act(params.dims.head_act, pre)
    return pre, hid, hid @ params.head_w2.T + params.head_b2


def _img_head(params, f):
    pre = f @ params.img_w1.T + params.img_b1
    hid = _act(params.dims.head_act, pre)
    return pre, hid, hid @ params.img_w2.T + params.img_b2


def _rotate_xy(g, dx, dy):
    """Rows of ``R_y(dy) @ R_x(dx) @ g`` plus the two partial derivatives."""
    cx, sx = np.cos(dx), np.sin(dx)
    cy, sy = np.cos(dy), np.sin(dy)
    x, y, z = g[:, 0], g[:, 1], g[:, 2]
    # after R_x
    y1 = cx * y - sx * z
    z1 = sx * y + cx * z
    # after R_y
    out = np.stack([cy * x + sy * z1, y1, -sy * x + cy * z1], axis=1)
    # d/d dx: R_y R_x' g
    dy1 = -sx * y - cx * z
    dz1 = cx * y - sx * z
    d_dx = np.stack([sy * dz1, dy1, cy * dz1], axis=1)
    # d/d dy: R_y' (R_x g)
    d_dy = np.stack([-sy * x + cy * z1, np.zeros_like(x), -cy * x - sy * z1], axis=1)
    return out, d_dx, d_dy


def apply_correction(g_hat, delta) -> np.ndarray:
    """``normalize(R_y(dy) R_x(dx) g_hat)``, rotation about X applied first."""
    g = np.atleast_2d(np.asarray(g_hat, dtype=float))
    d = np.atleast_2d(np.asarray(delta, dtype=float))
    v, _, _ = _rotate_xy(g, d[:, 0], d[:, 1])
    out, _ = _normalize_rows(v)
    return out


def fuse(tau, g_img, g_corr) -> np.ndarray:
    """``normalize(tau * g_img + (1 - tau) * g_corr)``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))[:, None]
    s = tau * np.atleast_2d(g_img) + (1.0 - tau) * np.atleast_2d(g_corr)
    out, _ = _normalize_rows(s)
    return out


def forward(params: CalibratorParams, f, g_hat) -> tuple[ForwardOutput, ForwardCache]:
    f, g_hat = _check_inputs(params, f, g_hat)
    prior_pre, prior_hid, gamma, beta = _prior_mlp(params, g_hat)
    f_tilde = gamma * f + beta

    head_pre, head_hid, h = _head(params, f_tilde)
    delta = DELTA_MAX * np.tanh(h[:, :2])
    tau = _sigmoid(h[:, 2])

    img_pre, img_hid, v_img = _img_head(params, f)
    g_img, _ = _normalize_rows(v_img)

    v_corr, _, _ = _rotate_xy(g_hat, delta[:, 0], delta[:, 1])
    g_corr, _ = _normalize_rows(v_corr)

    s = tau[:, None] * g_img + (1.0 - tau[:, None]) * g_corr
    g_pred, _ = _normalize_rows(s)

    out = ForwardOutput(g_pred, g_corr, g_img, tau, delta, gamma, beta)
    cache = ForwardCache(f, g_hat, prior_pre, prior_hid, f_tilde, head_pre, head_hid, h,
                         img_pre, img_hid, v_img, v_corr, s, out)
    return out, cache


def _normalize_backward(v, u, du):
    """Pull ``du`` back through ``u = v / |v|``: ``(I - u u^T) du / |v|``."""
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return (du - np.sum(u * du, axis=1, keepdims=True) * u) / n


def backward(params: CalibratorParams, cache: ForwardCache, grads: OutputGrads) -> GradientSet:
    """Exact parameter gradients for the upstream output gradients ``grads``."""
    out = cache.out
    B = cache.f.shape[0]
    zeros3 = np.zeros((B, 3))
    d_pred = zeros3 if grads.g_pred is None else np.asarray(grads.g_pred, dtype=float)
    d_img = zeros3 if grads.g_img is None else np.asarray(grads.g_img, dtype=float).copy()
    d_tau = np.zeros(B) if grads.tau is None else np.asarray(grads.tau, dtype=float).copy()
    d_delta = np.zeros((B, 2)) if grads.delta is None else np.asarray(grads.delta, dtype=float).copy()

    # fusion
    d_s = _normalize_backward(cache.s, out.g_pred, d_pred)
    tau = out.tau[:, None]
    d_tau = d_tau + np.sum(d_s * (out.g_img - out.g_corr), axis=1)
    d_img = d_img + tau * d_s
    d_corr = (1.0 - tau) * d_s

    # residual rotation
    d_vcorr = _normalize_backward(cache.v_corr, out.g_corr, d_corr)
    _, d_dx, d_dy = _rotate_xy(cache.g_hat, out.delta[:, 0], out.delta[:, 1])
    d_delta[:, 0] += np.sum(d_vcorr * d_dx, axis=1)
    d_delta[:, 1] += np.sum(d_vcorr * d_dy, axis=1)

    t = np.tanh(cache.h[:, :2])
    d_h = np.empty((B, 3))
    d_h[:, :2] = d_delta * DELTA_MAX * (1.0 - t * t)
    d_h[:, 2] = d_tau * out.tau * (1.0 - out.tau)

    g = CalibratorParams.zeros_like(params)
    act = params.dims.head_act

    # correction/gate head
    g.head_w2 = d_h.T @ cache.head_hid
    g.head_b2 = d_h.sum(axis=0)
    d_hpre = (d_h @ params.head_w2) * _act_grad(act, cache.head_pre, cache.head_hid)
    g.head_w1 = d_hpre.T @ cache.f_tilde
    g.head_b1 = d_hpre.sum(axis=0)
    d_ftilde = d_hpre @ params.head_w1

    # FiLM and PriorMLP
    d_mod = np.concatenate([d_ftilde * cache.f, d_ftilde], axis=1)
    g.prior_w2 = d_mod.T @ cache.prior_hid
    g.prior_b2 = d_mod.sum(axis=0)
    d_ppre = (d_mod @ params.prior_w2) * _act_grad(params.dims.prior_act, cache.prior_pre, cache.prior_hid)
    g.prior_w1 = d_ppre.T @ cache.g_hat
    g.prior_b1 = d_ppre.sum(axis=0)

    # image head
    d_vimg = _normalize_backward(cache.v_img, out.g_img, d_img)
    g.img_w2 = d_vimg.T @ cache.img_hid
    g.img_b2 = d_vimg.sum(axis=0)
    d_ipre = (d_vimg @ params.img_w2) * _act_grad(act, cache.img_pre, cache.img_hid)
    g.img_w1 = d_ipre.T @ cache.f
    g.img_b1 = d_ipre.sum(axis=0)
    return g


def min_relu_margin(params: CalibratorParams, cache: ForwardCache) -> float:
    """Smallest |pre-activation| across ReLU units (distance to a kink)."""
    m = math.inf
    if params.dims.head_act == "relu":
        m = min(m, float(np.abs(cache.head_pre).min()), float(np.abs(cache.img_pre).min()))
    if params.dims.prior_act == "relu":
        m = min(m, float(np.abs(cache.prior_pre).min()))
    return m


# --- checkpoint ------------------------------------------------------------

def save_checkpoint(params: CalibratorParams, path) -> None:
    """Binary layout: b"GCKP", u32 version, u32 C, H_prior, H_head, H_img,
    u32 prior_act, head_act (index into ("tanh", "relu")), then every
    parameter block in declaration order as little-endian float64."""
    d = params.dims
    params.validate()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<7I", CKPT_VERSION, d.C, d.H_prior, d.H_head, d.H_img,
                             _ACTS.index(d.prior_act), _ACTS.index(d.head_act)))
        for a in params.arrays().values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> CalibratorParams:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file: {path}")
    data = path.read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise MalformedRow(path, 0, "bad magic, not a checkpoint")
    version, C, hp, hh, hi, pa, ha = struct.unpack("<7I", data[4:32])
    if version != CKPT_VERSION:
        raise MalformedRow(path, 0, f"unsupported checkpoint version {version}")
    dims = NetDims(C, hp, hh, hi, _ACTS[pa], _ACTS[ha])
    off = 32
    arrs = {}
    for name, shape in dims.shapes().items():
        n = int(np.prod(shape))
        chunk = data[off:off + 8 * n]
        if len(chunk) != 8 * n:
            raise MalformedRow(path, 0, "truncated checkpoint")
        arrs[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(float)
        off += 8 * n
    if off != len(data):
        raise MalformedRow(path, 0, "trailing bytes in checkpoint")
    return CalibratorParams(dims, **arrs)
