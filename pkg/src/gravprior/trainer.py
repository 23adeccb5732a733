"""Adam + cosine-annealing training and a synthetic feature dataset.

The synthetic set stands in for image features: each sample's feature vector
is a fixed random linear embedding of its true gravity plus noise, and its
prior is the true gravity rotated by a drift angle drawn from a mixture.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import geom3
from .calibnet import CalibratorParams, backward, forward
from .errors import EmptyInput, ShapeMismatch
from .losses import LossBreakdown, LossWeights, loss_and_grads, oracle_tau

DEFAULT_DRIFT_MIXTURE = ((0.6, 8.0, 4.0), (0.3, 25.0, 8.0), (0.1, 50.0, 15.0))


@dataclass(frozen=True)
class TrainConfig:
    lr_heads: float = 5e-5
    lr_backbone_slots: float = 2e-6  # kept for parity; no backbone is trained here
    epochs: int = 50
    batch: int = 64
    betas: tuple[float, float] = (0.9, 0.999)
    eps_adam: float = 1e-8
    seed: int = 0
    lr_step: str = "epoch"  # or "iter"
    grad_clip: float | None = None
    eval_batch: int = 4096

    def __post_init__(self):
        if self.lr_heads <= 0 or self.batch <= 0 or self.epochs < 0:
            raise ValueError("lr and batch must be positive, epochs non-negative")
        if self.lr_step not in ("epoch", "iter"):
            raise ValueError("lr_step must be 'epoch' or 'iter'")


@dataclass(frozen=True)
class SynthConfig:
    C: int = 64
    n_train: int = 20000
    n_val: int = 4000
    feature_noise_sigma: float = 0.7
    distractor_dims: int = 16
    drift_mixture: tuple = DEFAULT_DRIFT_MIXTURE
    embed_scale: float = 1.0
    offset_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_train <= 0 or self.n_val <= 0:
            raise ValueError("sample counts must be positive")
        if not 0 <= self.distractor_dims < self.C:
            raise ValueError("distractor_dims must leave at least one informative feature")
        w = sum(m[0] for m in self.drift_mixture)
        if abs(w - 1.0) > 1e-9:
            raise ValueError(f"drift mixture weights sum to {w}, not 1")


@dataclass
class SynthSet:
    """A batch of samples; row ``i`` across all arrays is one sample."""

    f: np.ndarray                 # (N, C)
    g_star: np.ndarray            # (N, 3)
    g_prior: np.ndarray           # (N, 3)
    prior_error_deg: np.ndarray   # (N,)
    nongravity_ratio: np.ndarray  # (N,)

    def __len__(self):
        return self.f.shape[0]

    def subset(self, idx) -> "SynthSet":
        return SynthSet(self.f[idx], self.g_star[idx], self.g_prior[idx],
                        self.prior_error_deg[idx], self.nongravity_ratio[idx])


@dataclass
class AdamState:
    m: CalibratorParams
    v: CalibratorParams
    step: int = 0

    @classmethod
    def zeros(cls, params: CalibratorParams) -> "AdamState":
        return cls(CalibratorParams.zeros_like(params), CalibratorParams.zeros_like(params), 0)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train: LossBreakdown
    val: LossBreakdown
    val_err_pred: float
    val_err_corr: float
    val_err_img: float
    val_err_prior: float
    val_tau_mean: float


def cosine_lr(base_lr: float, t: float, total: float) -> float:
    """Cosine annealing from ``base_lr`` at ``t = 0`` to 0 at ``t = total``."""
    if total <= 0:
        return base_lr
    t = min(max(t, 0.0), total)
    return max(0.0, 0.5 * base_lr * (1.0 + math.cos(math.pi * t / total)))


def adam_step(params: CalibratorParams, grads: CalibratorParams, state: AdamState,
              lr: float, cfg: TrainConfig) -> tuple[CalibratorParams, AdamState]:
    b1, b2 = cfg.betas
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.arrays().items():
        g = getattr(grads, name)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {name}: {g.shape} vs parameter {p.shape}")
        m = b1 * getattr(state.m, name) + (1.0 - b1) * g
        v = b2 * getattr(state.v, name) + (1.0 - b2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)
        new_m[name] = m
        new_v[name] = v
    dims = params.dims
    return (CalibratorParams(dims, **new_p),
            AdamState(CalibratorParams(dims, **new_m), CalibratorParams(dims, **new_v), step))


def clip_global_norm(grads: CalibratorParams, max_norm: float) -> CalibratorParams:
    norm = float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays().values())))
    if norm <= max_norm or norm == 0.0:
        return grads
    s = max_norm / norm
    return CalibratorParams(grads.dims, **{n: a * s for n, a in grads.arrays().items()})


# --- synthetic data ----------------------------------------------------------

def _draw_drift(rng, mixture, n):
    weights = np.array([m[0] for m in mixture], dtype=float)
    comp = rng.choice(len(mixture), size=n, p=weights / weights.sum())
    means = np.array([m[1] for m in mixture], dtype=float)[comp]
    stds = np.array([m[2] for m in mixture], dtype=float)[comp]
    return np.clip(np.abs(means + stds * rng.standard_normal(n)), 0.0, 180.0)


def make_synth(cfg: SynthConfig | None = None) -> tuple[SynthSet, SynthSet]:
    """Train and validation sets drawn from one seeded generator.

    Both splits share the same embedding so features mean the same thing.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    n_info = cfg.C - cfg.distractor_dims
    A = cfg.embed_scale * rng.standard_normal((n_info, 3))
    b = cfg.offset_scale * rng.standard_normal(n_info)

    def split(n):
        g_star = geom3.random_unit_vectors(rng, n)
        f = np.empty((n, cfg.C))
        f[:, :n_info] = g_star @ A.T + b + cfg.feature_noise_sigma * rng.standard_normal((n, n_info))
        f[:, n_info:] = rng.standard_normal((n, cfg.distractor_dims))
        drift = _draw_drift(rng, cfg.drift_mixture, n)
        g_prior = geom3.rotate_about_random_axis(rng, g_star, np.radians(drift))
        err = geom3.angle_deg(g_prior, g_star)
        r = 0.006 * drift + 0.02 * np.abs(rng.standard_normal(n))
        return SynthSet(f, g_star, g_prior, np.atleast_1d(err), r)

    return split(cfg.n_train), split(cfg.n_val)


def write_synth_csv(data: SynthSet, path) -> None:
    C = data.f.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{k}" for k in range(C)] + ["g_star_x", "g_star_y", "g_star_z",
                   "g_prior_x", "g_prior_y", "g_prior_z", "prior_error_deg", "nongravity_ratio"])
        for i in range(len(data)):
            w.writerow([repr(float(x)) for x in data.f[i]]
                       + [repr(float(x)) for x in data.g_star[i]]
                       + [repr(float(x)) for x in data.g_prior[i]]
                       + [repr(float(data.prior_error_deg[i])), repr(float(data.nongravity_ratio[i]))])


def read_synth_csv(path) -> SynthSet:
    """Precomputed-feature dataset (the file-backed feature provider)."""
    from .ingest import read_numeric_csv

    rows = np.array(read_numeric_csv(path), dtype=float)
    if rows.size == 0:
        raise EmptyInput(f"{path}: no samples")
    C = rows.shape[1] - 8
    return SynthSet(rows[:, :C].copy(), rows[:, C:C + 3].copy(), rows[:, C + 3:C + 6].copy(),
                    rows[:, C + 6].copy(), rows[:, C + 7].copy())


# --- training ----------------------------------------------------------------

def evaluate_set(params: CalibratorParams, data: SynthSet, w: LossWeights,
                 chunk: int = 4096) -> tuple[LossBreakdown, dict]:
    """Loss and mean angular errors over a dataset, no parameter updates."""
    n = len(data)
    sums = np.zeros(4)
    errs = {"pred": 0.0, "corr": 0.0, "img": 0.0, "prior": 0.0, "tau": 0.0}
    for lo in range(0, n, chunk):
        part = data.subset(slice(lo, lo + chunk))
        out, _ = forward(params, part.f, part.g_prior)
        tau_star = oracle_tau(part.prior_error_deg)
        bd, _ = loss_and_grads(out, part.g_star, tau_star, w)
        k = len(part)
        sums += k * np.array([bd.main, bd.delta, bd.tau, bd.img])
        errs["pred"] += float(np.sum(geom3.angle_deg(out.g_pred, part.g_star)))
        errs["corr"] += float(np.sum(geom3.angle_deg(out.g_corr, part.g_star)))
        errs["img"] += float(np.sum(geom3.angle_deg(out.g_img, part.g_star)))
        errs["prior"] += float(np.sum(part.prior_error_deg))
        errs["tau"] += float(np.sum(out.tau))
    main, delta, tau, img = sums / n
    return LossBreakdown.combine(main, delta, tau, img, w), {k: v / n for k, v in errs.items()}


def train_loop(
    params: CalibratorParams,
    train: SynthSet,
    val: SynthSet | None = None,
    w: LossWeights | None = None,
    cfg: TrainConfig | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[CalibratorParams, list[EpochRecord]]:
    """Minibatch Adam with a cosine schedule; validates after every epoch."""
    w = w or LossWeights()
    cfg = cfg or TrainConfig()
    if len(train) == 0:
        raise EmptyInput("empty training set")
    val = val if val is not None else train
    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    state = AdamState.zeros(params)
    history: list[EpochRecord] = []

    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = np.zeros(4)
        lr = cosine_lr(cfg.lr_heads, epoch, cfg.epochs)
        for k in range(steps_per_epoch):
            idx = perm[k * cfg.batch:(k + 1) * cfg.batch]
            if cfg.lr_step == "iter":
                lr = cosine_lr(cfg.lr_heads, epoch * steps_per_epoch + k, total_steps)
            f = train.f[idx]
            out, cache = forward(params, f, train.g_prior[idx])
            bd, out_grads = loss_and_grads(out, train.g_star[idx],
                                           oracle_tau(train.prior_error_deg[idx]), w)
            grads = backward(params, cache, out_grads)
            if cfg.grad_clip:
                grads = clip_global_norm(grads, cfg.grad_clip)
            params, state = adam_step(params, grads, state, lr, cfg)
            sums += len(idx) * np.array([bd.main, bd.delta, bd.tau, bd.img])
        tr = LossBreakdown.combine(*(sums / n), w)
        vl, errs = evaluate_set(params, val, w, cfg.eval_batch)
        rec = EpochRecord(epoch, lr, tr, vl, errs["pred"], errs["corr"], errs["img"],
                          errs["prior"], errs["tau"])
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
    return params, history


HISTORY_COLUMNS = [
    "epoch", "lr",
    "train_main", "train_delta", "train_tau", "train_img", "train_total",
    "val_main", "val_delta", "val_tau", "val_img", "val_total",
    "val_err_pred", "val_err_corr", "val_err_img", "val_err_prior", "val_tau_mean",
]


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in history:
            t, v = r.train, r.val
            w.writerow([r.epoch, repr(r.lr),
                        *(repr(x) for x in (t.main, t.delta, t.tau, t.img, t.total)),
                        *(repr(x) for x in (v.main, v.delta, v.tau, v.img, v.total)),
                        *(repr(x) for x in (r.val_err_pred, r.val_err_corr, r.val_err_img,
                                            r.val_err_prior, r.val_tau_mean))])


def read_history_csv(path) -> list[EpochRecord]:
    from .ingest import read_numeric_csv

    out = []
    for r in read_numeric_csv(path, len(HISTORY_COLUMNS)):
        out.append(EpochRecord(int(r[0]), r[1], LossBreakdown(*r[2:7]), LossBreakdown(*r[7:12]),
                               *r[12:17]))
    return out
