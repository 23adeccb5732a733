import math

import numpy as np
import pytest

from gravprior import geom3
from gravprior.calibnet import NetDims, forward, init_params
from gravprior.errors import EmptyInput, ShapeMismatch
from gravprior.losses import LossWeights
from gravprior.trainer import (
    DEFAULT_DRIFT_MIXTURE,
    AdamState,
    SynthConfig,
    TrainConfig,
    adam_step,
    clip_global_norm,
    cosine_lr,
    evaluate_set,
    make_synth,
    read_history_csv,
    read_synth_csv,
    train_loop,
    write_history_csv,
    write_synth_csv,
)

DIMS = NetDims(C=16, H_prior=16, H_head=32, H_img=16)


def small_synth(**kw):
    base = dict(C=16, n_train=1500, n_val=500, distractor_dims=4, seed=1)
    base.update(kw)
    return make_synth(SynthConfig(**base))


def test_cosine_lr_examples():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5, abs=1e-15)
    assert cosine_lr(1.0, 10, 10) == 0.0
    assert cosine_lr(2.0, 3, 0) == 2.0


def test_cosine_lr_monotone_and_bounded():
    vals = [cosine_lr(5e-5, t, 50) for t in range(51)]
    assert all(0 <= v <= 5e-5 for v in vals)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_adam_zero_gradient_leaves_params():
    p = init_params(DIMS, seed=0)
    state = AdamState.zeros(p)
    q, state = adam_step(p, type(p).zeros_like(p), state, 1e-3, TrainConfig())
    assert state.step == 1
    for a, b in zip(p.arrays().values(), q.arrays().values()):
        assert np.array_equal(a, b)


def test_adam_first_step_moves_by_lr():
    p = init_params(DIMS, seed=0)
    g = type(p).zeros_like(p)
    g.head_b1[:] = 3.0
    g.img_b2[:] = -0.01
    q, _ = adam_step(p, g, AdamState.zeros(p), 1e-3, TrainConfig())
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(q.head_b1 - p.head_b1, -1e-3, rtol=1e-6)
    np.testing.assert_allclose(q.img_b2 - p.img_b2, 1e-3, rtol=1e-5)


def test_adam_shape_check():
    p = init_params(DIMS)
    g = type(p).zeros_like(p)
    g.head_b1 = np.zeros(1)
    with pytest.raises(ShapeMismatch):
        adam_step(p, g, AdamState.zeros(p), 1e-3, TrainConfig())


def test_clip_global_norm():
    p = init_params(DIMS)
    g = type(p).zeros_like(p)
    g.head_b2[:] = [3.0, 4.0, 0.0]
    c = clip_global_norm(g, 1.0)
    np.testing.assert_allclose(c.head_b2, [0.6, 0.8, 0.0])
    assert clip_global_norm(g, 10.0) is g


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_step="batch")
    with pytest.raises(ValueError):
        SynthConfig(drift_mixture=((0.5, 1.0, 1.0),))
    with pytest.raises(ValueError):
        SynthConfig(C=8, distractor_dims=8)


def test_synth_is_deterministic_and_shaped():
    a, va = small_synth()
    b, _ = small_synth()
    assert a.f.tobytes() == b.f.tobytes() and a.g_prior.tobytes() == b.g_prior.tobytes()
    assert a.f.shape == (1500, 16) and len(va) == 500
    np.testing.assert_allclose(np.linalg.norm(a.g_star, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(a.prior_error_deg, geom3.angle_deg(a.g_prior, a.g_star))


@pytest.mark.parametrize("drift", [0.0, 30.0])
def test_synth_fixed_drift(drift):
    tr, _ = small_synth(drift_mixture=((1.0, drift, 0.0),))
    np.testing.assert_allclose(tr.prior_error_deg, drift, atol=1e-6)


def test_synth_default_drift_mean():
    tr, _ = make_synth(SynthConfig(C=8, n_train=20000, n_val=10, distractor_dims=0))
    # Monte Carlo oracle of the folded, clipped mixture
    rng = np.random.default_rng(123)
    w = np.array([m[0] for m in DEFAULT_DRIFT_MIXTURE])
    comp = rng.choice(3, size=400_000, p=w)
    mu = np.array([m[1] for m in DEFAULT_DRIFT_MIXTURE])[comp]
    sd = np.array([m[2] for m in DEFAULT_DRIFT_MIXTURE])[comp]
    oracle = np.clip(np.abs(mu + sd * rng.standard_normal(comp.size)), 0, 180).mean()
    assert tr.prior_error_deg.mean() == pytest.approx(oracle, abs=1.0)


def test_synth_csv_round_trip(tmp_path):
    tr, _ = small_synth(n_train=20, n_val=5)
    write_synth_csv(tr, tmp_path / "s.csv")
    back = read_synth_csv(tmp_path / "s.csv")
    for name in ("f", "g_star", "g_prior", "prior_error_deg", "nongravity_ratio"):
        assert getattr(back, name).tobytes() == getattr(tr, name).tobytes()
    (tmp_path / "e.csv").write_text("f0,g\n")
    with pytest.raises(EmptyInput):
        read_synth_csv(tmp_path / "e.csv")


def test_zero_epochs_returns_params_unchanged():
    tr, va = small_synth()
    p = init_params(DIMS)
    q, hist = train_loop(p, tr, va, cfg=TrainConfig(epochs=0))
    assert hist == [] and q is p
    with pytest.raises(EmptyInput):
        train_loop(p, tr.subset(slice(0, 0)), va)


def test_training_is_deterministic():
    tr, va = small_synth(n_train=300, n_val=100)
    cfg = TrainConfig(epochs=2, batch=32, lr_heads=1e-3)
    a, ha = train_loop(init_params(DIMS), tr, va, cfg=cfg)
    b, hb = train_loop(init_params(DIMS), tr, va, cfg=cfg)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert ha == hb


def test_loss_decreases_on_noiseless_data():
    tr, va = small_synth(feature_noise_sigma=0.0)
    p = init_params(DIMS, seed=2)
    before, _ = evaluate_set(p, va, LossWeights())
    _, hist = train_loop(p, tr, va, cfg=TrainConfig(epochs=8, batch=32, lr_heads=2e-3))
    assert hist[-1].val.total < 0.8 * before.total
    assert hist[-1].val_err_img < hist[0].val_err_img


def test_gate_learns_to_open_for_large_prior_errors():
    tr, va = small_synth(n_train=4000, feature_noise_sigma=0.2)
    p, _ = train_loop(init_params(DIMS, seed=3), tr, va,
                      cfg=TrainConfig(epochs=10, batch=32, lr_heads=2e-3))
    out, _ = forward(p, va.f, va.g_prior)
    hi = out.tau[va.prior_error_deg >= 45].mean()
    lo = out.tau[va.prior_error_deg <= 5].mean()
    assert hi > lo + 0.1


def test_history_identity_and_round_trip(tmp_path):
    tr, va = small_synth(n_train=300, n_val=100)
    w = LossWeights()
    seen = []
    _, hist = train_loop(init_params(DIMS), tr, va, w, TrainConfig(epochs=3, batch=50),
                         on_epoch=seen.append)
    assert seen == hist
    for r in hist:
        for b in (r.train, r.val):
            expect = b.main + w.lambda_delta * b.delta + w.lambda_tau * b.tau + w.lambda_img * b.img
            assert b.total == pytest.approx(expect, abs=1e-12)
    assert [r.lr for r in hist] == [cosine_lr(5e-5, e, 3) for e in range(3)]
    write_history_csv(hist, tmp_path / "h.csv")
    assert read_history_csv(tmp_path / "h.csv") == hist


def test_per_iteration_schedule_reaches_near_zero():
    tr, va = small_synth(n_train=200, n_val=50)
    _, hist = train_loop(init_params(DIMS), tr, va,
                         cfg=TrainConfig(epochs=2, batch=50, lr_step="iter"))
    # 8 steps in total; the last one runs at t = 7
    assert hist[-1].lr == pytest.approx(cosine_lr(5e-5, 7, 8))
    assert hist[-1].lr < 0.05 * 5e-5


def test_gradient_clipping_runs():
    tr, va = small_synth(n_train=200, n_val=50)
    p, hist = train_loop(init_params(DIMS), tr, va,
                         cfg=TrainConfig(epochs=1, batch=50, grad_clip=1e-3))
    assert math.isfinite(hist[0].val.total)
