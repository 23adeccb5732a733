import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gravprior import geom3
from gravprior.calibnet import (
    DELTA_MAX,
    TAU_BIAS_INIT,
    CalibratorParams,
    NetDims,
    OutputGrads,
    apply_correction,
    backward,
    film_condition,
    forward,
    fuse,
    heads_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from gravprior.errors import DegenerateVector, MalformedRow, MissingFile, ShapeMismatch
from gravprior.gradcheck import SMALL_DIMS, run_gradcheck
from gravprior.losses import LossWeights, loss_and_grads

SMALL = NetDims(C=6, H_prior=5, H_head=4, H_img=3)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def randomized(dims=SMALL, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    p = init_params(dims, seed=seed)
    for a in p.arrays().values():
        a[:] = rng.normal(0, scale, a.shape)
    return p


def batch(rng, n, C):
    return rng.normal(size=(n, C)), geom3.random_unit_vectors(rng, n)


def test_film_is_identity_at_init():
    p = init_params(NetDims(), seed=3)
    f, g = batch(np.random.default_rng(0), 16, 64)
    assert np.array_equal(film_condition(p, f, g), f)


def test_gate_starts_at_minus_three_logit():
    for seed in range(5):
        p = init_params(NetDims(), seed=seed)
        f, g = batch(np.random.default_rng(seed), 8, 64)
        out, _ = forward(p, f, g)
        np.testing.assert_allclose(out.tau, sigmoid(TAU_BIAS_INIT), atol=1e-12)
        assert np.all(out.delta == 0.0)
        np.testing.assert_allclose(out.g_corr, g, atol=1e-15)


def test_forced_gamma_doubles_features():
    p = init_params(SMALL)
    p.prior_b2[:SMALL.C] = 1.0  # gamma = 1 + 1
    f, g = batch(np.random.default_rng(1), 4, SMALL.C)
    np.testing.assert_array_equal(film_condition(p, f, g), 2 * f)


def test_film_against_scalar_loop():
    p = randomized(seed=2)
    f, g = batch(np.random.default_rng(2), 5, SMALL.C)
    got = film_condition(p, f, g)
    C = SMALL.C
    for b in range(5):
        hid = [math.tanh(sum(p.prior_w1[j, k] * g[b, k] for k in range(3)) + p.prior_b1[j])
               for j in range(SMALL.H_prior)]
        for c in range(C):
            gamma = 1 + sum(p.prior_w2[c, j] * hid[j] for j in range(SMALL.H_prior)) + p.prior_b2[c]
            beta = sum(p.prior_w2[C + c, j] * hid[j] for j in range(SMALL.H_prior)) + p.prior_b2[C + c]
            assert abs(got[b, c] - (gamma * f[b, c] + beta)) < 1e-12


def test_heads_read_the_bias_when_weights_are_zero():
    p = init_params(SMALL)
    p.head_w2[:] = 0.0
    p.head_b2[:] = [0.5, -1.0, 2.0]
    f, _ = batch(np.random.default_rng(3), 2, SMALL.C)
    delta, tau, g_img = heads_forward(p, f, f)
    np.testing.assert_allclose(delta, [[DELTA_MAX * math.tanh(0.5), DELTA_MAX * math.tanh(-1.0)]] * 2,
                               atol=1e-15)
    np.testing.assert_allclose(tau, sigmoid(2.0), atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(g_img, axis=1), 1.0, atol=1e-15)


def test_apply_correction_examples():
    s = math.sqrt(0.5)
    np.testing.assert_allclose(apply_correction([0, 0, 1], [math.pi / 4, 0]), [[0, -s, s]], atol=1e-15)
    np.testing.assert_allclose(apply_correction([0, 0, 1], [0, 0]), [[0, 0, 1]], atol=0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 1000))
def test_apply_correction_matches_matrix_composition(dx, dy, seed):
    g = geom3.random_unit_vectors(np.random.default_rng(seed), 1)
    expect = geom3.euler_rot("Y", dy) @ geom3.euler_rot("X", dx) @ g[0]
    np.testing.assert_allclose(apply_correction(g, [dx, dy])[0], expect, atol=1e-12)


def test_fuse_examples():
    a, b = np.array([[1.0, 0, 0]]), np.array([[0.0, 1, 0]])
    np.testing.assert_array_equal(fuse(0.0, a, b), b)
    np.testing.assert_array_equal(fuse(1.0, a, b), a)
    s = math.sqrt(0.5)
    np.testing.assert_allclose(fuse(0.5, a, b), [[s, s, 0]], atol=1e-15)
    with pytest.raises(DegenerateVector):
        fuse(0.5, a, -a)


def test_saturated_gate_returns_image_direction():
    p = randomized(seed=4)
    p.head_w2[2] = 0.0
    p.head_b2[2] = 50.0
    f, g = batch(np.random.default_rng(4), 6, SMALL.C)
    out, _ = forward(p, f, g)
    np.testing.assert_array_equal(out.tau, 1.0)
    np.testing.assert_allclose(out.g_pred, out.g_img, atol=1e-15)


def test_forward_is_deterministic():
    p = init_params(NetDims(), seed=5, zero_tau_weights=False, zero_delta_weights=False)
    f, g = batch(np.random.default_rng(5), 32, 64)
    a, _ = forward(p, f, g)
    b, _ = forward(p, f, g)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_shape_checks():
    p = init_params(SMALL)
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((2, SMALL.C + 1)), np.zeros((2, 3)) + [0, 0, 1])
    with pytest.raises(ShapeMismatch):
        forward(p, np.zeros((2, SMALL.C)), np.array([[0, 0, 1.0]]))
    bad = p.copy()
    bad.head_w1 = np.zeros((1, 1))
    with pytest.raises(ShapeMismatch):
        bad.validate()
    with pytest.raises(ValueError):
        NetDims(C=0)


@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_output_invariants(seed, scale):
    p = randomized(seed=seed, scale=scale)
    f, g = batch(np.random.default_rng(seed), 8, SMALL.C)
    f *= scale
    out, _ = forward(p, f, g)
    assert np.all(np.abs(out.delta) <= DELTA_MAX)
    assert np.all((out.tau >= 0) & (out.tau <= 1))
    for v in (out.g_pred, out.g_corr, out.g_img):
        np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)


def _all_zero(grads: CalibratorParams, tol=0.0):
    return all(np.abs(a).max() <= tol for a in grads.arrays().values())


def test_zero_loss_gives_zero_gradient():
    p = init_params(SMALL_DIMS, seed=6)
    f, g = batch(np.random.default_rng(6), 5, SMALL_DIMS.C)
    out, cache = forward(p, f, g)
    # targets equal to the outputs; the image term is switched off since g_img differs
    _, og = loss_and_grads(out, out.g_pred, out.tau, LossWeights(lambda_img=0.0))
    assert _all_zero(backward(p, cache, og))


def test_unit_norm_output_has_no_radial_gradient():
    p = randomized(seed=7)
    f, g = batch(np.random.default_rng(7), 5, SMALL.C)
    out, cache = forward(p, f, g)
    # d|g_pred|/d g_pred = g_pred, which the normalization projects away
    grads = backward(p, cache, OutputGrads(g_pred=out.g_pred, g_img=out.g_img))
    assert _all_zero(grads, 1e-12)


def test_backward_is_linear_in_upstream():
    p = randomized(seed=8)
    f, g = batch(np.random.default_rng(8), 4, SMALL.C)
    out, cache = forward(p, f, g)
    rng = np.random.default_rng(9)
    og = OutputGrads(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=4),
                     rng.normal(size=(4, 2)))
    one = backward(p, cache, og)
    two = backward(p, cache, OutputGrads(*(2 * x for x in og)))
    for name in one.names():
        np.testing.assert_allclose(getattr(two, name), 2 * getattr(one, name), atol=1e-12)


@pytest.mark.parametrize("weights", [
    LossWeights(),
    LossWeights(lambda_delta=1.0, lambda_tau=0.0, lambda_img=0.0),
    LossWeights(lambda_delta=0.0, lambda_tau=1.0, lambda_img=0.0),
    LossWeights(lambda_delta=0.0, lambda_tau=0.0, lambda_img=1.0),
])
def test_gradients_match_finite_differences(weights):
    rep = run_gradcheck(seed=11, n_configs=5, weights=weights)
    assert rep.passed, rep.per_param


@pytest.mark.parametrize("acts", [("tanh", "tanh"), ("relu", "relu")])
def test_gradients_with_other_activations(acts):
    dims = NetDims(C=8, H_prior=6, H_head=7, H_img=5, prior_act=acts[0], head_act=acts[1])
    assert run_gradcheck(seed=12, n_configs=3, dims=dims).passed


def test_gradcheck_detects_a_wrong_gradient(monkeypatch):
    import gravprior.gradcheck as gc

    real = gc.backward

    def broken(params, cache, grads):
        g = real(params, cache, grads)
        g.head_b1 = g.head_b1 * 1.01
        return g

    monkeypatch.setattr(gc, "backward", broken)
    rep = gc.run_gradcheck(seed=0, n_configs=1, dims=SMALL_DIMS)
    assert not rep.passed and rep.worst_param == "head_b1"


def test_checkpoint_round_trip(tmp_path):
    p = init_params(NetDims(C=16, H_prior=8, H_head=12, H_img=4, prior_act="relu"), seed=13,
                    zero_tau_weights=False)
    save_checkpoint(p, tmp_path / "m.gckp")
    q = load_checkpoint(tmp_path / "m.gckp")
    assert q.dims == p.dims
    f, g = batch(np.random.default_rng(13), 10, 16)
    a, _ = forward(p, f, g)
    b, _ = forward(q, f, g)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.gckp"
    with pytest.raises(MissingFile):
        load_checkpoint(path)
    save_checkpoint(init_params(SMALL), path)
    raw = path.read_bytes()
    for corrupt in (b"XXXX" + raw[4:], raw[:-8], raw + b"\0"):
        path.write_bytes(corrupt)
        with pytest.raises(MalformedRow):
            load_checkpoint(path)
