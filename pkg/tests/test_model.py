"""Network forward/backward, the angular loss and the Adam update."""

import numpy as np
import pytest

from clcc.model import (
    AdamState,
    ModelConfig,
    StaleCache,
    adam_step,
    backward,
    forward,
    illuminant_loss,
    init_params,
    predict,
    weight_penalty,
)
from clcc.scene_synth import synth_dataset
from clcc.training import TrainConfig, batch_objective, make_contrastive_batch, network_input

SMALL = dict(channels=(4, 4, 8, 8), proj_dims=(8, 8, 8), crop=16, dropout=0.5, dtype="float64")


class TestIlluminantLoss:
    def test_reference_value(self):
        loss, _ = illuminant_loss(np.array([1.0, 1.0, 1.0]), np.array([1.0, 1.0, 2.0]))
        assert loss == pytest.approx(0.339837, abs=1e-6)

    def test_zero_at_match_with_zero_gradient(self):
        loss, grad = illuminant_loss(np.array([0.2, 0.5, 0.3]), np.array([0.4, 1.0, 0.6]))
        assert loss == pytest.approx(0.0, abs=1e-7)
        assert np.array_equal(grad, np.zeros(3))

    def test_rowwise(self):
        est = np.array([[1.0, 0, 0], [1, 1, 1]])
        gt = np.array([[0.0, 1, 0], [1, 1, 2]])
        loss, grad = illuminant_loss(est, gt)
        np.testing.assert_allclose(loss, [np.pi / 2, 0.339837], atol=1e-6)
        assert grad.shape == (2, 3)

    @pytest.mark.parametrize("seed", range(4))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        est, gt = rng.uniform(0.1, 1, 3), rng.uniform(0.1, 1, 3)
        _, grad = illuminant_loss(est, gt)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (illuminant_loss(est + e, gt)[0] - illuminant_loss(est - e, gt)[0]) / (2 * h)
            assert abs(fd - grad[k]) <= 1e-5 * max(1.0, abs(fd))

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            illuminant_loss(np.zeros(3), np.ones(3))


class TestForward:
    def test_shapes_and_unit_outputs(self):
        params = init_params(ModelConfig(**{**SMALL, "dtype": "float32"}), seed=0)
        x = np.random.default_rng(0).uniform(0, 1, (5, 16, 16, 3))
        r = forward(params, x)
        assert r.features.shape == (5, 8)
        assert r.illuminant.shape == (5, 3) and r.projection.shape == (5, 8)
        np.testing.assert_allclose(np.linalg.norm(r.illuminant, axis=1), 1, rtol=1e-5)
        np.testing.assert_allclose(np.linalg.norm(r.projection, axis=1), 1, rtol=1e-5)
        assert np.all(r.illuminant > 0)

    def test_head_selection(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        x = np.random.default_rng(1).uniform(0, 1, (4, 16, 16, 3))
        r = forward(params, x, illum_idx=[0, 1], proj_idx=[])
        assert r.illuminant.shape == (2, 3) and r.projection is None

    def test_eval_mode_is_deterministic(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        x = np.random.default_rng(2).uniform(0, 1, (3, 16, 16, 3))
        a = forward(params, x).illuminant
        b = forward(params, x).illuminant
        assert np.array_equal(a, b)

    def test_dropout_only_in_train_mode(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        x = np.random.default_rng(3).uniform(0, 1, (3, 16, 16, 3))
        train = forward(params, x, train_mode=True, rng=np.random.default_rng(0)).illuminant
        evals = forward(params, x).illuminant
        assert not np.allclose(train, evals)

    def test_wrong_size_rejected(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        with pytest.raises(ValueError):
            forward(params, np.zeros((1, 32, 32, 3)))

    def test_predict_matches_forward(self):
        params = init_params(ModelConfig(**SMALL), seed=4)
        x = np.random.default_rng(4).uniform(0, 1, (7, 16, 16, 3))
        np.testing.assert_allclose(predict(params, x, batch_size=3), forward(params, x).illuminant)

    def test_conv_matches_direct_convolution(self):
        # first-layer pre-activations against an explicit loop (stride 2, pad 1)
        cfg = ModelConfig(**SMALL)
        params = init_params(cfg, seed=5)
        x = np.random.default_rng(5).uniform(0, 1, (1, 16, 16, 3))
        r = forward(params, x)
        pre = r.cache["layers"][0][3].reshape(8, 8, 4)
        w = params["conv0_w"].reshape(3, 3, 3, 4)
        xp = np.pad(x[0], ((1, 1), (1, 1), (0, 0)))
        for oy in range(8):
            for ox in range(8):
                patch = xp[2 * oy:2 * oy + 3, 2 * ox:2 * ox + 3]
                ref = np.einsum("ijc,ijco->o", patch, w) + params["conv0_b"]
                np.testing.assert_allclose(pre[oy, ox], ref, atol=1e-12)


def _jitter_biases(params, seed):
    # zero biases put masked (all-zero) pixels exactly on the ReLU kink, where
    # central differences are meaningless; move them off it
    rng = np.random.default_rng(seed)
    for k, v in params.tensors.items():
        if k.endswith("_b"):
            v += rng.normal(0, 0.05, v.shape)
    return params


def _fd_check(params, loss_fn, grads, tol=1e-3, h=1e-6):
    worst = 0.0
    for name, t in params.tensors.items():
        flat = t.reshape(-1)
        g = grads[name].reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = loss_fn()
            flat[k] = old - h
            fm = loss_fn()
            flat[k] = old
            fd = (fp - fm) / (2 * h)
            err = abs(fd - g[k]) / max(abs(fd), abs(g[k]), 1e-6)
            worst = max(worst, err)
            assert err < tol, f"{name}[{k}]: analytic {g[k]} vs numeric {fd}"
    return worst


@pytest.fixture(scope="module")
def micro_batch():
    samples, _ = synth_dataset(4, 4, seed=21, grid=(4, 4), patch_px=4)
    return samples


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_illuminant_path_every_parameter(self, micro_batch, seed):
        params = _jitter_biases(init_params(ModelConfig(**SMALL), seed=seed), seed)
        x = np.stack([network_input(s, 16) for s in micro_batch[:2]]).astype(np.float64)
        gt = np.stack([s.illuminant / np.linalg.norm(s.illuminant) for s in micro_batch[:2]])
        mask = (np.random.default_rng(seed).random((2, 8)) >= 0.5) * 2.0

        def loss():
            r = forward(params, x, train_mode=True, dropout_mask=mask, proj_idx=[])
            return float(np.mean(illuminant_loss(r.illuminant, gt)[0])) + weight_penalty(params, 1e-3)

        r = forward(params, x, train_mode=True, dropout_mask=mask, proj_idx=[])
        d = illuminant_loss(r.illuminant, gt)[1] / 2
        grads = backward(params, r.cache, d_illum=d, weight_decay=1e-3)
        np.testing.assert_allclose(grads["proj0_w"], 1e-3 * params["proj0_w"], rtol=1e-15)
        _fd_check(params, loss, grads)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_full_objective_every_parameter(self, micro_batch, seed):
        cfg = TrainConfig(channels=(4, 4, 8, 8), proj_width=8, crop=16, seed=seed, n_negatives=4)
        params = _jitter_biases(init_params(cfg.model_config("float64"), seed=seed), seed)
        inputs = np.stack([network_input(s, 16) for s in micro_batch]).astype(np.float64)
        gts = np.stack([s.illuminant / np.linalg.norm(s.illuminant) for s in micro_batch])
        rng = np.random.default_rng(seed)
        batch = np.array([0, 1])
        cb = make_contrastive_batch(micro_batch, inputs, batch, np.arange(4), "clcc_full", cfg, rng)
        cb.views = cb.views.astype(np.float64)
        mask = (rng.random((2, 8)) >= 0.5) * 2.0

        def loss():
            return batch_objective(params, inputs[batch], gts[batch], cb, 0.7, 1.3, cfg,
                                   dropout_mask=mask)[0]

        _, grads, _ = batch_objective(params, inputs[batch], gts[batch], cb, 0.7, 1.3, cfg,
                                      dropout_mask=mask)
        _fd_check(params, loss, grads)

    def test_stale_cache(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        r = forward(params, np.ones((1, 16, 16, 3)))
        grads = backward(params, r.cache, d_illum=np.ones((1, 3)))
        adam_step(params, grads, AdamState.zeros_like(params))
        with pytest.raises(StaleCache):
            backward(params, r.cache, d_illum=np.ones((1, 3)))


class TestAdam:
    def test_first_step_moves_lr_per_coordinate(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        before = params.copy()
        grads = {k: np.full_like(v, 0.37) for k, v in params.tensors.items()}
        grads["conv0_b"][:] = -2.0
        adam_step(params, grads, AdamState.zeros_like(params), lr=1e-3)
        # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for k in params.names():
            expected = before[k] - 1e-3 * grads[k] / (np.abs(grads[k]) + 1e-8)
            np.testing.assert_allclose(params[k], expected, rtol=0, atol=1e-15)

    def test_zero_gradient_leaves_parameter(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        before = params.copy()
        grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        adam_step(params, grads, AdamState.zeros_like(params))
        for k in params.names():
            assert np.array_equal(params[k], before[k])

    def test_second_step_by_hand(self):
        params = init_params(ModelConfig(**SMALL), seed=0)
        p0 = params["illum_b"].copy()
        state = AdamState.zeros_like(params)
        g1 = {k: np.full_like(v, 1.0) for k, v in params.tensors.items()}
        g2 = {k: np.full_like(v, 3.0) for k, v in params.tensors.items()}
        adam_step(params, g1, state, lr=0.1)
        adam_step(params, g2, state, lr=0.1)
        m = 0.9 * 0.1 * 1 + 0.1 * 3
        v = 0.999 * 0.001 * 1 + 0.001 * 9
        step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        step1 = 0.1 * 1 / (1 + 1e-8)
        np.testing.assert_allclose(params["illum_b"], p0 - step1 - step2, rtol=1e-12)
        assert state.t == 2 and params.version == 2


def test_weight_penalty_only_on_weights():
    params = init_params(ModelConfig(**SMALL), seed=0)
    ref = 0.5 * 0.01 * sum(np.sum(v**2) for k, v in params.tensors.items() if k.endswith("_w"))
    assert weight_penalty(params, 0.01) == pytest.approx(ref, rel=1e-12)
