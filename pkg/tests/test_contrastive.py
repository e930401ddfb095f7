"""InfoNCE values and gradients, and the four-term contrastive objective."""

import math

import numpy as np
import pytest

from clcc.contrastive import NceConfig, clcc_loss, cosine_similarity, info_nce

KEYS = ("xa", "xa_pos", "ya_pos", "xc_neg", "yc_neg")


def _unit(rng, d, n=None):
    v = rng.normal(size=(n, d) if n else d)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


class TestInfoNceValues:
    def test_one_negative_uniform(self):
        loss, _, _ = info_nce(0.3, [0.3], 0.87)
        assert abs(loss - math.log(2)) < 1e-9

    def test_twelve_negatives_uniform(self):
        loss, _, _ = info_nce(0.5, [0.5] * 12, 0.87)
        assert abs(loss - math.log(13)) < 1e-9

    def test_separated_pair(self):
        # pos = 1, neg = -1, tau = 1: log(1 + e^-2)
        loss, _, _ = info_nce(1.0, [-1.0], 1.0)
        assert abs(loss - math.log1p(math.exp(-2))) < 1e-12
        assert loss == pytest.approx(0.126928, abs=1e-6)

    def test_stable_for_tiny_temperature(self):
        loss, dpos, dnegs = info_nce(1.0, [0.0, -1.0], 1e-4)
        assert math.isfinite(loss) and loss >= 0
        assert np.all(np.isfinite(dnegs)) and math.isfinite(dpos)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            info_nce(0.1, [], 0.87)
        with pytest.raises(ValueError):
            info_nce(0.1, [0.2], 0.0)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            loss, _, _ = info_nce(rng.uniform(-1, 1), rng.uniform(-1, 1, 12), 0.87)
            assert loss >= 0


class TestInfoNceGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        s_pos, s_negs, tau, h = rng.uniform(-1, 1), rng.uniform(-1, 1, 12), 0.87, 1e-6
        _, dpos, dnegs = info_nce(s_pos, s_negs, tau)
        fd = (info_nce(s_pos + h, s_negs, tau)[0] - info_nce(s_pos - h, s_negs, tau)[0]) / (2 * h)
        assert abs(fd - dpos) / max(abs(dpos), 1e-12) < 1e-5
        for k in range(12):
            e = np.zeros(12)
            e[k] = h
            fd = (info_nce(s_pos, s_negs + e, tau)[0] - info_nce(s_pos, s_negs - e, tau)[0]) / (2 * h)
            assert abs(fd - dnegs[k]) / max(abs(dnegs[k]), 1e-12) < 1e-5

    def test_gradients_sum_to_zero(self):
        # softmax probabilities sum to one, so the score gradients cancel
        _, dpos, dnegs = info_nce(0.2, [0.1, -0.4, 0.7], 0.5)
        assert dpos + dnegs.sum() == pytest.approx(0.0, abs=1e-12)


class TestClccLoss:
    def test_degenerate_four_ln2(self):
        z = np.ones(8) / math.sqrt(8)
        loss, _ = clcc_loss(z, z, z, z, z, (), NceConfig(0.87, 1))
        assert abs(loss - 4 * math.log(2)) < 1e-9

    def test_uniform_with_extras_four_ln13(self):
        z = np.ones(4) / 2.0
        extras = np.tile(z, (11, 1))
        loss, grads = clcc_loss(z, z, z, z, z, extras, NceConfig(0.87, 12))
        assert abs(loss - 4 * math.log(13)) < 1e-9
        assert grads["extra"].shape == (11, 4)

    def test_extras_truncated_not_padded(self):
        rng = np.random.default_rng(1)
        z = _unit(rng, 6, 5)
        extras = _unit(rng, 6, 20)
        _, g = clcc_loss(*z, extras, NceConfig(0.87, 12))
        assert g["extra"].shape == (11, 6)
        _, g = clcc_loss(*z, extras[:3], NceConfig(0.87, 12))
        assert g["extra"].shape == (3, 6)

    def test_matches_sum_of_info_nce(self):
        rng = np.random.default_rng(2)
        z = dict(zip(KEYS, _unit(rng, 5, 5)))
        extras = _unit(rng, 5, 4)
        tau = 0.87
        ref = 0.0
        for pos in ("xa_pos", "ya_pos"):
            for neg in ("yc_neg", "xc_neg"):
                s_negs = np.concatenate(([z["xa"] @ z[neg]], extras @ z["xa"]))
                ref += info_nce(z["xa"] @ z[pos], s_negs, tau)[0]
        loss, _ = clcc_loss(*(z[k] for k in KEYS), extras, NceConfig(tau, 12))
        assert loss == pytest.approx(ref, abs=1e-12)

    def test_aligned_views_beat_misaligned(self):
        rng = np.random.default_rng(3)
        a, b = _unit(rng, 16, 2)
        good, _ = clcc_loss(a, a, a, b, b)
        bad, _ = clcc_loss(a, b, b, a, a)
        assert good < bad

    @pytest.mark.parametrize("seed", range(3))
    def test_central_differences_all_inputs(self, seed):
        rng = np.random.default_rng(seed)
        z = [v for v in rng.normal(size=(5, 7))]
        extras = rng.normal(size=(6, 7))
        cfg = NceConfig(0.87, 12)
        _, grads = clcc_loss(*z, extras, cfg)
        h = 1e-6

        def f(zs, ex):
            return clcc_loss(*zs, ex, cfg)[0]

        for i, key in enumerate(KEYS):
            for j in range(7):
                zp = [v.copy() for v in z]
                zm = [v.copy() for v in z]
                zp[i][j] += h
                zm[i][j] -= h
                fd = (f(zp, extras) - f(zm, extras)) / (2 * h)
                assert abs(fd - grads[key][j]) <= 1e-5 * max(1.0, abs(fd))
        for r in range(6):
            for j in range(7):
                ep, em = extras.copy(), extras.copy()
                ep[r, j] += h
                em[r, j] -= h
                fd = (f(z, ep) - f(z, em)) / (2 * h)
                assert abs(fd - grads["extra"][r, j]) <= 1e-5 * max(1.0, abs(fd))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            clcc_loss(np.ones(3), np.ones(3), np.ones(4), np.ones(3), np.ones(3))


def test_cosine_similarity_of_unit_vectors():
    assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.6, 0.8])) == pytest.approx(0.6)


def test_config_validation():
    with pytest.raises(ValueError):
        NceConfig(temperature=0.0)
    with pytest.raises(ValueError):
        NceConfig(n_negatives=0)
