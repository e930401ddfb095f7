"""Statistics-based estimators against brute-force and physical oracles."""

import numpy as np
import pytest

from clcc.baselines import ESTIMATORS, gray_edge, gray_world, shades_of_gray, white_patch
from clcc.color_math import angular_error_degrees
from clcc.scene_synth import synth_dataset


def _mask(sample):
    y0, x0, h, w = sample.checker_region
    m = np.ones(sample.image.shape[:2], dtype=bool)
    m[y0:y0 + h, x0:x0 + w] = False
    return m


class TestGrayWorld:
    def test_mean_neutral_scene(self):
        samples, _ = synth_dataset(5, 5, seed=11, mean_neutral=True)
        for s in samples:
            assert angular_error_degrees(gray_world(s.image, mask=_mask(s)), s.illuminant) < 0.1

    def test_brute_force_mean(self):
        img = np.random.default_rng(0).uniform(0, 1, (7, 9, 3))
        ref = img.reshape(-1, 3).mean(axis=0)
        np.testing.assert_allclose(gray_world(img), ref / np.linalg.norm(ref), rtol=1e-12)

    def test_mask_excludes_pixels(self):
        img = np.ones((4, 4, 3))
        img[0, 0] = [100.0, 0.0, 0.0]
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        np.testing.assert_allclose(gray_world(img, mask=mask), np.ones(3) / np.sqrt(3))

    def test_black_image(self):
        with pytest.raises(ValueError):
            gray_world(np.zeros((3, 3, 3)))


class TestWhitePatch:
    def test_recovers_illuminant_with_white_surface(self):
        samples, _ = synth_dataset(5, 5, seed=12, white_patch=True)
        for s in samples:
            assert angular_error_degrees(white_patch(s.image, mask=_mask(s)), s.illuminant) < 1e-3

    def test_per_channel_max(self):
        img = np.zeros((2, 2, 3))
        img[0, 0] = [0.2, 0.9, 0.1]
        img[1, 1] = [0.8, 0.1, 0.4]
        ref = np.array([0.8, 0.9, 0.4])
        np.testing.assert_allclose(white_patch(img), ref / np.linalg.norm(ref))


class TestShadesOfGray:
    def test_p1_is_gray_world(self):
        img = np.random.default_rng(1).uniform(0, 1, (6, 6, 3))
        np.testing.assert_array_equal(shades_of_gray(img, p=1), gray_world(img))

    def test_brute_force_minkowski(self):
        img = np.random.default_rng(2).uniform(0, 1, (6, 6, 3))
        ref = (img.reshape(-1, 3) ** 6).mean(axis=0) ** (1 / 6)
        np.testing.assert_allclose(shades_of_gray(img, p=6), ref / np.linalg.norm(ref), rtol=1e-10)

    def test_large_p_approaches_white_patch(self):
        img = np.random.default_rng(3).uniform(0, 1, (10, 10, 3))
        assert angular_error_degrees(shades_of_gray(img, p=200), white_patch(img)) < 1.0

    def test_no_overflow_on_bright_input(self):
        img = np.random.default_rng(4).uniform(0, 1, (5, 5, 3)) * 1e60
        assert np.all(np.isfinite(shades_of_gray(img, p=8)))

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            shades_of_gray(np.ones((2, 2, 3)), p=0.5)


class TestGrayEdge:
    def test_brute_force(self):
        img = np.random.default_rng(5).uniform(0, 1, (6, 7, 3))
        mags = []
        for y in range(1, 5):
            for x in range(1, 6):
                gx = (img[y, x + 1] - img[y, x - 1]) / 2
                gy = (img[y + 1, x] - img[y - 1, x]) / 2
                mags.append(np.sqrt(gx**2 + gy**2))
        ref = (np.array(mags) ** 6).mean(axis=0) ** (1 / 6)
        np.testing.assert_allclose(gray_edge(img, p=6), ref / np.linalg.norm(ref), rtol=1e-10)

    def test_scale_invariant(self):
        img = np.random.default_rng(6).uniform(0, 1, (8, 8, 3))
        np.testing.assert_allclose(gray_edge(img), gray_edge(17.0 * img), rtol=1e-12)

    def test_flat_image_has_no_edges(self):
        with pytest.raises(ValueError):
            gray_edge(np.ones((5, 5, 3)))

    def test_edges_of_neutral_mosaic_give_illuminant(self):
        # a mosaic of gray levels under illuminant L has every edge along L
        rng = np.random.default_rng(7)
        levels = np.kron(rng.uniform(0.1, 1, (4, 4)), np.ones((4, 4)))
        l = np.array([0.7, 1.0, 0.4])
        assert angular_error_degrees(gray_edge(levels[..., None] * l), l) < 1e-6


def test_registry_names():
    assert set(ESTIMATORS) == {"gray-world", "white-patch", "shades-of-gray", "gray-edge"}
