"""Statistics-based illuminant estimators.

All estimators take an HxWx3 linear image and an optional HxW boolean
``mask`` of pixels to use (e.g. to exclude a color checker), and return a
unit-norm RGB illuminant direction.
"""

from __future__ import annotations

import numpy as np


def _pixels(img, mask):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] * img.shape[1] == 0:
        raise ValueError("expected a nonempty HxWx3 image")
    if mask is None:
        return img.reshape(-1, 3)
    return img[np.asarray(mask, dtype=bool)]


def _unit(v, what):
    n = np.linalg.norm(v)
    if not n > 0 or not np.isfinite(n):
        raise ValueError(f"{what}: image carries no usable signal")
    return v / n


def gray_world(img, mask=None) -> np.ndarray:
    return _unit(_pixels(img, mask).mean(axis=0), "gray_world")


def white_patch(img, mask=None) -> np.ndarray:
    return _unit(_pixels(img, mask).max(axis=0), "white_patch")


def shades_of_gray(img, p: float = 6.0, mask=None) -> np.ndarray:
    """Per-channel Minkowski mean ``mean(I_c^p)^(1/p)``."""
    if p < 1:
        raise ValueError("Minkowski norm needs p >= 1")
    px = _pixels(img, mask)
    if p == 1:
        return gray_world(img, mask)
    peak = px.max()
    if not peak > 0:
        raise ValueError("shades_of_gray: image carries no usable signal")
    # rescale first so large p cannot overflow; direction is scale-invariant
    return _unit(np.mean((px / peak) ** p, axis=0) ** (1.0 / p), "shades_of_gray")


def gray_edge(img, p: float = 6.0, order: int = 1, mask=None) -> np.ndarray:
    """First-order gray edge: Minkowski mean of per-channel gradient magnitudes.

    Gradients are central differences on interior pixels whose whole 3x3
    stencil is inside ``mask``.  No pre-smoothing.
    """
    if order != 1:
        raise ValueError("only first-order gray edge is supported")
    if p < 1:
        raise ValueError("Minkowski norm needs p >= 1")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("gray_edge needs an image of at least 3x3 pixels")
    gx = 0.5 * (img[1:-1, 2:] - img[1:-1, :-2])
    gy = 0.5 * (img[2:, 1:-1] - img[:-2, 1:-1])
    mag = np.sqrt(gx**2 + gy**2)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        ok = (m[1:-1, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1])
        mag = mag[ok]
    mag = mag.reshape(-1, 3)
    peak = mag.max() if mag.size else 0.0
    if not peak > 0:
        raise ValueError("gray_edge: image has no edges")
    return _unit(np.mean((mag / peak) ** p, axis=0) ** (1.0 / p), "gray_edge")


ESTIMATORS = {
    "gray-world": gray_world,
    "white-patch": white_patch,
    "shades-of-gray": shades_of_gray,
    "gray-edge": gray_edge,
}
