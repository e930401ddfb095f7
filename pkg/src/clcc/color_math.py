"""Linear color algebra on raw-RGB data.

Convention: pixels and checker patches are *row* vectors and a 3x3 transform
is applied on the right, ``out = pixel @ M``.  Every module in the package
uses this convention.
"""

from __future__ import annotations

import numpy as np

N_CHECKER_PATCHES = 24
NEUTRAL_PATCHES = slice(18, 24)


class RankDeficient(ValueError):
    """Source colors do not span RGB; a full 3x3 fit is not determined."""


class Singular(ValueError):
    """Matrix is too close to singular to invert."""


def as_illuminant(l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64).reshape(-1)
    if l.shape != (3,):
        raise ValueError(f"illuminant must have 3 components, got {l.shape}")
    if not np.all(np.isfinite(l)) or np.any(l < 0) or not np.any(l > 0):
        raise ValueError(f"illuminant must be nonnegative with a positive component: {l}")
    return l


def normalized(l) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    n = np.linalg.norm(l)
    if n == 0:
        raise ValueError("zero vector has no direction")
    return l / n


def as_checker(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (N_CHECKER_PATCHES, 3):
        raise ValueError(f"checker colors must be 24x3, got {c.shape}")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValueError("checker colors must be finite and nonnegative")
    return c


def as_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"raw image must be HxWx3, got {img.shape}")
    if not np.all(np.isfinite(img)) or np.any(img < 0):
        raise ValueError("raw image must be finite and nonnegative")
    return img


def neutral_direction(checker) -> np.ndarray:
    """Unit illuminant direction implied by the neutral ramp (patches 18..23)."""
    ramp = np.asarray(checker, dtype=np.float64)[NEUTRAL_PATCHES]
    norms = np.linalg.norm(ramp, axis=1, keepdims=True)
    keep = norms[:, 0] > 0
    if not np.any(keep):
        raise ValueError("neutral ramp is black")
    return normalized((ramp[keep] / norms[keep]).mean(axis=0))


def wb_matrix(l) -> np.ndarray:
    """Diagonal white-balance gains ``diag(g/r, 1, g/b)`` for illuminant ``l``."""
    r, g, b = np.asarray(l, dtype=np.float64).reshape(3)
    if not (r > 0 and b > 0):
        raise ValueError("illuminant has no red/blue response")
    if not g > 0:
        raise ValueError("illuminant has no green response")
    return np.diag([g / r, 1.0, g / b])


def apply_color_matrix(img, m, clamp_negative: bool = True) -> np.ndarray:
    img = np.asarray(img)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise ValueError("color matrix must be a finite 3x3 array")
    if np.array_equal(m, np.eye(3)):
        return img.copy()
    out = (img.reshape(-1, 3) @ m.astype(img.dtype, copy=False)).reshape(img.shape)
    if clamp_negative:
        np.maximum(out, 0, out=out)
    return out


def fit_color_transform(src, dst, return_residual: bool = False):
    """Least-squares 3x3 ``M`` minimizing ``||src @ M - dst||_F``.

    Solved through the 3x3 normal equations.  Raises ``RankDeficient`` when the
    smallest eigenvalue of ``src.T @ src`` is below 1e-8 of the largest; callers
    are expected to fall back to a diagonal (white-balance) mapping.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 3 or src.shape != dst.shape:
        raise ValueError(f"expected matching Nx3 color sets, got {src.shape} and {dst.shape}")
    gram = src.T @ src
    eig = np.linalg.eigvalsh(gram)
    if not eig[-1] > 0 or eig[0] < 1e-8 * eig[-1]:
        raise RankDeficient("source colors are rank deficient")
    m = np.linalg.solve(gram, src.T @ dst)
    if return_residual:
        return m, float(np.linalg.norm(src @ m - dst))
    return m


def invert(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if abs(np.linalg.det(m)) <= 1e-12:
        raise Singular("matrix is numerically singular")
    return np.linalg.inv(m)


def angular_error_degrees(est, gt) -> float:
    est = np.asarray(est, dtype=np.float64).reshape(3)
    gt = np.asarray(gt, dtype=np.float64).reshape(3)
    ne, ng = np.linalg.norm(est), np.linalg.norm(gt)
    if ne == 0 or ng == 0:
        raise ValueError("angular error undefined for a zero vector")
    cos = np.clip(est @ gt / (ne * ng), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def angular_errors_degrees(est, gt) -> np.ndarray:
    """Row-wise angular error between two Nx3 arrays."""
    est = np.asarray(est, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    ne = np.linalg.norm(est, axis=1)
    ng = np.linalg.norm(gt, axis=1)
    if np.any(ne == 0) or np.any(ng == 0):
        raise ValueError("angular error undefined for a zero vector")
    cos = np.clip(np.sum(est * gt, axis=1) / (ne * ng), -1.0, 1.0)
    return np.degrees(np.arccos(cos))
