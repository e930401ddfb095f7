"""Raw-domain augmentation and contrastive quadruple construction.

Two families of augmentation live here:

* ``perturb``: label-preserving intensity gain, shot noise and Gaussian noise.
* relighting: moving an image from one illuminant to another, either with a
  full 3x3 mapping fitted on color-checker colors (Full-Aug) or with its
  diagonal white-balance reduction (WB-Aug).  Novel illuminants are made by
  inter/extrapolating checker colors with a mixing weight ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .color_math import (
    RankDeficient,
    angular_error_degrees,
    apply_color_matrix,
    fit_color_transform,
    invert,
    neutral_direction,
    normalized,
    wb_matrix,
)

FULL_AUG = "full"
WB_AUG = "wb"
MIN_ILLUMINANT_SEPARATION = 0.1  # degrees


class FallbackToWB(RankDeficient):
    """Full-Aug is impossible for this checker; use the diagonal mapping."""


class IlluminantsTooClose(ValueError):
    """Anchor and partner (or novel) illuminants are too similar to contrast."""


@dataclass(frozen=True)
class PerturbConfig:
    intensity_gain_range: tuple = (0.8, 1.2)
    gaussian_noise_std_range: tuple = (0.0, 0.04)
    shot_noise_std_range: tuple = (0.02, 0.06)

    def __post_init__(self):
        for name in ("intensity_gain_range", "gaussian_noise_std_range", "shot_noise_std_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an ordered nonnegative range")
        if self.intensity_gain_range[0] <= 0:
            raise ValueError("intensity gain lower bound must be positive")

    @classmethod
    def identity(cls) -> "PerturbConfig":
        return cls((1.0, 1.0), (0.0, 0.0), (0.0, 0.0))


@dataclass(frozen=True)
class MixWeightConfig:
    negative_range: tuple = (-5.0, -0.3)
    positive_range: tuple = (0.3, 5.0)

    def __post_init__(self):
        nlo, nhi = self.negative_range
        plo, phi = self.positive_range
        if not (nlo <= nhi < 0 < plo <= phi):
            raise ValueError("mixing ranges must be ordered and exclude zero")

    def sample(self, rng: np.random.Generator) -> float:
        lo, hi = self.negative_range if rng.random() < 0.5 else self.positive_range
        return float(rng.uniform(lo, hi))


def perturb(img, cfg: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    """``max(0, gain*img + sqrt(img)*s_shot*e1 + s_gauss*e2)``, one gain/std per image."""
    img = np.asarray(img)
    gain = rng.uniform(*cfg.intensity_gain_range)
    s_shot = rng.uniform(*cfg.shot_noise_std_range)
    s_gauss = rng.uniform(*cfg.gaussian_noise_std_range)
    if gain == 1.0 and s_shot == 0.0 and s_gauss == 0.0:
        return img.copy()
    dt = img.dtype if img.dtype in (np.float32, np.float64) else np.float64
    out = gain * img.astype(dt, copy=False)
    if s_shot > 0:
        out += np.sqrt(np.maximum(img, 0)) * s_shot * rng.standard_normal(img.shape, dtype=dt)
    if s_gauss > 0:
        out += s_gauss * rng.standard_normal(img.shape, dtype=dt)
    return np.maximum(out, 0, out=out)


def synth_novel_checker(c_a, c_b, w: float, clamp_negative: bool = True) -> np.ndarray:
    """Checker under a novel illuminant, ``(1-w) C_A + w C_B``.

    Extrapolation can produce negative entries, which are clamped to 0 unless
    ``clamp_negative`` is False (the unclamped form is exactly linear in w).
    """
    c_a = np.asarray(c_a, dtype=np.float64)
    c_b = np.asarray(c_b, dtype=np.float64)
    if w == 0:
        return c_a.copy()
    if w == 1:
        return c_b.copy()
    out = (1 - w) * c_a + w * c_b
    return np.maximum(out, 0.0) if clamp_negative else out


def interpolate_transform(m, w: float, direction: str = "A->C") -> np.ndarray:
    """Mapping to the novel illuminant from the identity and an existing mapping.

    ``A->C``: ``(1-w) I + w M_AB`` (pass ``M_AB``).
    ``B->C``: ``w I + (1-w) M_BA`` (pass ``M_BA``).
    """
    m = np.asarray(m, dtype=np.float64)
    eye = np.eye(3)
    if direction == "A->C":
        return (1 - w) * eye + w * m
    if direction == "B->C":
        return w * eye + (1 - w) * m
    raise ValueError(f"unknown direction {direction!r}")


def wb_transform(l_src, l_dst) -> np.ndarray:
    """Diagonal map: white balance under ``l_src``, then undo white balance for ``l_dst``."""
    return wb_matrix(l_src) @ invert(wb_matrix(l_dst))


def relight_wb(img, l_src, l_dst, clamp_negative: bool = True) -> np.ndarray:
    l_src = np.asarray(l_src, dtype=np.float64)
    l_dst = np.asarray(l_dst, dtype=np.float64)
    if np.any(l_src <= 0) or np.any(l_dst <= 0):
        raise ValueError("illuminant components must be positive for WB relighting")
    return apply_color_matrix(img, wb_transform(l_src, l_dst), clamp_negative)


def relight_full(img, c_src, c_dst=None, w=None, clamp_negative: bool = True):
    """Relight ``img`` with a checker-fitted 3x3 mapping.

    Give either a destination checker ``c_dst`` (mapping is fitted directly) or
    a partner checker plus a mixing weight ``w`` (mapping built from the
    identity and the fitted partner mapping, no second fit).  Returns the relit
    image, its illuminant (direction of the relit neutral ramp) and the matrix.
    Raises ``FallbackToWB`` when ``c_src`` is rank deficient.
    """
    if c_dst is None:
        raise ValueError("a destination (or partner) checker is required")
    try:
        m = fit_color_transform(c_src, c_dst)
    except RankDeficient as exc:
        raise FallbackToWB(str(exc)) from exc
    if w is not None:
        m = interpolate_transform(m, w, "A->C")
    relit = apply_color_matrix(img, m, clamp_negative)
    relit_checker = np.maximum(np.asarray(c_src, dtype=np.float64) @ m, 0.0)
    return relit, neutral_direction(relit_checker), m


@dataclass
class ContrastiveQuadruple:
    anchor: np.ndarray
    easy_pos: np.ndarray
    hard_pos: np.ndarray
    easy_neg: np.ndarray
    hard_neg: np.ndarray
    anchor_illuminant: np.ndarray
    novel_illuminant: np.ndarray
    provenance: dict = field(default_factory=dict)

    VIEWS = ("anchor", "easy_pos", "hard_pos", "easy_neg", "hard_neg")

    def views(self) -> list:
        return [getattr(self, v) for v in self.VIEWS]

    def labels(self) -> list:
        a, c = self.anchor_illuminant, self.novel_illuminant
        return [a, a, a, c, c]


def _novel_wb_illuminant(l_a, l_b, w):
    # diagonal mapping keeps green; L_C interpolates in (r/g, 1, b/g)
    return (1 - w) * l_a / l_a[1] + w * l_b / l_b[1]


def sample_mix_weight(c_a, c_b, mix: MixWeightConfig, rng, mode: str, max_tries: int = 100):
    """Draw ``w`` whose novel illuminant is strictly positive in every channel.

    Strong extrapolation can push a channel of the novel neutral color below
    zero; such draws are rejected.  After ``max_tries`` the draw falls back to
    interpolation within ``[lower positive bound, 1]``, which is always valid.
    """
    l_a, l_b = neutral_direction(c_a), neutral_direction(c_b)
    for _ in range(max_tries):
        w = mix.sample(rng)
        if mode == WB_AUG:
            l_c = _novel_wb_illuminant(l_a, l_b, w)
        else:
            l_c = (1 - w) * np.asarray(c_a)[18:] + w * np.asarray(c_b)[18:]
        if np.all(l_c > 1e-3 * np.abs(l_c).max()):
            return w
    return float(rng.uniform(mix.positive_range[0], min(1.0, mix.positive_range[1])))


def _peak_normalize(img):
    peak = img.max()
    return img / peak if peak > 0 else img


def build_quadruple(sample_a, sample_b, mode: str = FULL_AUG, mix: MixWeightConfig | None = None,
                    perturb_cfg: PerturbConfig | None = None, rng=None, w: float | None = None,
                    images=None, normalize_views: bool = False) -> ContrastiveQuadruple:
    """Four contrastive views around an anchor scene X (illuminant A).

    ``sample_b`` supplies a second scene Y under illuminant B.  Views::

        anchor   = t (I_XA)
        easy_pos = t'(I_XA)
        hard_pos = t'(I_YA)   Y relit onto A
        easy_neg = t'(I_YC)   Y relit onto novel illuminant C
        hard_neg = t'(I_XC)   X relit onto C

    ``images`` optionally overrides the pixel arrays used for X and Y (e.g.
    masked, normalized network inputs); labels always come from the samples.
    ``normalize_views`` rescales every relit image to a peak of 1 before
    perturbation, keeping the noise model's [0, 1] range.
    A rank-deficient checker silently downgrades Full-Aug to WB-Aug.
    """
    rng = rng if rng is not None else np.random.default_rng()
    mix = mix or MixWeightConfig()
    perturb_cfg = perturb_cfg or PerturbConfig.identity()
    if sample_a.scene_id == sample_b.scene_id:
        raise ValueError("quadruple needs two distinct scenes")
    l_a = np.asarray(sample_a.illuminant, dtype=np.float64)
    l_b = np.asarray(sample_b.illuminant, dtype=np.float64)
    if angular_error_degrees(l_a, l_b) <= MIN_ILLUMINANT_SEPARATION:
        raise IlluminantsTooClose("anchor and partner illuminants nearly coincide")
    img_x, img_y = images if images is not None else (sample_a.image, sample_b.image)
    c_a, c_b = sample_a.checker, sample_b.checker

    used = mode
    if mode == FULL_AUG:
        try:
            m_ab = fit_color_transform(c_a, c_b)
            m_ba = invert(m_ab)
        except (RankDeficient, ValueError):
            used = WB_AUG
    elif mode != WB_AUG:
        raise ValueError(f"unknown augmentation mode {mode!r}")
    if used == WB_AUG:
        m_ab = wb_transform(l_a, l_b)
        m_ba = wb_transform(l_b, l_a)

    if w is None:
        w = sample_mix_weight(c_a, c_b, mix, rng, used)
    if used == WB_AUG:
        l_c = normalized(_novel_wb_illuminant(l_a / np.linalg.norm(l_a), l_b / np.linalg.norm(l_b), w))
    else:
        l_c = neutral_direction(synth_novel_checker(c_a, c_b, w))
    l_a_unit = normalized(l_a)
    if np.any(l_c <= 0) or angular_error_degrees(l_a_unit, l_c) <= MIN_ILLUMINANT_SEPARATION:
        raise IlluminantsTooClose("novel illuminant is degenerate or too close to the anchor")

    m_ac = interpolate_transform(m_ab, w, "A->C")
    m_bc = interpolate_transform(m_ba, w, "B->C")
    i_ya = apply_color_matrix(img_y, m_ba)
    i_yc = apply_color_matrix(img_y, m_bc)
    i_xc = apply_color_matrix(img_x, m_ac)
    if normalize_views:
        i_ya, i_yc, i_xc = (_peak_normalize(v) for v in (i_ya, i_yc, i_xc))

    return ContrastiveQuadruple(
        anchor=perturb(img_x, perturb_cfg, rng),
        easy_pos=perturb(img_x, perturb_cfg, rng),
        hard_pos=perturb(i_ya, perturb_cfg, rng),
        easy_neg=perturb(i_yc, perturb_cfg, rng),
        hard_neg=perturb(i_xc, perturb_cfg, rng),
        anchor_illuminant=l_a_unit,
        novel_illuminant=l_c,
        provenance={"scene_x": sample_a.scene_id, "scene_y": sample_b.scene_id,
                    "illuminant_a": sample_a.illuminant_id, "illuminant_b": sample_b.illuminant_id,
                    "w": float(w), "mode": used},
    )
