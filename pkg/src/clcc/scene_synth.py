"""Synthetic raw-RGB scenes rendered from spectra.

A scene is a mosaic of flat reflectance patches plus a 24-patch color checker.
Pixels are the discretized image-formation integral
``sum_lambda R_c(lambda) S(x, lambda) L(lambda) dlambda`` on a 10 nm grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .color_math import N_CHECKER_PATCHES, normalized

WAVELENGTHS = np.arange(380.0, 721.0, 10.0)
N_SAMPLES = WAVELENGTHS.size
D_LAMBDA = 10.0

T_RANGE = (2000.0, 12000.0)
TINT_LIMIT = 0.2

# Planck's law constants, SI units.
_H = 6.62607015e-34
_C = 2.99792458e8
_KB = 1.380649e-23

# Stream tags for per-purpose RNGs derived from a dataset seed.
_ILLUM_STREAM = 1
_SCENE_STREAM = 2
_ASSIGN_STREAM = 3
_LIBRARY_STREAM = 4


def _gauss(center, width):
    return np.exp(-0.5 * ((WAVELENGTHS - center) / width) ** 2)


def as_spectrum(samples, reflectance: bool = False) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.shape != (N_SAMPLES,):
        raise ValueError(f"spectrum must have {N_SAMPLES} samples, got {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < 0):
        raise ValueError("spectrum samples must be finite and nonnegative")
    if reflectance and np.any(s > 1):
        raise ValueError("reflectance samples must not exceed 1")
    return s


@dataclass(frozen=True)
class SensorModel:
    """Gaussian spectral sensitivities, one per channel (center, width in nm)."""

    centers: tuple = (605.0, 540.0, 455.0)
    widths: tuple = (38.0, 42.0, 30.0)

    @property
    def sensitivities(self) -> np.ndarray:
        s = np.stack([_gauss(c, w) for c, w in zip(self.centers, self.widths)])
        if np.any(s.sum(axis=1) <= 0):
            raise ValueError("every sensor channel needs positive total sensitivity")
        return s

    def to_dict(self) -> dict:
        return {"centers": list(self.centers), "widths": list(self.widths)}

    @classmethod
    def from_dict(cls, d: dict) -> "SensorModel":
        return cls(tuple(float(c) for c in d["centers"]), tuple(float(w) for w in d["widths"]))


def _checker_reflectances() -> np.ndarray:
    # (pedestal, [(center, width, amplitude), ...]) for the 18 chromatic patches.
    chromatic = [
        (0.05, [(610, 60, 0.30)]),                   # dark skin
        (0.10, [(620, 70, 0.50), (470, 40, 0.10)]),  # light skin
        (0.06, [(460, 45, 0.30)]),                   # blue sky
        (0.04, [(540, 40, 0.20)]),                   # foliage
        (0.08, [(450, 40, 0.40), (680, 40, 0.15)]),  # blue flower
        (0.06, [(510, 40, 0.55)]),                   # bluish green
        (0.04, [(640, 50, 0.75)]),                   # orange
        (0.05, [(440, 35, 0.45)]),                   # purplish blue
        (0.05, [(660, 50, 0.55), (430, 25, 0.12)]),  # moderate red
        (0.03, [(420, 30, 0.25), (690, 40, 0.25)]),  # purple
        (0.04, [(570, 55, 0.65)]),                   # yellow green
        (0.04, [(610, 45, 0.80)]),                   # orange yellow
        (0.03, [(450, 25, 0.35)]),                   # blue
        (0.03, [(530, 35, 0.40)]),                   # green
        (0.03, [(680, 40, 0.65)]),                   # red
        (0.05, [(590, 60, 0.85)]),                   # yellow
        (0.06, [(420, 35, 0.45), (660, 45, 0.55)]),  # magenta
        (0.05, [(490, 35, 0.50)]),                   # cyan
    ]
    neutral = [0.90, 0.59, 0.36, 0.19, 0.09, 0.031]
    rows = []
    for pedestal, bumps in chromatic:
        r = np.full(N_SAMPLES, pedestal)
        for c, w, a in bumps:
            r = r + a * _gauss(c, w)
        rows.append(np.clip(r, 0.0, 1.0))
    rows.extend(np.full(N_SAMPLES, v) for v in neutral)
    return np.stack(rows)


CHECKER_REFLECTANCES = _checker_reflectances()
CHECKER_ROWS, CHECKER_COLS = 4, 6


def planckian_spd(temperature_kelvin: float, tint: float = 0.0) -> np.ndarray:
    """Blackbody SPD on the grid, unit mean, times a linear tint ramp."""
    if not T_RANGE[0] <= temperature_kelvin <= T_RANGE[1]:
        raise ValueError(f"temperature {temperature_kelvin} K outside {T_RANGE}")
    if abs(tint) > TINT_LIMIT:
        raise ValueError(f"|tint| must be <= {TINT_LIMIT}")
    lam = WAVELENGTHS * 1e-9
    spd = 2 * _H * _C**2 / lam**5 / np.expm1(_H * _C / (lam * _KB * temperature_kelvin))
    spd = spd / spd.mean()
    ramp = np.linspace(-1.0, 1.0, N_SAMPLES)
    return spd * (1.0 + tint * ramp)


def render_color(reflectance, illum, sensor: SensorModel) -> np.ndarray:
    """Sensor RGB of one reflectance (or a stack of them, ...x35) under ``illum``."""
    reflectance = np.asarray(reflectance, dtype=np.float64)
    illum = np.asarray(illum, dtype=np.float64)
    if reflectance.shape[-1] != N_SAMPLES or illum.shape != (N_SAMPLES,):
        raise ValueError("reflectance and illuminant must be sampled on the same grid")
    return (reflectance * illum) @ sensor.sensitivities.T * D_LAMBDA


@dataclass
class SceneSpec:
    """Flat-patch mosaic: ``grid`` patches of ``patch_px`` pixels each.

    The checker is a 4x6 block of ``checker_cell_px`` cells whose top-left
    pixel is ``checker_origin``; it must cover whole scene patches.
    """

    reflectances: np.ndarray  # (rows*cols, 35), row-major
    grid: tuple = (8, 8)
    patch_px: int = 8
    checker_origin: tuple = (0, 0)
    checker_cell_px: int = 4
    shading: float = 0.0
    seed: int = 0

    def __post_init__(self):
        rows, cols = self.grid
        self.reflectances = np.asarray(self.reflectances, dtype=np.float64)
        if self.reflectances.shape != (rows * cols, N_SAMPLES):
            raise ValueError("need one reflectance per scene patch")
        if np.any(self.reflectances < 0) or np.any(self.reflectances > 1):
            raise ValueError("reflectances must lie in [0, 1]")
        y0, x0 = self.checker_origin
        h, w = self.checker_region[2:]
        if y0 < 0 or x0 < 0 or y0 + h > self.height or x0 + w > self.width:
            raise ValueError("checker does not fit inside the scene")

    @property
    def height(self) -> int:
        return self.grid[0] * self.patch_px

    @property
    def width(self) -> int:
        return self.grid[1] * self.patch_px

    @property
    def checker_region(self) -> tuple:
        """(y0, x0, height, width) in pixels."""
        y0, x0 = self.checker_origin
        return (y0, x0, CHECKER_ROWS * self.checker_cell_px, CHECKER_COLS * self.checker_cell_px)

    def covered_patches(self) -> np.ndarray:
        """Boolean mask over scene patches hidden (fully or partly) by the checker."""
        y0, x0, h, w = self.checker_region
        p = self.patch_px
        covered = np.zeros(self.grid, dtype=bool)
        covered[y0 // p:-(-(y0 + h) // p), x0 // p:-(-(x0 + w) // p)] = True
        return covered.reshape(-1)


@dataclass
class LabeledImage:
    image: np.ndarray          # HxWx3 float32, linear raw RGB
    illuminant: np.ndarray     # (3,), sensor response to a unit-reflectance surface
    checker: np.ndarray        # (24, 3)
    scene_id: int
    illuminant_id: int
    checker_region: tuple = (0, 0, 0, 0)
    meta: dict = field(default_factory=dict)

    def masked_image(self) -> np.ndarray:
        """Image with the checker pixels zeroed, as fed to estimators."""
        img = self.image.copy()
        y0, x0, h, w = self.checker_region
        img[y0:y0 + h, x0:x0 + w] = 0
        return img


def _shading_field(height, width, strength, rng):
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    a, b, c = rng.uniform(-1, 1, size=3)
    f = a * (xx - 0.5) + b * (yy - 0.5) + c * ((xx - 0.5) ** 2 + (yy - 0.5) ** 2)
    return 1.0 - strength * (f - f.min()) / max(f.max() - f.min(), 1e-12)


def render_scene(scene: SceneSpec, illum, sensor: SensorModel, exposure: float = 1.0,
                 scene_id: int = 0, illuminant_id: int = 0) -> LabeledImage:
    if not exposure > 0:
        raise ValueError("exposure must be positive")
    rows, cols = scene.grid
    p = scene.patch_px
    colors = render_color(scene.reflectances, illum, sensor) * exposure
    img = np.repeat(np.repeat(colors.reshape(rows, cols, 3), p, axis=0), p, axis=1)
    if scene.shading > 0:
        rng = np.random.default_rng(scene.seed)
        img = img * _shading_field(scene.height, scene.width, scene.shading, rng)[..., None]

    checker = render_color(CHECKER_REFLECTANCES, illum, sensor) * exposure
    cell = scene.checker_cell_px
    y0, x0, h, w = scene.checker_region
    img[y0:y0 + h, x0:x0 + w] = np.repeat(
        np.repeat(checker.reshape(CHECKER_ROWS, CHECKER_COLS, 3), cell, axis=0), cell, axis=1)

    illuminant = render_color(np.ones(N_SAMPLES), illum, sensor) * exposure
    return LabeledImage(img.astype(np.float32), illuminant, checker, scene_id, illuminant_id,
                        scene.checker_region)


def random_reflectance(rng: np.random.Generator) -> np.ndarray:
    """Smooth reflectance: pedestal plus a few Gaussian bumps, clipped to [0, 1]."""
    r = np.full(N_SAMPLES, rng.uniform(0.02, 0.3))
    for _ in range(rng.integers(1, 4)):
        r += rng.uniform(0.05, 0.7) * _gauss(rng.uniform(380, 720), rng.uniform(15, 80))
    return np.clip(r, 0.0, 1.0)


def random_scene(rng: np.random.Generator, grid=(8, 8), patch_px=8, mean_neutral=False,
                 white_patch=False, shading=0.0, seed=0, library=None) -> SceneSpec:
    """Random mosaic built from a small per-scene palette of materials.

    The palette is freshly drawn per scene, or picked from ``library`` (an
    Mx35 array of reflectances shared across scenes) when one is given.

    ``mean_neutral`` pairs every visible material with its complement so the
    visible reflectances average to a flat spectrum (gray world holds exactly).
    ``white_patch`` places one unit-reflectance patch among the visible ones.
    """
    rows, cols = grid
    cell = patch_px // 2
    # checker spans 2x3 scene patches; origin on the patch lattice
    cy = int(rng.integers(0, rows - 1)) * patch_px
    cx = int(rng.integers(0, cols - 2)) * patch_px
    spec = SceneSpec(np.zeros((rows * cols, N_SAMPLES)), grid, patch_px, (cy, cx), cell,
                     shading, seed)
    visible = np.flatnonzero(~spec.covered_patches())

    n_materials = int(rng.integers(3, 9))
    if library is None:
        palette = np.stack([random_reflectance(rng) for _ in range(n_materials)])
    else:
        library = np.asarray(library, dtype=np.float64)
        pick = rng.choice(len(library), size=min(n_materials, len(library)), replace=False)
        palette = library[np.sort(pick)]
    refl = spec.reflectances
    if mean_neutral:
        half = len(visible) // 2
        picks = palette[rng.integers(0, len(palette), size=half)]
        order = rng.permutation(visible)
        refl[order[:half]] = picks
        refl[order[half:2 * half]] = 1.0 - picks
        if len(visible) % 2:
            refl[order[-1]] = 0.5
    else:
        weights = rng.dirichlet(np.ones(len(palette)))
        refl[visible] = palette[rng.choice(len(palette), size=len(visible), p=weights)]
    if white_patch:
        refl[rng.choice(visible)] = 1.0
    return spec


def synth_dataset(n_scenes: int, n_illums: int, sensor: SensorModel | None = None, seed: int = 0,
                  grid=(8, 8), patch_px=8, mean_neutral=False, white_patch=False, shading=0.0,
                  n_materials: int = 0):
    """Render ``n_scenes`` scenes, each under one illuminant from a pool of ``n_illums``.

    Illuminants are Planckian with T ~ U[2500, 9500] K and tint ~ U[-0.1, 0.1].
    With ``n_materials > 0`` every scene draws its palette from one shared
    library of that many random reflectances, so surfaces recur across scenes
    the way real materials do; 0 gives every scene its own materials.
    Every draw comes from an RNG keyed on (seed, stream, index), so the output
    does not depend on rendering order.  Returns ``(samples, manifest)``.
    """
    if n_scenes < 1 or n_illums < 1:
        raise ValueError("need at least one scene and one illuminant")
    sensor = sensor or SensorModel()

    pool = []
    for j in range(n_illums):
        rng = np.random.default_rng([seed, _ILLUM_STREAM, j])
        pool.append((float(rng.uniform(2500, 9500)), float(rng.uniform(-0.1, 0.1))))
    library = None
    if n_materials > 0:
        library = np.stack([random_reflectance(np.random.default_rng([seed, _LIBRARY_STREAM, k]))
                            for k in range(n_materials)])
    assign_rng = np.random.default_rng([seed, _ASSIGN_STREAM])
    illum_ids = assign_rng.permutation(np.arange(n_scenes) % n_illums)

    samples = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, _SCENE_STREAM, i])
        scene = random_scene(rng, grid, patch_px, mean_neutral, white_patch, shading,
                             seed=int(rng.integers(2**31)), library=library)
        j = int(illum_ids[i])
        temperature, tint = pool[j]
        spd = planckian_spd(temperature, tint)
        unit = render_scene(scene, spd, sensor, 1.0)
        exposure = float(rng.uniform(0.5, 1.0)) / float(unit.image.max())
        s = render_scene(scene, spd, sensor, exposure, scene_id=i, illuminant_id=j)
        s.meta = {"temperature": temperature, "tint": tint}
        samples.append(s)

    manifest = {
        "seed": seed,
        "n_materials": n_materials,
        "sensor": sensor.to_dict(),
        "illuminants": [{"illuminant_id": j, "temperature": t, "tint": k}
                        for j, (t, k) in enumerate(pool)],
    }
    return samples, manifest


def illuminant_chromaticity(illuminants) -> np.ndarray:
    """(r/g, b/g) coordinates of an Nx3 illuminant array."""
    l = np.asarray(illuminants, dtype=np.float64)
    return np.stack([l[:, 0] / l[:, 1], l[:, 2] / l[:, 1]], axis=1)


def unit_illuminants(samples) -> np.ndarray:
    return np.stack([normalized(s.illuminant) for s in samples])


__all__ = [
    "WAVELENGTHS", "N_SAMPLES", "CHECKER_REFLECTANCES", "N_CHECKER_PATCHES", "SensorModel",
    "SceneSpec", "LabeledImage", "planckian_spd", "render_color", "render_scene",
    "random_scene", "synth_dataset", "illuminant_chromaticity", "unit_illuminants",
]
