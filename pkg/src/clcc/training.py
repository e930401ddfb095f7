"""Joint illuminant + contrastive training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .augment import (
    FULL_AUG,
    WB_AUG,
    MIN_ILLUMINANT_SEPARATION,
    IlluminantsTooClose,
    MixWeightConfig,
    PerturbConfig,
    build_quadruple,
)
from .color_math import angular_errors_degrees, normalized
from .contrastive import NceConfig, clcc_loss
from .model import (
    AdamState,
    ModelConfig,
    TrainingDiverged,
    adam_step,
    backward,
    forward,
    illuminant_loss,
    init_params,
    predict,
    weight_penalty,
)

log = logging.getLogger(__name__)

MODES = ("baseline", "clcc_wb", "clcc_full")
_AUG_FOR_MODE = {"clcc_wb": WB_AUG, "clcc_full": FULL_AUG}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    dropout: float = 0.5
    weight_decay: float = 5.7e-5
    lambda_first: float = 0.1
    beta_first: float = 1.0
    lambda_second: float = 1.0
    beta_second: float = 0.1
    epochs: int = 60
    switch_epoch: int = 30
    crop: int = 64
    channels: tuple = (16, 32, 64, 64)
    proj_width: int = 64
    proj_layers: int = 3
    temperature: float = 0.87
    n_negatives: int = 12
    gain_min: float = 0.8
    gain_max: float = 1.2
    gauss_std_min: float = 0.0
    gauss_std_max: float = 0.04
    shot_std_min: float = 0.02
    shot_std_max: float = 0.06
    w_min: float = 0.3
    w_max: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "temperature", "n_negatives",
                     "proj_width", "crop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.switch_epoch <= self.epochs:
            raise ValueError("switch_epoch must lie within [0, epochs]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    def loss_weights(self, epoch: int) -> tuple:
        if epoch < self.switch_epoch:
            return self.lambda_first, self.beta_first
        return self.lambda_second, self.beta_second

    def model_config(self, dtype: str = "float32") -> ModelConfig:
        return ModelConfig(tuple(self.channels), (self.proj_width,) * self.proj_layers,
                           self.crop, self.dropout, dtype)

    def perturb_config(self) -> PerturbConfig:
        return PerturbConfig((self.gain_min, self.gain_max), (self.gauss_std_min, self.gauss_std_max),
                             (self.shot_std_min, self.shot_std_max))

    def mix_config(self) -> MixWeightConfig:
        return MixWeightConfig((-self.w_max, -self.w_min), (self.w_min, self.w_max))

    def nce_config(self) -> NceConfig:
        return NceConfig(self.temperature, self.n_negatives)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ValueError(f"unknown training option {k!r}")
            if k == "channels":
                out[k] = tuple(int(c) for c in v)
            elif kinds[k] == "int":
                out[k] = int(v)
            else:
                out[k] = float(v)
        return cls(**out)


def network_input(sample, crop: int, rng=None) -> np.ndarray:
    """Checker-masked image scaled to max 1, cropped to ``crop`` (random if rng)."""
    img = sample.masked_image()
    h, w = img.shape[:2]
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} smaller than crop {crop}")
    if rng is not None:
        y, x = int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1))
    else:
        y, x = (h - crop) // 2, (w - crop) // 2
    img = img[y:y + crop, x:x + crop]
    peak = img.max()
    return (img / peak if peak > 0 else img).astype(np.float32)


@dataclass
class ContrastiveBatch:
    views: np.ndarray        # (5B, H, W, 3), item i owns rows 5i..5i+4
    labels: np.ndarray       # (5B, 3) unit illuminants of the views
    extra_negs: list         # per item, row indices of in-batch extra negatives
    provenance: list


def make_contrastive_batch(samples, inputs, batch_idx, pool_idx, mode, cfg: TrainConfig, rng,
                           max_tries: int = 50) -> ContrastiveBatch:
    """Build one quadruple per anchor in ``batch_idx`` with partners from ``pool_idx``."""
    aug = _AUG_FOR_MODE[mode]
    perturb_cfg, mix = cfg.perturb_config(), cfg.mix_config()
    views, labels, prov = [], [], []
    for i in batch_idx:
        for _ in range(max_tries):
            j = int(rng.choice(pool_idx))
            if samples[j].scene_id == samples[i].scene_id:
                continue
            try:
                q = build_quadruple(samples[i], samples[j], aug, mix, perturb_cfg, rng,
                                    images=(inputs[i], inputs[j]), normalize_views=True)
                break
            except IlluminantsTooClose:
                continue
        else:
            raise RuntimeError(f"no valid contrastive partner for sample {i}")
        views.extend(q.views())
        labels.extend(q.labels())
        prov.append(q.provenance)

    labels = np.stack(labels)
    b = len(batch_idx)
    n_extra = cfg.n_negatives - 1
    cos_min = np.cos(np.radians(MIN_ILLUMINANT_SEPARATION))
    sim = labels @ labels.T
    extra = []
    for i in range(b):
        cand = [5 * j + r for j in range(b) if j != i for r in (0, 3, 4)]
        ok = [c for c in cand if sim[5 * i, c] < cos_min]
        if len(ok) > n_extra:
            ok = sorted(rng.choice(ok, size=n_extra, replace=False).tolist())
        extra.append(ok)
    return ContrastiveBatch(np.stack(views).astype(np.float32), labels, extra, prov)


def batch_objective(params, originals, gts, cbatch: ContrastiveBatch | None, lam: float, beta: float,
                    cfg: TrainConfig, rng=None, dropout_mask=None, train_mode: bool = True):
    """Total loss ``lam*L_illum + beta*L_contrastive + wd/2 ||W||^2`` and its gradients.

    The illuminant head sees only ``originals``; the projection head sees only
    the contrastive views.  Both terms are batch means.
    """
    b = len(originals)
    if cbatch is not None:
        images = np.concatenate([originals, cbatch.views])
        proj_idx = np.arange(b, b + len(cbatch.views))
    else:
        images = originals
        proj_idx = []
    res = forward(params, images, train_mode, rng, illum_idx=np.arange(b), proj_idx=proj_idx,
                  dropout_mask=dropout_mask)

    ill, d_est = illuminant_loss(res.illuminant, gts)
    l_ill = float(np.mean(ill))
    d_est = d_est * (lam / b)

    l_con = 0.0
    d_proj = None
    if cbatch is not None:
        z = res.projection.astype(np.float64)
        dz = np.zeros_like(z)
        nce = cfg.nce_config()
        for i in range(b):
            rows = slice(5 * i, 5 * i + 5)
            ex = cbatch.extra_negs[i]
            za, za_pos, zy_pos, zy_neg, zx_neg = z[rows]
            loss, g = clcc_loss(za, za_pos, zy_pos, zx_neg, zy_neg, z[ex] if ex else (), nce)
            l_con += loss
            dz[rows] += np.stack([g["xa"], g["xa_pos"], g["ya_pos"], g["yc_neg"], g["xc_neg"]])
            if ex:
                np.add.at(dz, ex[:len(g["extra"])], g["extra"])
        l_con /= b
        d_proj = dz * (beta / b)

    grads = backward(params, res.cache, d_est, d_proj, cfg.weight_decay)
    total = lam * l_ill + beta * l_con + weight_penalty(params, cfg.weight_decay)
    return total, grads, {"illuminant": l_ill, "contrastive": l_con}


def train(samples, cfg: TrainConfig = TrainConfig(), mode: str = "clcc_full", val=None,
          dtype: str = "float32", on_batch=None):
    """Train on ``samples`` (list of LabeledImage); returns ``(params, log)``.

    ``log`` has one dict per epoch with the loss weights in effect, mean
    losses and (if ``val`` is given) mean validation angular error.
    ``on_batch`` is an optional hook called with each ContrastiveBatch.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not samples:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model_config(dtype), cfg.seed)
    state = AdamState.zeros_like(params)
    inputs = np.stack([network_input(s, cfg.crop) for s in samples])
    gts = np.stack([normalized(s.illuminant) for s in samples])
    n = len(samples)
    pool = np.arange(n)
    if mode != "baseline" and len({s.scene_id for s in samples}) < 2:
        raise ValueError("contrastive training needs at least two scenes")
    if val is not None:
        val_inputs = np.stack([network_input(s, cfg.crop) for s in val])
        val_gts = np.stack([normalized(s.illuminant) for s in val])

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        lam, beta = cfg.loss_weights(epoch)
        order = rng.permutation(n)
        sums = {"total": 0.0, "illuminant": 0.0, "contrastive": 0.0}
        n_batches = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            cbatch = None
            if mode != "baseline":
                cbatch = make_contrastive_batch(samples, inputs, idx, pool, mode, cfg, rng)
                if on_batch is not None:
                    on_batch(cbatch)
            total, grads, parts = batch_objective(params, inputs[idx], gts[idx], cbatch, lam, beta, cfg, rng)
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}: {parts}")
            adam_step(params, grads, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            sums["total"] += total
            for k in parts:
                sums[k] += parts[k]
            n_batches += 1
            step += 1
        entry = {"epoch": epoch, "lambda": lam, "beta": beta,
                 **{k: v / n_batches for k, v in sums.items()}}
        if val is not None:
            entry["val_error"] = float(np.mean(angular_errors_degrees(predict(params, val_inputs), val_gts)))
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)
    return params, history


class Learner:
    """Trainable method for cross-validation: ``fit(train) -> predictor``."""

    learns = True

    def __init__(self, cfg: TrainConfig = TrainConfig(), mode: str = "clcc_full"):
        self.cfg = cfg
        self.mode = mode
        self.history = []
        self.params = None

    def fit(self, train_samples):
        self.params, hist = train(train_samples, self.cfg, self.mode)
        self.history.append(hist)
        params, crop = self.params, self.cfg.crop

        def predictor(samples):
            return predict(params, np.stack([network_input(s, crop) for s in samples]))

        return predictor
