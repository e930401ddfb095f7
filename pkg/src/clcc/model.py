"""Illuminant estimator with a contrastive projection head, in plain numpy.

Network::

    h  = GAP(relu(conv3x3/2)^4 (image))          feature extractor
    L^ = normalize(softplus(dropout(h) W + b))   illuminant head
    z  = normalize(MLP(h))                       projection head (training only)

Gradients are derived by hand; ``backward`` consumes the cache produced by
``forward``.  Images are NHWC.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .color_math import angular_errors_degrees


class StaleCache(ValueError):
    """Backward called with a cache from before the last parameter update."""


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = (16, 32, 64, 64)
    proj_dims: tuple = (64, 64, 64)
    crop: int = 64
    dropout: float = 0.5
    dtype: str = "float32"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["proj_dims"] = list(self.proj_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(tuple(d["channels"]), tuple(d["proj_dims"]), int(d["crop"]),
                   float(d["dropout"]), str(d["dtype"]))


@dataclass
class ModelParams:
    tensors: dict
    config: ModelConfig
    version: int = 0

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.config, self.version)

    @property
    def n_conv(self) -> int:
        return len(self.config.channels)

    @property
    def n_proj(self) -> int:
        return len(self.config.proj_dims)


def init_params(config: ModelConfig = ModelConfig(), seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    t = {}
    c_in = 3
    for i, c_out in enumerate(config.channels):
        fan_in = 9 * c_in
        t[f"conv{i}_w"] = rng.normal(0, np.sqrt(2.0 / fan_in), (fan_in, c_out)).astype(dt)
        t[f"conv{i}_b"] = np.zeros(c_out, dt)
        c_in = c_out
    feat = config.channels[-1]
    t["illum_w"] = rng.normal(0, np.sqrt(1.0 / feat), (feat, 3)).astype(dt)
    t["illum_b"] = np.ones(3, dt)
    d_in = feat
    for j, d_out in enumerate(config.proj_dims):
        t[f"proj{j}_w"] = rng.normal(0, np.sqrt(2.0 / d_in), (d_in, d_out)).astype(dt)
        t[f"proj{j}_b"] = np.zeros(d_out, dt)
        d_in = d_out
    return ModelParams(t, config)


def _im2col(x):
    """3x3, stride 2, pad 1 patches of NHWC ``x`` -> (N*Ho*Wo, 9*C), (kh, kw, c) order."""
    n, h, w, c = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((n, ho, wo, 9, c), x.dtype)
    for kh in range(3):
        for kw in range(3):
            cols[:, :, :, 3 * kh + kw] = xp[:, kh:kh + 2 * ho:2, kw:kw + 2 * wo:2]
    return cols.reshape(n * ho * wo, 9 * c), (n, ho, wo)


def _col2im(dcols, x_shape, out_shape):
    n, h, w, c = x_shape
    _, ho, wo = out_shape
    dwin = dcols.reshape(n, ho, wo, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dcols.dtype)
    for kh in range(3):
        for kw in range(3):
            dxp[:, kh:kh + 2 * ho:2, kw:kw + 2 * wo:2] += dwin[:, :, :, 3 * kh + kw]
    return dxp[:, 1:-1, 1:-1, :]


def _softplus(x):
    return np.logaddexp(0, x)


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


def _normalize(v):
    n = np.linalg.norm(v, axis=1, keepdims=True)
    return v / n, n


def _normalize_backward(g, u, n):
    return (g - u * np.sum(u * g, axis=1, keepdims=True)) / n


@dataclass
class ForwardResult:
    features: np.ndarray
    illuminant: np.ndarray | None
    projection: np.ndarray | None
    cache: dict = field(repr=False, default_factory=dict)


def forward(params: ModelParams, images, train_mode: bool = False, rng=None,
            illum_idx=None, proj_idx=None, dropout_mask=None) -> ForwardResult:
    """Run the network on a batch of images (NHWC, or a single HxWx3).

    ``illum_idx`` / ``proj_idx`` select which batch rows feed each head
    (default: all rows, both heads; pass an empty list to skip a head).
    In train mode dropout before the illuminant head uses ``dropout_mask`` if
    given, else a mask drawn from ``rng``.
    """
    cfg = params.config
    dt = np.dtype(cfg.dtype)
    x = np.asarray(images, dtype=dt)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (cfg.crop, cfg.crop, 3):
        raise ValueError(f"expected images of shape (N, {cfg.crop}, {cfg.crop}, 3), got {x.shape}")
    n = x.shape[0]
    cache = {"version": params.version, "n": n, "layers": []}

    a = x
    for i in range(params.n_conv):
        cols, out_shape = _im2col(a)
        pre = cols @ params[f"conv{i}_w"] + params[f"conv{i}_b"]
        act = np.maximum(pre, 0)
        cache["layers"].append((cols, a.shape, out_shape, pre))
        a = act.reshape(*out_shape, -1)
    cache["last_shape"] = a.shape
    h = a.mean(axis=(1, 2))

    illum_idx = np.arange(n) if illum_idx is None else np.asarray(illum_idx, dtype=int)
    proj_idx = np.arange(n) if proj_idx is None else np.asarray(proj_idx, dtype=int)
    cache["illum_idx"], cache["proj_idx"] = illum_idx, proj_idx

    est = None
    if illum_idx.size:
        hi = h[illum_idx]
        if train_mode and cfg.dropout > 0:
            if dropout_mask is None:
                rng = rng if rng is not None else np.random.default_rng()
                keep = rng.random(hi.shape) >= cfg.dropout
                dropout_mask = (keep / (1.0 - cfg.dropout)).astype(dt)
            hi = hi * dropout_mask
        else:
            dropout_mask = None
        y = hi @ params["illum_w"] + params["illum_b"]
        sp = _softplus(y)
        est, sp_norm = _normalize(sp)
        cache["illum"] = (hi, dropout_mask, y, est, sp_norm)

    z = None
    if proj_idx.size:
        p = h[proj_idx]
        acts = [p]
        for j in range(params.n_proj):
            p = p @ params[f"proj{j}_w"] + params[f"proj{j}_b"]
            if j < params.n_proj - 1:
                p = np.maximum(p, 0)
            acts.append(p)
        z, z_norm = _normalize(p)
        cache["proj"] = (acts, z, z_norm)

    return ForwardResult(h, est, z, cache)


def backward(params: ModelParams, cache: dict, d_illum=None, d_proj=None,
             weight_decay: float = 0.0) -> dict:
    """Parameter gradients given upstream gradients on the head outputs.

    ``d_illum`` is w.r.t. the unit illuminant estimates, ``d_proj`` w.r.t. the
    unit projections.  ``weight_decay`` adds ``wd * W`` to every weight
    matrix (biases are not decayed), i.e. the gradient of ``wd/2 ||W||^2``.
    """
    if cache.get("version") != params.version:
        raise StaleCache("cache was produced before the last parameter update")
    cfg = params.config
    dt = np.dtype(cfg.dtype)
    n = cache["n"]
    feat = cfg.channels[-1]
    grads = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    dh = np.zeros((n, feat), dt)

    if d_illum is not None and "illum" in cache:
        hi, mask, y, est, sp_norm = cache["illum"]
        d_sp = _normalize_backward(np.asarray(d_illum, dt), est, sp_norm)
        dy = d_sp * _sigmoid(y)
        grads["illum_w"] += hi.T @ dy
        grads["illum_b"] += dy.sum(axis=0)
        dhi = dy @ params["illum_w"].T
        if mask is not None:
            dhi = dhi * mask
        np.add.at(dh, cache["illum_idx"], dhi)

    if d_proj is not None and "proj" in cache:
        acts, z, z_norm = cache["proj"]
        g = _normalize_backward(np.asarray(d_proj, dt), z, z_norm)
        for j in reversed(range(params.n_proj)):
            if j < params.n_proj - 1:
                g = g * (acts[j + 1] > 0)
            grads[f"proj{j}_w"] += acts[j].T @ g
            grads[f"proj{j}_b"] += g.sum(axis=0)
            g = g @ params[f"proj{j}_w"].T
        np.add.at(dh, cache["proj_idx"], g)

    _, ho, wo, c = cache["last_shape"]
    da = np.broadcast_to((dh / (ho * wo))[:, None, None, :], cache["last_shape"])
    for i in reversed(range(params.n_conv)):
        cols, x_shape, out_shape, pre = cache["layers"][i]
        dpre = da.reshape(pre.shape) * (pre > 0)
        grads[f"conv{i}_w"] += cols.T @ dpre
        grads[f"conv{i}_b"] += dpre.sum(axis=0)
        if i > 0:
            da = _col2im(dpre @ params[f"conv{i}_w"].T, x_shape, out_shape)

    if weight_decay:
        for k, v in params.tensors.items():
            if k.endswith("_w"):
                grads[k] += weight_decay * v
    return grads


def weight_penalty(params: ModelParams, weight_decay: float) -> float:
    return 0.5 * weight_decay * sum(float(np.sum(v.astype(np.float64) ** 2))
                                    for k, v in params.tensors.items() if k.endswith("_w"))


def illuminant_loss(est, gt, eps: float = 1e-7):
    """Angular error in radians and its gradient w.r.t. ``est``.

    Works on a single 3-vector or row-wise on Nx3 arrays (then the loss is an
    array).  When the cosine is within ``eps`` of +-1 the arccos derivative is
    unbounded; the gradient is set to zero there.
    """
    est = np.asarray(est)
    gt = np.asarray(gt, dtype=np.float64)
    single = est.ndim == 1
    e = np.atleast_2d(est).astype(np.float64)
    g = np.atleast_2d(gt)
    ne = np.linalg.norm(e, axis=1, keepdims=True)
    ng = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(ne == 0) or np.any(ng == 0):
        raise ValueError("angular loss undefined for a zero vector")
    eh, gh = e / ne, g / ng
    cos = np.sum(eh * gh, axis=1, keepdims=True)
    loss = np.arccos(np.clip(cos, -1.0, 1.0))
    active = np.abs(cos) < 1 - eps
    dcos = (gh - cos * eh) / ne
    grad = np.where(active, -dcos / np.sqrt(np.maximum(1 - cos**2, eps)), 0.0)
    grad = grad.astype(est.dtype if est.dtype.kind == "f" else np.float64)
    if single:
        return float(loss[0, 0]), grad[0]
    return loss[:, 0], grad


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.tensors.items()},
                   {k: np.zeros_like(v) for k, v in params.tensors.items()})


def adam_step(params: ModelParams, grads: dict, state: AdamState, lr: float = 3e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update; bumps ``params.version``."""
    state.t += 1
    c1 = 1 - beta1**state.t
    c2 = 1 - beta2**state.t
    for k, p in params.tensors.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        step = lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)
        p -= step.astype(p.dtype, copy=False)
    params.version += 1
    return params, state


def predict(params: ModelParams, images, batch_size: int = 64) -> np.ndarray:
    """Unit illuminant estimates (eval mode) for an NHWC stack."""
    images = np.asarray(images)
    out = []
    for s in range(0, len(images), batch_size):
        r = forward(params, images[s:s + batch_size], train_mode=False, proj_idx=[])
        out.append(r.illuminant.astype(np.float64))
    return np.concatenate(out)


def mean_angular_error(params: ModelParams, images, gts) -> float:
    return float(np.mean(angular_errors_degrees(predict(params, images), gts)))
