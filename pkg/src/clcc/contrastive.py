"""InfoNCE over cosine similarities and the four-pair contrastive objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NceConfig:
    temperature: float = 0.87
    n_negatives: int = 12

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.n_negatives < 1:
            raise ValueError("need at least one negative")


def cosine_similarity(z_i, z_j) -> float:
    return float(np.dot(z_i, z_j))


def info_nce(s_pos: float, s_negs, tau: float):
    """Cross-entropy of picking the positive among ``1 + len(s_negs)`` scores.

    Returns ``(loss, d_loss/d_s_pos, d_loss/d_s_negs)``.
    """
    s_negs = np.asarray(s_negs, dtype=np.float64).reshape(-1)
    if s_negs.size == 0:
        raise ValueError("info_nce needs at least one negative")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    logits = np.concatenate(([s_pos], s_negs)) / tau
    shift = logits.max()
    e = np.exp(logits - shift)
    total = e.sum()
    loss = float(np.log(total) + shift - logits[0])
    p = e / total
    return loss, float((p[0] - 1.0) / tau), p[1:] / tau


def clcc_loss(z_xa, z_xa_pos, z_ya_pos, z_xc_neg, z_yc_neg, extra_negs=(), cfg: NceConfig = NceConfig()):
    """Sum of the four InfoNCE terms for one anchor.

    Each term pairs the anchor with one positive (same-scene ``z_xa_pos`` or
    cross-scene ``z_ya_pos``) against one designated negative (``z_yc_neg`` or
    ``z_xc_neg``) plus the shared ``extra_negs``; at most ``n_negatives - 1``
    extras are used, in the order given.

    Returns ``(loss, grads)`` where ``grads`` is a dict with keys
    ``xa, xa_pos, ya_pos, xc_neg, yc_neg`` and ``extra`` (array, one row per
    extra negative actually used).
    """
    z = {k: np.asarray(v, dtype=np.float64) for k, v in
         dict(xa=z_xa, xa_pos=z_xa_pos, ya_pos=z_ya_pos, xc_neg=z_xc_neg, yc_neg=z_yc_neg).items()}
    d = z["xa"].shape
    if len(d) != 1 or any(v.shape != d for v in z.values()):
        raise ValueError("projections must be vectors of equal dimension")
    extra = np.asarray(extra_negs, dtype=np.float64).reshape(-1, d[0]) if len(extra_negs) else np.zeros((0, d[0]))
    if len(extra_negs) and extra.shape[1] != d[0]:
        raise ValueError("extra negatives have the wrong dimension")
    extra = extra[:cfg.n_negatives - 1]

    grads = {k: np.zeros(d) for k in z}
    g_extra = np.zeros_like(extra)
    s_extra = extra @ z["xa"]
    total = 0.0
    for pos in ("xa_pos", "ya_pos"):
        for neg in ("yc_neg", "xc_neg"):
            s_pos = z["xa"] @ z[pos]
            s_negs = np.concatenate(([z["xa"] @ z[neg]], s_extra))
            loss, g_pos, g_negs = info_nce(s_pos, s_negs, cfg.temperature)
            total += loss
            grads["xa"] += g_pos * z[pos] + g_negs[0] * z[neg] + g_negs[1:] @ extra
            grads[pos] += g_pos * z["xa"]
            grads[neg] += g_negs[0] * z["xa"]
            g_extra += np.outer(g_negs[1:], z["xa"])
    grads["extra"] = g_extra
    return total, grads
