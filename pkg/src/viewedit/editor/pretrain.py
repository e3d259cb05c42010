"""Backbone pretraining on single-image edit triplets (flow matching)."""

from __future__ import annotations

import numpy as np

from ..imaging import patchify
from ..optim import AdamW
from .flow import fm_interpolate, fm_loss
from .model import EditorModel
from .train_common import TrainConfig, run_loop


def _patch_all(images: np.ndarray, patch: int, dtype) -> np.ndarray:
    return np.stack([patchify(im, patch) for im in images]).astype(dtype)


def pretrain_backbone(model: EditorModel, images: np.ndarray,
                      prompt_idx: np.ndarray, targets: np.ndarray,
                      cfg: TrainConfig) -> list[float]:
    """Trains every backbone.* parameter; returns the loss history."""
    model.set_trainable(("backbone.",))
    params = [v for k, v in sorted(model.params.items()) if v.requires_grad]
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    z1_all = _patch_all(targets, model.cfg.patch, model.dtype)
    images = images.astype(model.dtype)
    n = len(images)

    def step(rng: np.random.Generator):
        idx = rng.integers(0, n, size=cfg.batch)
        z1 = z1_all[idx]
        z0 = rng.standard_normal(z1.shape).astype(model.dtype)
        t = rng.uniform(0.0, 1.0, size=cfg.batch)
        z_t = fm_interpolate(z0, z1, t.astype(model.dtype))
        v = model.forward(z_t, images[idx], prompt_idx[idx], t)
        return fm_loss(v, z0, z1)

    return run_loop(opt, cfg, step)
