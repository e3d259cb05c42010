"""Reference-feature attention path for propagating edited appearance.

The previous edited view is encoded by the frozen backbone patch embedder
(plus its positional table) into reference tokens F; on the configured
middle blocks the self-attention output gains alpha * softmax(Q K'^T) V'
with K' = F W_k and V' = F W_v. Both projections start at zero, so a fresh
path reproduces the stage-1 model exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import NumericError, ShapeError
from ..imaging import patchify
from ..optim import AdamW
from ..warp import ProjectedCue
from .flow import fm_interpolate, fm_loss
from .model import EditorModel, Hooks, _linear
from .structural import StructuralPath, _pair_training_arrays, param_checksums
from .train_common import TrainConfig, run_loop

SEM_PREFIX = "sem."


def encode_reference(model: EditorModel, image: np.ndarray) -> Tensor:
    """Frozen patch-embedding + positional encoding of an edited reference."""
    cfg = model.cfg
    if image.ndim == 3:
        image = image[None]
    if image.shape[1:] != (cfg.image_size, cfg.image_size, 3):
        raise ShapeError(f"reference image {image.shape} does not match model "
                         f"resolution {cfg.image_size}")
    toks = np.stack([patchify(im, cfg.patch) for im in image]).astype(model.dtype)
    emb = _linear(Tensor(toks), model.params["backbone.embed_cond.w"],
                  model.params["backbone.embed_cond.b"])
    return ad.add(emb, model.params["backbone.pos_cond"])


def ref_attention(q: Tensor, F: Tensor, wk: Tensor, wv: Tensor,
                  heads: int) -> Tensor:
    """Scaled dot-product attention of current queries against reference
    keys/values only. q: (B, h, T, dh); F: (B, Tr, d)."""
    B, Tr, d = F.shape
    dh = d // heads
    kr = _split_heads(ad.matmul(F, wk), heads)
    vr = _split_heads(ad.matmul(F, wv), heads)
    att = ad.softmax(ad.matmul(ad.scale(q, 1.0 / math.sqrt(dh)),
                               ad.transpose(kr, (0, 1, 3, 2))))
    return ad.matmul(att, vr)


def augment(attn_out: Tensor, attn_ref: Tensor, alpha: float) -> Tensor:
    """Residual reference term on the attention output."""
    if attn_out.shape != attn_ref.shape:
        raise ShapeError(f"augment: shapes {attn_out.shape} vs {attn_ref.shape}")
    if alpha == 0.0:
        return attn_out
    return ad.add(attn_out, ad.scale(attn_ref, alpha))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, T, d = x.shape
    return ad.transpose(ad.reshape(x, (B, T, heads, d // heads)), (0, 2, 1, 3))


class SemanticPath:
    """Owns sem.* parameters: per-layer zero-initialized K/V projections."""

    def __init__(self, model: EditorModel, attach: bool = True):
        self.model = model
        self.cfg = model.cfg
        if attach and not any(k.startswith(SEM_PREFIX) for k in model.params):
            d = self.cfg.width
            for l in self.cfg.semantic_set():
                model.params[f"sem.layers.{l}.wk"] = Tensor(
                    np.zeros((d, d), dtype=model.dtype), requires_grad=False)
                model.params[f"sem.layers.{l}.wv"] = Tensor(
                    np.zeros((d, d), dtype=model.dtype), requires_grad=False)

    def ref_kv(self, F: Tensor) -> dict:
        """Per-layer (K', V') head-split projections of the reference tokens."""
        out = {}
        for l in self.cfg.semantic_set():
            kr = _split_heads(ad.matmul(F, self.model.params[f"sem.layers.{l}.wk"]),
                              self.cfg.heads)
            vr = _split_heads(ad.matmul(F, self.model.params[f"sem.layers.{l}.wv"]),
                              self.cfg.heads)
            out[l] = (kr, vr)
        return out


def train_stage2(model: EditorModel, struct_path: StructuralPath,
                 sem_path: SemanticPath, samples, cfg: TrainConfig) -> list[float]:
    """Train sem.* only; backbone and structural path stay frozen (the
    structural path remains active in the forward pass)."""
    model.set_trainable((SEM_PREFIX,))
    params = [v for k, v in sorted(model.params.items()) if v.requires_grad]
    if not params:
        raise ValueError("semantic path has no parameters attached")
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    conds, targets, cues_img, cues_mask, prompts = _pair_training_arrays(
        samples, model.cfg, model.dtype)
    # references: the other view's edited image, aligned with the two
    # directed examples emitted per pair
    refs = []
    for s in samples:
        refs.append(s.edit_x)   # editing y, reference is edited x
        refs.append(s.edit_y)
    refs = np.asarray(refs, dtype=model.dtype)
    before_b = param_checksums(model.params, "backbone.")
    before_s = param_checksums(model.params, "struct.")
    n = len(conds)

    def step(rng: np.random.Generator):
        idx = rng.integers(0, n, size=cfg.batch)
        z1 = targets[idx]
        z0 = rng.standard_normal(z1.shape).astype(model.dtype)
        t = rng.uniform(0.0, 1.0, size=cfg.batch)
        z_t = fm_interpolate(z0, z1, t.astype(model.dtype))
        cue = ProjectedCue(cues_img[idx], cues_mask[idx])
        ct = struct_path.cue_tokens(conds[idx], cue)
        feats = struct_path.forward(z_t, conds[idx], prompts[idx], t, None,
                                    cond_tokens=ct)
        F = encode_reference(model, refs[idx])
        hooks = Hooks(residuals=feats, ref_kv=sem_path.ref_kv(F),
                      alpha=model.cfg.alpha)
        v = model.forward(z_t, conds[idx], prompts[idx], t, hooks=hooks)
        return fm_loss(v, z0, z1)

    losses = run_loop(opt, cfg, step)
    if param_checksums(model.params, "backbone.") != before_b:
        raise NumericError("backbone parameters changed during stage-2 training")
    if param_checksums(model.params, "struct.") != before_s:
        raise NumericError("structural-path parameters changed during stage-2 training")
    return losses
