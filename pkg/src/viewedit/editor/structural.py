"""Projected-cue structural conditioning path.

A shallow stack of the same transformer blocks, fed the same token layout as
the backbone plus the warped previous-view cue (its validity mask enters as
a fourth channel of the patch embedding). Each block output passes through a
zero-initialized projection, so a freshly attached path leaves the backbone
bit-identical. Blocks and the condition embedder start as copies of the
(pretrained) backbone's first blocks.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import NumericError, ShapeError
from ..imaging import patchify
from ..optim import AdamW
from ..warp import ProjectedCue
from .flow import fm_interpolate, fm_loss
from .model import EditorModel, Hooks, _linear, init_block_params
from .train_common import TrainConfig, run_loop

STRUCT_PREFIX = "struct."


class StructuralPath:
    """Owns the struct.* parameters inside the shared model dict."""

    def __init__(self, model: EditorModel, seed: int = 0, attach: bool = True):
        self.model = model
        self.cfg = model.cfg
        if attach and not any(k.startswith(STRUCT_PREFIX) for k in model.params):
            self._attach(seed)

    def _attach(self, seed: int) -> None:
        cfg, model = self.cfg, self.model
        dtype = model.dtype
        rng = np.random.default_rng(np.random.SeedSequence((0x57C7, seed)))
        p: dict[str, np.ndarray] = {}
        # condition embedder starts from the backbone's; cue embedder is new
        p["struct.embed_cond.w"] = model.params["backbone.embed_cond.w"].data.copy()
        p["struct.embed_cond.b"] = model.params["backbone.embed_cond.b"].data.copy()
        d_cue = 4 * cfg.patch * cfg.patch
        p["struct.embed_cue.w"] = (rng.standard_normal((d_cue, cfg.width))
                                   / np.sqrt(d_cue)).astype(dtype)
        p["struct.embed_cue.b"] = np.zeros(cfg.width, dtype=dtype)
        for k in range(cfg.guidance_depth):
            blk = init_block_params(rng, f"struct.blocks.{k}", cfg.width,
                                    cfg.mlp_ratio, dtype)
            # initialize from the backbone's first blocks
            for name in blk:
                src = name.replace(f"struct.blocks.{k}", f"backbone.blocks.{k}")
                blk[name] = model.params[src].data.copy()
            p.update(blk)
            p[f"struct.proj.{k}.w"] = np.zeros((cfg.width, cfg.width), dtype=dtype)
            p[f"struct.proj.{k}.b"] = np.zeros(cfg.width, dtype=dtype)
        for name, arr in p.items():
            model.params[name] = Tensor(arr, requires_grad=False)

    # -- forward ---------------------------------------------------------------

    def cue_tokens(self, cond_img: np.ndarray, cue: ProjectedCue | None) -> Tensor:
        """Condition+cue patch embedding in the structural path's own space."""
        cfg, model = self.cfg, self.model
        B = cond_img.shape[0]
        if cue is None:
            cue_arr = np.zeros((B, cfg.image_size, cfg.image_size, 4))
        else:
            img, mask = cue.image, cue.mask
            if img.ndim == 3:
                img, mask = img[None], mask[None]
            if img.shape[1:3] != (cfg.image_size, cfg.image_size):
                raise ShapeError(f"cue resolution {img.shape[1:3]} does not match "
                                 f"model resolution {cfg.image_size}")
            cue_arr = np.concatenate([img, mask[..., None].astype(img.dtype)], axis=-1)
        cond_toks = np.stack([patchify(im, cfg.patch) for im in cond_img])
        cue_toks = np.stack([patchify(cu, cfg.patch) for cu in cue_arr])
        emb = _linear(Tensor(cond_toks.astype(model.dtype)),
                      model.params["struct.embed_cond.w"],
                      model.params["struct.embed_cond.b"])
        emb = ad.add(emb, _linear(Tensor(cue_toks.astype(model.dtype)),
                                  model.params["struct.embed_cue.w"],
                                  model.params["struct.embed_cue.b"]))
        return ad.add(emb, model.params["backbone.pos_cond"])

    def forward(self, z_t, cond_img: np.ndarray, prompt_ids, t,
                cue: ProjectedCue | None,
                cond_tokens: Tensor | None = None) -> list[Tensor]:
        """M residual features, one per guidance block, zero at fresh init."""
        model, cfg = self.model, self.cfg
        if cond_tokens is None:
            cond_tokens = self.cue_tokens(cond_img, cue)
        x = model.assemble_tokens(z_t, cond_tokens, prompt_ids, t)
        feats: list[Tensor] = []
        for k in range(cfg.guidance_depth):
            x = model._block(x, f"struct.blocks.{k}", layer=-1, hooks=None)
            feats.append(_linear(x, model.params[f"struct.proj.{k}.w"],
                                 model.params[f"struct.proj.{k}.b"]))
        return feats


def inject_index(i: int, r: int, m: int) -> int:
    """Feature slot for backbone block i at interval r; validated at config
    time so it can never overflow at runtime."""
    k = i // r
    if k >= m:
        raise ShapeError(f"block {i} maps to feature {k} >= M={m}")
    return k


def param_checksums(params: dict[str, Tensor], prefix: str) -> dict[str, bytes]:
    import hashlib
    return {k: hashlib.sha256(v.data.tobytes()).digest()
            for k, v in params.items() if k.startswith(prefix)}


def _pair_training_arrays(samples, cfg, dtype):
    """Each pair yields two directed examples: edit the second view given the
    first view's warped edit, and the mirror."""
    conds, targets, cues_img, cues_mask, prompts = [], [], [], [], []
    for s in samples:
        for cond, tgt, cue in ((s.i_y, s.edit_y, s.p_xy), (s.i_x, s.edit_x, s.p_yx)):
            conds.append(cond)
            targets.append(patchify(tgt, cfg.patch))
            cues_img.append(cue.image)
            cues_mask.append(cue.mask)
            prompts.append(s.instruction.vocab_index)
    return (np.asarray(conds, dtype=dtype), np.asarray(targets, dtype=dtype),
            np.asarray(cues_img, dtype=dtype),
            np.asarray(cues_mask, dtype=bool), np.asarray(prompts, dtype=np.int64))


def train_stage1(model: EditorModel, path: StructuralPath, samples,
                 cfg: TrainConfig) -> list[float]:
    """Train struct.* only, backbone frozen; aborts if the backbone moves."""
    model.set_trainable((STRUCT_PREFIX,))
    params = [v for k, v in sorted(model.params.items()) if v.requires_grad]
    if not params:
        raise ValueError("structural path has no parameters attached")
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    conds, targets, cues_img, cues_mask, prompts = _pair_training_arrays(
        samples, model.cfg, model.dtype)
    before = param_checksums(model.params, "backbone.")
    n = len(conds)

    def step(rng: np.random.Generator):
        idx = rng.integers(0, n, size=cfg.batch)
        z1 = targets[idx]
        z0 = rng.standard_normal(z1.shape).astype(model.dtype)
        t = rng.uniform(0.0, 1.0, size=cfg.batch)
        z_t = fm_interpolate(z0, z1, t.astype(model.dtype))
        cue = ProjectedCue(cues_img[idx], cues_mask[idx])
        ct = path.cue_tokens(conds[idx], cue)
        feats = path.forward(z_t, conds[idx], prompts[idx], t, None, cond_tokens=ct)
        v = model.forward(z_t, conds[idx], prompts[idx], t,
                          hooks=Hooks(residuals=feats))
        return fm_loss(v, z0, z1)

    losses = run_loop(opt, cfg, step)
    after = param_checksums(model.params, "backbone.")
    if before != after:
        raise NumericError("backbone parameters changed during stage-1 training")
    return losses
