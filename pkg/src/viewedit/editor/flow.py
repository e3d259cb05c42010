"""Linear-path flow matching: interpolation, loss, and Euler sampling.

Convention: z_t = (1-t) z0 + t z1 with z0 noise and z1 the target patch
tokens; the supervised velocity is z0 - z1, so sampling integrates
z <- z - dt * v from t=0 (pure noise) to t=1.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ShapeError
from ..imaging import patchify, unpatchify
from .model import EditorModel, Hooks


def fm_interpolate(z0: np.ndarray, z1: np.ndarray, t) -> np.ndarray:
    """Exact linear interpolant; t may be scalar or per-batch (B,)."""
    if z0.shape != z1.shape:
        raise ShapeError(f"fm_interpolate: shapes {z0.shape} vs {z1.shape}")
    t = np.asarray(t, dtype=z0.dtype)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError(f"t must lie in [0, 1], got range "
                         f"[{t.min():.4g}, {t.max():.4g}]")
    while t.ndim < z0.ndim:
        t = t[..., None]
    return (1 - t) * z0 + t * z1


def fm_loss(v_pred: Tensor, z0: np.ndarray, z1: np.ndarray) -> Tensor:
    """Mean squared error against the velocity target z0 - z1."""
    if v_pred.shape != z0.shape or z0.shape != z1.shape:
        raise ShapeError(f"fm_loss: shapes {v_pred.shape}, {z0.shape}, {z1.shape}")
    target = Tensor(np.asarray(z0 - z1, dtype=v_pred.data.dtype))
    diff = ad.sub(v_pred, target)
    return ad.mean(ad.mul(diff, diff))


def encode_image(img: np.ndarray, patch: int, dtype=np.float32) -> np.ndarray:
    return patchify(img, patch).astype(dtype)


def sample(model: EditorModel, cond_img: np.ndarray, prompt_id: int,
           rng: np.random.Generator, steps: int | None = None,
           hook_provider=None, velocity_fn=None) -> np.ndarray:
    """Euler-integrate the learned velocity field into an edited image.

    hook_provider(z, t) -> Hooks is called every step because structural
    residuals depend on the current noisy latent. velocity_fn(z, t) overrides
    the model call entirely (sampler-exactness tests use the analytic field).
    """
    cfg = model.cfg
    K = steps if steps is not None else cfg.flow_steps
    if K < 1:
        raise ValueError(f"need at least one sampler step, got {K}")
    B = cond_img.shape[0] if cond_img.ndim == 4 else 1
    if cond_img.ndim == 3:
        cond_img = cond_img[None]
    z = rng.standard_normal((B, cfg.n_image_tokens, cfg.d_latent)).astype(model.dtype)
    cond_tokens = model.embed_cond_tokens(cond_img) if velocity_fn is None else None
    prompt_ids = np.full(B, prompt_id, dtype=np.int64)
    dt = 1.0 / K
    for k in range(K):
        t = np.full(B, k * dt, dtype=np.float64)
        if velocity_fn is not None:
            v = velocity_fn(z, t)
        else:
            hooks = hook_provider(z, t) if hook_provider is not None else None
            v = model.forward(z, cond_img, prompt_ids, t, hooks=hooks,
                              cond_tokens=cond_tokens).data
        z = z - dt * v.astype(z.dtype)
    imgs = np.stack([
        np.clip(unpatchify(z[b].astype(np.float64), cfg.patch,
                           cfg.image_size, cfg.image_size), 0.0, 1.0)
        for b in range(B)])
    return imgs if B > 1 else imgs[0]
