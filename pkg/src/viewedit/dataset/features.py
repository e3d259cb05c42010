"""Hand-crafted global/local image features for pair-quality filtering.

Per cell of a 16x16 grid: centered mean RGB, RGB standard deviation, and an
8-bin unsigned gradient-orientation histogram of luminance, giving a 14-dim
raw descriptor lifted to 32 dims by a fixed seeded orthonormal projection
and L2-normalized. Centering the color statistics makes the cosine drop
under recolor edits; unsigned orientations keep the texture part stable
under the small view changes the filter must tolerate. The global feature
pools descriptor mean and spread into 64 dims the same way. Everything is
deterministic; all outputs are unit vectors, which is the only contract the
downstream filter needs.
"""

from __future__ import annotations

import numpy as np

PATCH_GRID = 16
LOCAL_DIM = 32
GLOBAL_DIM = 64
EPS = 1e-8

_W_COLOR = 1.6      # centered mean RGB
_W_STD = 0.8        # per-cell RGB spread
_W_HIST = 0.2       # unsigned gradient-orientation histogram

_LUMA = np.array([0.299, 0.587, 0.114])


def _orthonormal_lift(d_in: int, d_out: int, seed: int) -> np.ndarray:
    """(d_out, d_in) with orthonormal columns; preserves inner products."""
    rng = np.random.default_rng(np.random.SeedSequence((0xFEA7, seed)))
    A = rng.standard_normal((d_out, d_in))
    Q, _ = np.linalg.qr(A)
    return Q[:, :d_in]


_LIFT_LOCAL = None
_LIFT_GLOBAL = None


def _lifts():
    global _LIFT_LOCAL, _LIFT_GLOBAL
    if _LIFT_LOCAL is None:
        _LIFT_LOCAL = _orthonormal_lift(14, LOCAL_DIM, seed=1)
        _LIFT_GLOBAL = _orthonormal_lift(28, GLOBAL_DIM, seed=2)
    return _LIFT_LOCAL, _LIFT_GLOBAL


def _cell_pool(x: np.ndarray, grid: int) -> np.ndarray:
    """Mean-pool (H, W, ...) into (grid, grid, ...) cells."""
    H, W = x.shape[:2]
    ch, cw = H // grid, W // grid
    v = x[:grid * ch, :grid * cw].reshape(grid, ch, grid, cw, *x.shape[2:])
    return v.mean(axis=(1, 3))


def raw_descriptors(image: np.ndarray) -> np.ndarray:
    """(grid*grid, 14) raw per-cell descriptors before lifting."""
    H, W = image.shape[:2]
    if H % PATCH_GRID or W % PATCH_GRID:
        raise ValueError(f"image {H}x{W} not divisible by the {PATCH_GRID} grid")
    g = PATCH_GRID

    mean_rgb = _cell_pool(image, g)
    sq = _cell_pool(image * image, g)
    std_rgb = np.sqrt(np.maximum(sq - mean_rgb ** 2, 0.0))

    luma = image @ _LUMA
    gy, gx = np.gradient(luma)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), np.pi)            # unsigned, [0, pi)
    bins = np.minimum((ori / np.pi * 8).astype(int), 7)
    onehot = np.zeros((H, W, 8))
    iy, ix = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    onehot[iy, ix, bins] = mag
    hist = _cell_pool(onehot, g)
    hist = hist / (np.linalg.norm(hist, axis=-1, keepdims=True) + EPS)

    raw = np.concatenate([_W_COLOR * (mean_rgb - 0.5), _W_STD * std_rgb,
                          _W_HIST * hist], axis=-1)
    return raw.reshape(g * g, 14)


def extract_features(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (f_g (64,), f_l (256, 32)), all rows unit-norm."""
    raw = raw_descriptors(image)
    lift_l, lift_g = _lifts()
    f_l = raw @ lift_l.T
    f_l = f_l / (np.linalg.norm(f_l, axis=-1, keepdims=True) + EPS)

    pooled = np.concatenate([raw.mean(axis=0), np.sqrt(raw.var(axis=0))])
    f_g = lift_g @ pooled
    f_g = f_g / (np.linalg.norm(f_g) + EPS)
    return f_g, f_l
