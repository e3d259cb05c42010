"""Patch-token diffusion transformer operating directly on pixels.

Token sequence: [noisy-latent patches | condition-image patches | prompt
token | timestep token], full self-attention, pre-LN blocks. Two hook points
expose the consistency paths: a per-block residual added to hidden states
after each block, and a reference key/value term added to the attention
output on a configured set of middle blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ConfigError, ShapeError
from ..imaging import patchify


@dataclass
class ArchitectureConfig:
    image_size: int = 64
    patch: int = 4
    width: int = 64               # model width d
    heads: int = 4
    depth: int = 12               # backbone blocks N
    guidance_depth: int = 2       # structural path blocks M
    semantic_layers: tuple = (3, 9)   # half-open block range for ref attention
    alpha: float = 0.4            # reference-attention scale
    flow_steps: int = 20
    vocab_size: int = 20
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.depth < self.guidance_depth or self.guidance_depth < 1:
            raise ConfigError(f"need depth >= guidance_depth >= 1, got "
                              f"{self.depth} and {self.guidance_depth}")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch:
            raise ConfigError(f"image {self.image_size} not divisible by patch {self.patch}")
        lo, hi = self.semantic_layers
        if not (0 <= lo <= hi <= self.depth):
            raise ConfigError(f"semantic layer range {self.semantic_layers} outside "
                              f"[0, {self.depth}]")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        # every block index must map to a structural feature slot
        if (self.depth - 1) // self.block_interval >= self.guidance_depth:
            raise ConfigError("block interval does not cover all blocks")

    @property
    def block_interval(self) -> int:
        """Injection interval r = ceil(N / M)."""
        return -(-self.depth // self.guidance_depth)

    @property
    def tokens_side(self) -> int:
        return self.image_size // self.patch

    @property
    def n_image_tokens(self) -> int:
        return self.tokens_side ** 2

    @property
    def d_latent(self) -> int:
        return 3 * self.patch * self.patch

    @property
    def n_tokens(self) -> int:
        return 2 * self.n_image_tokens + 2

    def semantic_set(self) -> range:
        return range(self.semantic_layers[0], self.semantic_layers[1])


@dataclass
class Hooks:
    """Conditioning attach points for a forward pass.

    residuals: M tensors (B, T, d) added after blocks by interval index.
    ref_kv: per-layer (K', V') tensors (B, h, Tr, dh) for reference attention.
    alpha: scale on the reference attention term.
    observer: callback(block_index, hidden ndarray) after each block.
    """
    residuals: Sequence[Tensor] | None = None
    ref_kv: dict | None = None
    alpha: float = 0.0
    observer: Callable | None = None


def _init_linear(rng, d_in, d_out, dtype, zero=False):
    if zero:
        w = np.zeros((d_in, d_out), dtype=dtype)
    else:
        w = (rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)).astype(dtype)
    return w, np.zeros(d_out, dtype=dtype)


def init_block_params(rng, prefix: str, d: int, mlp: int, dtype) -> dict:
    p = {}
    p[f"{prefix}.ln1.g"] = np.ones(d, dtype=dtype)
    p[f"{prefix}.ln1.b"] = np.zeros(d, dtype=dtype)
    p[f"{prefix}.qkv.w"], p[f"{prefix}.qkv.b"] = _init_linear(rng, d, 3 * d, dtype)
    p[f"{prefix}.proj.w"], p[f"{prefix}.proj.b"] = _init_linear(rng, d, d, dtype)
    p[f"{prefix}.ln2.g"] = np.ones(d, dtype=dtype)
    p[f"{prefix}.ln2.b"] = np.zeros(d, dtype=dtype)
    p[f"{prefix}.fc1.w"], p[f"{prefix}.fc1.b"] = _init_linear(rng, d, mlp * d, dtype)
    p[f"{prefix}.fc2.w"], p[f"{prefix}.fc2.b"] = _init_linear(rng, mlp * d, d, dtype)
    return p


def init_backbone_params(cfg: ArchitectureConfig, seed: int = 0,
                         dtype=np.float32) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence((0xB0DE, seed)))
    d, dl = cfg.width, cfg.d_latent
    p = {}
    p["backbone.embed_z.w"], p["backbone.embed_z.b"] = _init_linear(rng, dl, d, dtype)
    p["backbone.embed_cond.w"], p["backbone.embed_cond.b"] = _init_linear(rng, dl, d, dtype)
    p["backbone.pos_z"] = (rng.standard_normal((cfg.n_image_tokens, d)) * 0.02).astype(dtype)
    p["backbone.pos_cond"] = (rng.standard_normal((cfg.n_image_tokens, d)) * 0.02).astype(dtype)
    p["backbone.prompt.table"] = (rng.standard_normal((cfg.vocab_size, d)) * 0.2).astype(dtype)
    p["backbone.time.w"], p["backbone.time.b"] = _init_linear(rng, d, d, dtype)
    for i in range(cfg.depth):
        p.update(init_block_params(rng, f"backbone.blocks.{i}", d, cfg.mlp_ratio, dtype))
    p["backbone.out_ln.g"] = np.ones(d, dtype=dtype)
    p["backbone.out_ln.b"] = np.zeros(d, dtype=dtype)
    # zero-init head: the model starts as the zero velocity field
    p["backbone.head.w"], p["backbone.head.b"] = _init_linear(rng, d, dl, dtype, zero=True)
    return p


def _affine(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.mul(x, g), b)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def time_features(t: np.ndarray, d: int, dtype) -> np.ndarray:
    """Sinusoidal features of scalar times in [0, 1], shape (B, d)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = d // 2
    freqs = np.exp(np.linspace(0.0, math.log(1000.0), half))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


class EditorModel:
    """Backbone editor; parameters live in a flat name->Tensor dict."""

    def __init__(self, cfg: ArchitectureConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        if params is None:
            params = {k: Tensor(v, requires_grad=True)
                      for k, v in init_backbone_params(cfg, seed, dtype).items()}
        self.params = params

    # -- parameter management ------------------------------------------------

    def backbone_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("backbone.")}

    def set_trainable(self, prefixes: tuple[str, ...]) -> None:
        for k, v in self.params.items():
            rg = any(k.startswith(p) for p in prefixes)
            v.requires_grad = rg
            v._needs_grad = rg

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    # -- forward pieces --------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def embed_cond_tokens(self, cond_img: np.ndarray) -> Tensor:
        """Frozen-shape patch embedding + positional table for an image batch."""
        cfg = self.cfg
        B = cond_img.shape[0]
        if cond_img.shape[1:] != (cfg.image_size, cfg.image_size, 3):
            raise ShapeError(f"condition image batch {cond_img.shape} does not match "
                             f"model resolution {cfg.image_size}")
        toks = np.stack([patchify(im, cfg.patch) for im in cond_img]).astype(self.dtype)
        emb = _linear(Tensor(toks), self._p("backbone.embed_cond.w"),
                      self._p("backbone.embed_cond.b"))
        return ad.add(emb, self._p("backbone.pos_cond"))

    def _block(self, x: Tensor, prefix: str, layer: int, hooks: Hooks | None) -> Tensor:
        cfg = self.cfg
        B, T, d = x.shape
        h, dh = cfg.heads, cfg.width // cfg.heads
        ln1 = _affine(ad.layer_norm(x), self._p(f"{prefix}.ln1.g"),
                      self._p(f"{prefix}.ln1.b"))
        qkv = _linear(ln1, self._p(f"{prefix}.qkv.w"), self._p(f"{prefix}.qkv.b"))
        qkv = ad.transpose(ad.reshape(qkv, (B, T, 3, h, dh)), (2, 0, 3, 1, 4))
        q = ad.reshape(ad.slice_axis(qkv, 0, 0, 1), (B, h, T, dh))
        k = ad.reshape(ad.slice_axis(qkv, 0, 1, 2), (B, h, T, dh))
        v = ad.reshape(ad.slice_axis(qkv, 0, 2, 3), (B, h, T, dh))
        qs = ad.scale(q, 1.0 / math.sqrt(dh))
        att = ad.softmax(ad.matmul(qs, ad.transpose(k, (0, 1, 3, 2))))
        out = ad.matmul(att, v)                          # (B, h, T, dh)
        if (hooks is not None and hooks.ref_kv is not None
                and layer in hooks.ref_kv and hooks.alpha != 0.0):
            kr, vr = hooks.ref_kv[layer]                 # (B, h, Tr, dh)
            att_ref = ad.softmax(ad.matmul(qs, ad.transpose(kr, (0, 1, 3, 2))))
            out = ad.add(out, ad.scale(ad.matmul(att_ref, vr), hooks.alpha))
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, T, d))
        x = ad.add(x, _linear(out, self._p(f"{prefix}.proj.w"),
                              self._p(f"{prefix}.proj.b")))
        ln2 = _affine(ad.layer_norm(x), self._p(f"{prefix}.ln2.g"),
                      self._p(f"{prefix}.ln2.b"))
        mlp = _linear(ad.gelu(_linear(ln2, self._p(f"{prefix}.fc1.w"),
                                      self._p(f"{prefix}.fc1.b"))),
                      self._p(f"{prefix}.fc2.w"), self._p(f"{prefix}.fc2.b"))
        return ad.add(x, mlp)

    def assemble_tokens(self, z_t, cond_tokens: Tensor, prompt_ids, t) -> Tensor:
        cfg = self.cfg
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=self.dtype))
        B, Tz, dl = z_t.shape
        if Tz != cfg.n_image_tokens or dl != cfg.d_latent:
            raise ShapeError(f"latent tokens {z_t.shape} do not match config "
                             f"({cfg.n_image_tokens}, {cfg.d_latent})")
        z_tok = ad.add(_linear(z_t, self._p("backbone.embed_z.w"),
                               self._p("backbone.embed_z.b")),
                       self._p("backbone.pos_z"))
        prompt_ids = np.asarray(prompt_ids).reshape(-1)
        prompt = ad.reshape(ad.take_rows(self._p("backbone.prompt.table"), prompt_ids),
                            (B, 1, cfg.width))
        tf = Tensor(time_features(t, cfg.width, self.dtype))
        ttok = ad.reshape(_linear(tf, self._p("backbone.time.w"),
                                  self._p("backbone.time.b")), (B, 1, cfg.width))
        return ad.concatenate([z_tok, cond_tokens, prompt, ttok], axis=1)

    def forward(self, z_t, cond_img, prompt_ids, t, hooks: Hooks | None = None,
                cond_tokens: Tensor | None = None) -> Tensor:
        """Velocity prediction (B, n_image_tokens, d_latent)."""
        cfg = self.cfg
        if cond_tokens is None:
            cond_tokens = self.embed_cond_tokens(cond_img)
        x = self.assemble_tokens(z_t, cond_tokens, prompt_ids, t)
        if hooks is not None and hooks.residuals is not None:
            if len(hooks.residuals) != cfg.guidance_depth:
                raise ShapeError(f"expected {cfg.guidance_depth} residual features, "
                                 f"got {len(hooks.residuals)}")
            for rv in hooks.residuals:
                if rv.shape != x.shape:
                    raise ShapeError(f"residual feature {rv.shape} does not match "
                                     f"hidden state {x.shape}")
        r = cfg.block_interval
        for i in range(cfg.depth):
            x = self._block(x, f"backbone.blocks.{i}", i, hooks)
            if hooks is not None and hooks.residuals is not None:
                x = ad.add(x, hooks.residuals[i // r])
            if hooks is not None and hooks.observer is not None:
                hooks.observer(i, x.data)
        x = _affine(ad.layer_norm(x), self._p("backbone.out_ln.g"),
                    self._p("backbone.out_ln.b"))
        zs = ad.slice_axis(x, 1, 0, cfg.n_image_tokens)
        return _linear(zs, self._p("backbone.head.w"), self._p("backbone.head.b"))
