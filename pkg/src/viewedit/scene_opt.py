"""Fitting a Gaussian scene to edited target views.

Optimizes position, opacity and color with Adam (opacity through a logit so
it stays in (0,1); scale and rotation stay frozen — appearance edits dominate
at this scale and frozen geometry keeps the problem well conditioned). The
objective is mean L1 over all views; gradients come from the analytic
renderer backward pass, accumulated over every camera per iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .gaussians import Camera, GaussianScene, render, render_backward
from .optim import OptimizerState, adamw_step

_OP_EPS = 1e-5   # opacity kept in [eps, 1-eps] so the scene stays valid


@dataclass
class SceneOptConfig:
    iters: int = 250
    lr_position: float = 0.002
    lr_opacity: float = 0.05
    lr_color: float = 0.025
    loss: str = "l1"
    divergence_factor: float = 10.0
    log_path: str | None = None


@dataclass
class SceneOptResult:
    scene: GaussianScene
    losses: list[float] = field(default_factory=list)
    diverged: bool = False
    message: str = ""


def _logit(o: np.ndarray) -> np.ndarray:
    o = np.clip(o, _OP_EPS, 1 - _OP_EPS)
    return np.log(o / (1 - o))


def _loss_and_pixel_grad(rendered: np.ndarray, target: np.ndarray, kind: str,
                         scale: float):
    diff = rendered - target
    if kind == "l1":
        return float(np.abs(diff).sum()) * scale, np.sign(diff) * scale
    if kind == "l2":
        return float((diff * diff).sum()) * scale, 2.0 * diff * scale
    raise ValueError(f"unknown loss {kind!r}")


def optimize_scene(scene: GaussianScene, cams: list[Camera],
                   targets: list[np.ndarray],
                   config: SceneOptConfig | None = None) -> SceneOptResult:
    cfg = config or SceneOptConfig()
    if len(cams) != len(targets):
        raise ShapeError(f"{len(cams)} cameras but {len(targets)} target images")
    for cam, tgt in zip(cams, targets):
        if tgt.shape != (cam.height, cam.width, 3):
            raise ShapeError(f"target {tgt.shape} does not match camera "
                             f"{(cam.height, cam.width, 3)}")

    work = scene.copy()
    positions = work.positions
    op_logit = _logit(work.opacities)
    colors = work.colors
    lo, hi = work.bounds
    scale = 1.0 / sum(t.size for t in targets)

    # Adam is invariant to gradient scale, so per-group rates need own states
    opt_pos = OptimizerState([positions], lr=cfg.lr_position)
    opt_op = OptimizerState([op_logit], lr=cfg.lr_opacity)
    opt_col = OptimizerState([colors], lr=cfg.lr_color)

    def snapshot() -> GaussianScene:
        return GaussianScene(positions.copy(), work.scales.copy(),
                             work.rotations.copy(),
                             1.0 / (1.0 + np.exp(-op_logit)),
                             np.clip(colors, 0.0, 1.0),
                             work.object_ids.copy(), work.bounds.copy())

    losses: list[float] = []
    stable = snapshot()
    log_f = open(Path(cfg.log_path), "w") if cfg.log_path else None
    try:
        initial = None
        for it in range(cfg.iters):
            cur = snapshot()
            total = 0.0
            g_pos = np.zeros_like(positions)
            g_op = np.zeros_like(op_logit)
            g_col = np.zeros_like(colors)
            for cam, tgt in zip(cams, targets):
                out = render(cur, cam)
                l, gpix = _loss_and_pixel_grad(out.color, tgt, cfg.loss, scale)
                total += l
                grads = render_backward(cur, cam, gpix)
                g_pos += grads["position"]
                g_op += grads["opacity"] * cur.opacities * (1 - cur.opacities)
                g_col += grads["color"]
            losses.append(total)
            if log_f:
                log_f.write(json.dumps({"iter": it, "loss": total}) + "\n")
            if initial is None:
                initial = total
            if total > cfg.divergence_factor * max(initial, 1e-12):
                return SceneOptResult(stable, losses, diverged=True,
                                      message=f"loss {total:.4g} exceeded "
                                              f"{cfg.divergence_factor}x initial "
                                              f"{initial:.4g} at iter {it}")
            stable = cur
            adamw_step([positions], [g_pos], opt_pos)
            adamw_step([op_logit], [g_op], opt_op)
            adamw_step([colors], [g_col], opt_col)
            np.clip(positions, lo, hi, out=positions)
            np.clip(colors, 0.0, 1.0, out=colors)
    finally:
        if log_f:
            log_f.close()
    return SceneOptResult(snapshot(), losses)
