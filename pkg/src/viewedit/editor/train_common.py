"""Shared training-loop helpers for the three editor stages."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import NumericError
from ..optim import AdamW


@dataclass
class TrainConfig:
    steps: int = 1000
    batch: int = 8
    lr: float = 1e-3
    lr_min_frac: float = 0.05     # cosine decay floor as a fraction of lr
    warmup: int = 50
    weight_decay: float = 0.01
    seed: int = 0
    log_path: str | None = None
    log_every: int = 20


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.steps <= 1:
        return cfg.lr
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / max(cfg.warmup, 1)
    frac = (step - cfg.warmup) / max(cfg.steps - cfg.warmup, 1)
    lo = cfg.lr * cfg.lr_min_frac
    return lo + 0.5 * (cfg.lr - lo) * (1 + np.cos(np.pi * min(frac, 1.0)))


class TrainLogger:
    def __init__(self, path: str | None, every: int):
        self.f = open(Path(path), "w") if path else None
        self.every = every
        self.t0 = time.monotonic()

    def log(self, step: int, loss: float, lr: float) -> None:
        if self.f and (step % self.every == 0):
            self.f.write(json.dumps({"step": step, "loss": loss, "lr": lr,
                                     "wallclock": time.monotonic() - self.t0}) + "\n")
            self.f.flush()

    def close(self) -> None:
        if self.f:
            self.f.close()


def run_loop(opt: AdamW, cfg: TrainConfig, step_fn) -> list[float]:
    """Generic loop: step_fn(rng) -> loss Tensor; returns loss history."""
    rng = np.random.default_rng(np.random.SeedSequence((0x7124, cfg.seed)))
    logger = TrainLogger(cfg.log_path, cfg.log_every)
    losses: list[float] = []
    try:
        for step in range(cfg.steps):
            opt.lr = lr_at(step, cfg)
            loss = step_fn(rng)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise NumericError(f"non-finite training loss at step {step}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            losses.append(lv)
            logger.log(step, lv, opt.lr)
    finally:
        logger.close()
    return losses


def smoothed(xs, window: int):
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) < window:
        return xs.copy()
    c = np.cumsum(np.concatenate([[0.0], xs]))
    return (c[window:] - c[:-window]) / window
