"""Pair scoring and the multi-criteria consistency filter.

Checks run in a fixed order and the first violated one names the discard
reason: an edit that left either image too similar to its original is an
edit failure; then global and local cross-view similarities must clear
viewpoint-adaptive thresholds tau1 - g1(delta) and tau2 - g2(delta), where
g_i(d) = ((d / d_max)^p) * a_i grows with the viewpoint difference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import extract_features

KEEP = "keep"
EDIT_FAILURE = "edit_failure"
GLOBAL_INCONSISTENCY = "global_inconsistency"
LOCAL_INCONSISTENCY = "local_inconsistency"


@dataclass(frozen=True)
class PairScores:
    s0: float       # sim(I_x, edited I_x)
    s1: float       # sim(I_y, edited I_y)
    s_g: float      # global edited-pair similarity
    s_l: float      # local bidirectional patch-matching similarity
    delta: float    # viewpoint difference

    def as_dict(self) -> dict:
        return {"s0": self.s0, "s1": self.s1, "s_g": self.s_g,
                "s_l": self.s_l, "delta": self.delta}


@dataclass(frozen=True)
class FilterConfig:
    tau0: float = 0.97
    tau1: float = 0.93
    tau2: float = 0.90
    delta_max: float = 0.75
    g_exponent: float = 0.67
    g_scale1: float = 0.08
    g_scale2: float = 0.12

    def __post_init__(self):
        for name in ("tau0", "tau1", "tau2"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name}={v} outside (0, 1]")
        if self.delta_max <= 0:
            raise ValueError(f"delta_max={self.delta_max} must be positive")
        if self.g_exponent <= 0:
            raise ValueError(f"g_exponent={self.g_exponent} must be positive")

    def g1(self, delta: float) -> float:
        return (delta / self.delta_max) ** self.g_exponent * self.g_scale1

    def g2(self, delta: float) -> float:
        return (delta / self.delta_max) ** self.g_exponent * self.g_scale2


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b))  # features are unit vectors


def local_match_score(fl_a: np.ndarray, fl_b: np.ndarray) -> float:
    """Symmetric bidirectional best-match mean over patch tokens."""
    sims = fl_a @ fl_b.T
    return 0.5 * (float(sims.max(axis=1).mean()) + float(sims.max(axis=0).mean()))


def score_pair(img_x: np.ndarray, img_y: np.ndarray,
               edit_x: np.ndarray, edit_y: np.ndarray, delta: float) -> PairScores:
    fg_x, _ = extract_features(img_x)
    fg_y, _ = extract_features(img_y)
    fg_ex, fl_ex = extract_features(edit_x)
    fg_ey, fl_ey = extract_features(edit_y)
    return PairScores(
        s0=cosine(fg_x, fg_ex),
        s1=cosine(fg_y, fg_ey),
        s_g=cosine(fg_ex, fg_ey),
        s_l=local_match_score(fl_ex, fl_ey),
        delta=float(delta),
    )


def filter_pair(scores: PairScores, cfg: FilterConfig) -> str:
    """KEEP or the first violated criterion's discard reason."""
    if scores.delta > cfg.delta_max:
        raise ValueError(f"delta {scores.delta} exceeds delta_max {cfg.delta_max}; "
                         "pairs must be rejected at sampling time")
    if max(scores.s0, scores.s1) > cfg.tau0:
        return EDIT_FAILURE
    if not scores.s_g > cfg.tau1 - cfg.g1(scores.delta):
        return GLOBAL_INCONSISTENCY
    if not scores.s_l > cfg.tau2 - cfg.g2(scores.delta):
        return LOCAL_INCONSISTENCY
    return KEEP
