"""Cross-view geometry: relative poses, depth-driven backward warping, and
the scalar viewpoint-difference measure used for pair sampling and filtering.

Warping is backward: each valid target pixel is unprojected with the target
depth, moved into the source camera, and bilinearly sampled from the source
image. A pixel is valid when the projection lands in-frame on valid source
depth and passes a relative occlusion test against the sampled source depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .gaussians import Camera

OCC_EPS = 0.02  # relative occlusion tolerance: |z - D_src| < eps * (1 + z)


@dataclass
class RelativePose:
    """Maps source-camera coordinates to target-camera coordinates."""
    R: np.ndarray   # (3,3)
    t: np.ndarray   # (3,)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    def inverse(self) -> "RelativePose":
        return RelativePose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "RelativePose") -> "RelativePose":
        """self after other: maps via other, then self."""
        return RelativePose(self.R @ other.R, self.R @ other.t + self.t)


@dataclass
class ProjectedCue:
    image: np.ndarray   # (..., H, W, 3), zero where invalid
    mask: np.ndarray    # (..., H, W) bool

    def __post_init__(self):
        if self.image.shape[:self.mask.ndim] != self.mask.shape:
            raise ShapeError(f"cue image {self.image.shape} vs mask {self.mask.shape}")

    @staticmethod
    def empty(h: int, w: int) -> "ProjectedCue":
        return ProjectedCue(np.zeros((h, w, 3)), np.zeros((h, w), dtype=bool))


def relative_pose(cam_src: Camera, cam_tgt: Camera) -> RelativePose:
    R_rel = cam_tgt.R @ cam_src.R.T
    t_rel = cam_tgt.t - R_rel @ cam_src.t
    return RelativePose(R_rel, t_rel)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(R) - 1.0) * 0.5
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def viewpoint_difference(cam_a: Camera, cam_b: Camera, scene_scale: float) -> float:
    """Rotation angle plus 0.5 * baseline / scene_scale; symmetric, >= 0."""
    if scene_scale <= 0:
        raise ValueError(f"scene_scale must be positive, got {scene_scale}")
    if np.array_equal(cam_a.R, cam_b.R) and np.array_equal(cam_a.t, cam_b.t):
        return 0.0  # exact zero for coinciding poses
    rel = relative_pose(cam_a, cam_b)
    return rotation_angle(rel.R) + 0.5 * float(np.linalg.norm(rel.t)) / scene_scale


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample img at float coords; returns (values, in_frame_mask).
    Coordinates must have all four neighbours inside the frame to count."""
    H, W = img.shape[:2]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.clip(u, 0, W - 1)
    vc = np.clip(v, 0, H - 1)
    u0 = np.floor(uc).astype(int)
    v0 = np.floor(vc).astype(int)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    fu = (uc - u0)[..., None] if img.ndim == 3 else (uc - u0)
    fv = (vc - v0)[..., None] if img.ndim == 3 else (vc - v0)
    val = (img[v0, u0] * (1 - fu) * (1 - fv) + img[v0, u1] * fu * (1 - fv) +
           img[v1, u0] * (1 - fu) * fv + img[v1, u1] * fu * fv)
    return val, inside


def _bilinear_valid(mask: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """True where every bilinear neighbour is valid."""
    H, W = mask.shape
    u0 = np.clip(np.floor(u).astype(int), 0, W - 1)
    v0 = np.clip(np.floor(v).astype(int), 0, H - 1)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    return mask[v0, u0] & mask[v0, u1] & mask[v1, u0] & mask[v1, u1]


def warp(src_image: np.ndarray, src_depth: np.ndarray, src_depth_valid: np.ndarray,
         tgt_depth: np.ndarray, tgt_depth_valid: np.ndarray,
         pose_src_to_tgt: RelativePose, cam_src: Camera, cam_tgt: Camera,
         nearest: bool = False) -> ProjectedCue:
    """Warp src_image into the target view (backward warping via tgt_depth)."""
    H, W = cam_tgt.height, cam_tgt.width
    if src_image.shape[:2] != src_depth.shape:
        raise ShapeError(f"source image {src_image.shape} vs depth {src_depth.shape}")
    if tgt_depth.shape != (H, W):
        raise ShapeError(f"target depth {tgt_depth.shape} vs camera {(H, W)}")

    vs, us = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    z = np.where(tgt_depth_valid, tgt_depth, 1.0)
    x = (us - cam_tgt.cx) / cam_tgt.fx * z
    y = (vs - cam_tgt.cy) / cam_tgt.fy * z
    pts_t = np.stack([x, y, z], axis=-1)

    inv = pose_src_to_tgt.inverse()
    pts_s = pts_t @ inv.R.T + inv.t
    zs = pts_s[..., 2]
    in_front = zs > 1e-6
    zsafe = np.where(in_front, zs, 1.0)
    u_s = cam_src.fx * pts_s[..., 0] / zsafe + cam_src.cx
    v_s = cam_src.fy * pts_s[..., 1] / zsafe + cam_src.cy

    if nearest:
        ui = np.round(u_s).astype(int)
        vi = np.round(v_s).astype(int)
        inside = (ui >= 0) & (ui < cam_src.width) & (vi >= 0) & (vi < cam_src.height)
        uc = np.clip(ui, 0, cam_src.width - 1)
        vc = np.clip(vi, 0, cam_src.height - 1)
        color = src_image[vc, uc]
        src_ok = src_depth_valid[vc, uc]
        d_src = src_depth[vc, uc]
    else:
        color, inside = _bilinear(src_image, u_s, v_s)
        src_ok = _bilinear_valid(src_depth_valid, u_s, v_s) & inside
        d_src, _ = _bilinear(np.where(src_depth_valid, src_depth, 0.0), u_s, v_s)

    occl_ok = np.abs(zs - d_src) < OCC_EPS * (1.0 + zs)
    mask = tgt_depth_valid & in_front & inside & src_ok & occl_ok
    out = np.zeros((H, W) + src_image.shape[2:])
    out[mask] = color[mask]
    return ProjectedCue(out, mask)


def warp_from_renders(src_image: np.ndarray, src_render, tgt_render,
                      cam_src: Camera, cam_tgt: Camera,
                      nearest: bool = False) -> ProjectedCue:
    """Convenience wrapper taking RenderOutputs for the two views' depths."""
    pose = relative_pose(cam_src, cam_tgt)
    return warp(src_image, src_render.depth, src_render.depth_valid,
                tgt_render.depth, tgt_render.depth_valid,
                pose, cam_src, cam_tgt, nearest=nearest)
