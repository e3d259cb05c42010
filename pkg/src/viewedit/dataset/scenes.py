"""Synthetic cluster scenes and orbit trajectories.

A scene is a jittered ground carpet (object id 0) plus a few gaussian
clusters on it. Object base hues are tied to the object id so an id is
visually identifiable, which keeps id-conditioned recolor instructions
learnable from the image alone. Cameras sit on a smooth arc looking at the
scene center; spacing is tuned so adjacent viewpoint differences stay well
inside the pair-sampling bound.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from ..gaussians import Camera, GaussianScene


@dataclass
class SceneConfig:
    n_objects: int = 3
    gaussians_per_object: int = 60
    ground_grid: int = 14
    n_views: int = 12
    image_size: int = 64
    fov_deg: float = 55.0
    orbit_radius: float = 3.4
    orbit_height: float = 2.0
    arc_span_deg: float = 95.0
    max_object_slots: int = 6     # hue wheel slots for id -> base hue


def look_at_camera(eye, target, width: int, height: int, f: float) -> Camera:
    """Camera at `eye` looking at `target`, world +z as up, y-down image."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight down: pick a stable right axis
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  width=width, height=height, R=R, t=-R @ eye)


def _object_base_hue(object_id: int, slots: int) -> float:
    return ((object_id - 1) % slots) / slots


def generate_scene(seed: int, config: SceneConfig | None = None
                   ) -> tuple[GaussianScene, list[Camera]]:
    """Reproducible scene + camera arc for one seed."""
    cfg = config or SceneConfig()
    if cfg.n_objects < 1:
        raise ValueError("n_objects must be >= 1 (a scene cannot be empty)")
    rng = np.random.default_rng(np.random.SeedSequence((0x5CE7E, seed)))

    pos, scl, rot, opa, col, ids = [], [], [], [], [], []

    # ground carpet: flattened warm-brown splats on z=0 (definitely colored,
    # so recolor edits move even the background statistics)
    g = cfg.ground_grid
    xs = np.linspace(-2.4, 2.4, g)
    for x in xs:
        for y in xs:
            pos.append([x + rng.uniform(-0.06, 0.06),
                        y + rng.uniform(-0.06, 0.06),
                        rng.uniform(-0.02, 0.02)])
            scl.append([0.28, 0.28, 0.03])
            rot.append([1.0, 0.0, 0.0, 0.0])
            opa.append(rng.uniform(0.75, 0.92))
            base = rng.uniform(0.38, 0.5)
            col.append([base + rng.uniform(0.08, 0.14), base,
                        max(base - rng.uniform(0.12, 0.2), 0.05)])
            ids.append(0)

    # object clusters with id-keyed hues
    ring = rng.uniform(0.0, 2 * np.pi)
    for k in range(1, cfg.n_objects + 1):
        ang = ring + 2 * np.pi * (k - 1) / cfg.n_objects + rng.uniform(-0.25, 0.25)
        r = rng.uniform(0.7, 1.4)
        center = np.array([r * np.cos(ang), r * np.sin(ang), rng.uniform(0.35, 0.55)])
        hue = (_object_base_hue(k, cfg.max_object_slots) + rng.uniform(-0.03, 0.03)) % 1.0
        for _ in range(cfg.gaussians_per_object):
            p = center + rng.normal(0, 0.22, 3) * np.array([1, 1, 0.7])
            p[2] = max(p[2], 0.05)
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            sat = rng.uniform(0.38, 0.55)
            val = rng.uniform(0.5, 0.78)
            rgb = colorsys.hsv_to_rgb((hue + rng.uniform(-0.02, 0.02)) % 1.0, sat, val)
            pos.append(p.tolist())
            scl.append(rng.uniform(0.07, 0.16, 3).tolist())
            rot.append(q.tolist())
            opa.append(rng.uniform(0.55, 0.9))
            col.append(list(rgb))
            ids.append(k)

    scene = GaussianScene(pos, scl, rot, opa, col, ids)

    f = 0.5 * cfg.image_size / np.tan(np.deg2rad(cfg.fov_deg) / 2)
    target = np.array([0.0, 0.0, 0.3])
    span = np.deg2rad(cfg.arc_span_deg)
    base_ang = rng.uniform(0.0, 2 * np.pi)
    cams = []
    for i in range(cfg.n_views):
        a = base_ang + span * (i / (cfg.n_views - 1) - 0.5)
        eye = np.array([cfg.orbit_radius * np.cos(a),
                        cfg.orbit_radius * np.sin(a),
                        cfg.orbit_height + 0.25 * np.sin(2.2 * a)])
        cams.append(look_at_camera(eye, target, cfg.image_size, cfg.image_size, f))
    return scene, cams


def scene_scale_of(scene: GaussianScene) -> float:
    """Half the diagonal of the scene bounds; the normalizer for viewpoint
    differences."""
    lo, hi = scene.bounds
    return 0.5 * float(np.linalg.norm(hi - lo))
