"""Independent reference implementations used only by tests.

These deliberately avoid the package's fast paths: the renderer oracle is a
per-pixel full sum with no culling and no tiles, and the gradient oracle is
plain central finite differences.
"""

from __future__ import annotations

import numpy as np

from viewedit.gaussians import (ALPHA_CLAMP, COV_REG, Camera, GaussianScene,
                                quat_to_rot)


def render_brute_force(scene: GaussianScene, cam: Camera, near: float = 1e-2):
    """Per-pixel alpha compositing over every gaussian, no cutoffs."""
    H, W = cam.height, cam.width
    xc = scene.positions @ cam.R.T + cam.t
    z = xc[:, 2]
    keep = np.nonzero(z > near)[0]
    # same content-keyed depth order as the renderer
    keys = (scene.colors[keep, 2], scene.colors[keep, 1], scene.colors[keep, 0],
            scene.opacities[keep],
            scene.positions[keep, 2], scene.positions[keep, 1], scene.positions[keep, 0],
            z[keep])
    order = keep[np.lexsort(keys)]

    color = np.zeros((H, W, 3))
    T = np.ones((H, W))
    alpha_acc = np.zeros((H, W))
    depth_num = np.zeros((H, W))
    best_w = np.zeros((H, W))
    id_map = np.full((H, W), -1, dtype=np.int32)

    vs, us = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float),
                         indexing="ij")
    Rg = quat_to_rot(scene.rotations)
    for gi in order:
        cov3d = Rg[gi] @ np.diag(scene.scales[gi] ** 2) @ Rg[gi].T
        M = cam.R @ cov3d @ cam.R.T
        X, Y, Z = xc[gi]
        J = np.array([[cam.fx / Z, 0.0, -cam.fx * X / Z ** 2],
                      [0.0, cam.fy / Z, -cam.fy * Y / Z ** 2]])
        cov2d = J @ M @ J.T + COV_REG * np.eye(2)
        mu = np.array([cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy])
        A = np.linalg.inv(cov2d)
        du = us - mu[0]
        dv = vs - mu[1]
        q = A[0, 0] * du * du + 2 * A[0, 1] * du * dv + A[1, 1] * dv * dv
        a = np.minimum(scene.opacities[gi] * np.exp(-0.5 * q), ALPHA_CLAMP)
        w = a * T
        color += w[..., None] * scene.colors[gi]
        depth_num += w * Z
        alpha_acc += w
        upd = w > best_w
        best_w[upd] = w[upd]
        id_map[upd] = scene.object_ids[gi]
        T = T * (1.0 - a)
    depth = np.full((H, W), np.inf)
    covered = alpha_acc > 0
    depth[covered] = depth_num[covered] / alpha_acc[covered]
    return color, depth, id_map, alpha_acc


def finite_difference(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def random_scene(rng: np.random.Generator, n: int, span: float = 2.0,
                 z0: float = 4.0, z_spread: float = 2.0) -> GaussianScene:
    """Random well-conditioned test scene in front of the default camera."""
    pos = np.column_stack([rng.uniform(-span, span, n),
                           rng.uniform(-span, span, n),
                           rng.uniform(z0 - z_spread, z0 + z_spread, n)])
    scales = rng.uniform(0.05, 0.4, (n, 3))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(0.2, 0.95, n)
    colors = rng.uniform(0.05, 0.95, (n, 3))
    ids = rng.integers(0, 5, n).astype(np.int32)
    return GaussianScene(pos, scales, q, opac, colors, ids)


def identity_camera(width: int = 32, height: int = 32, f: float = 30.0) -> Camera:
    return Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  width=width, height=height, R=np.eye(3), t=np.zeros(3))
