"""3D Gaussian scene representation and the splatting renderer.

Conventions: world-to-camera is x_c = R @ x_w + t, pixels are (u, v) =
(fx*x/z + cx, fy*y/z + cy) with integer pixel centers, +z is the viewing
direction. Splats composite front to back (Eq.-style alpha blending) with a
2D Gaussian falloff, 0.3 px^2 covariance regularization and a 0.999 alpha
clamp. Rasterization culls at Mahalanobis radius CUTOFF; contributions
beyond it are below 2e-8 so a no-cutoff reference agrees to 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

COV_REG = 0.3          # px^2 added to the projected covariance diagonal
ALPHA_CLAMP = 0.999
CUTOFF = 6.0           # Mahalanobis cull radius; exp(-36/2) ~ 1.5e-8
DEFAULT_NEAR = 1e-2
TILE = 16
DEPTH_ALPHA_MIN = 0.5  # below this accumulated alpha the depth is invalid


@dataclass
class Gaussian:
    position: np.ndarray      # (3,)
    scale: np.ndarray         # (3,), > 0
    rotation: np.ndarray      # (4,) unit quaternion (w, x, y, z)
    opacity: float            # in (0, 1)
    color: np.ndarray         # (3,) RGB in [0, 1]
    object_id: int = 0

    def validate(self) -> None:
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {np.linalg.norm(self.rotation):.8f} != 1")
        if np.any(np.asarray(self.scale) <= 0):
            raise ValueError(f"non-positive scale {self.scale}")
        if not (0.0 < self.opacity < 1.0):
            raise ValueError(f"opacity {self.opacity} outside (0, 1)")
        c = np.asarray(self.color)
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError(f"color {c} outside [0, 1]^3")


class GaussianScene:
    """Ordered set of Gaussians, stored struct-of-arrays."""

    def __init__(self, positions, scales, rotations, opacities, colors,
                 object_ids=None, bounds=None):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if n == 0:
            raise ValueError("GaussianScene must be non-empty")
        self.scales = np.asarray(scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(n)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(n, 3)
        if object_ids is None:
            object_ids = np.zeros(n, dtype=np.int32)
        self.object_ids = np.asarray(object_ids, dtype=np.int32).reshape(n)
        if bounds is None:
            margin = 3.0 * self.scales.max()
            bounds = np.stack([self.positions.min(axis=0) - margin,
                               self.positions.max(axis=0) + margin])
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(2, 3)
        self.validate()

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.colors[i],
                        int(self.object_ids[i]))

    def validate(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"gaussian {bad}: quaternion norm {norms[bad]:.8f} != 1")
        if np.any(self.scales <= 0):
            raise ValueError("all scales must be positive")
        if np.any(self.opacities <= 0) or np.any(self.opacities >= 1):
            raise ValueError("opacities must lie in the open interval (0, 1)")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValueError("colors must lie in [0, 1]^3")
        lo, hi = self.bounds
        if np.any(self.positions < lo - 1e-9) or np.any(self.positions > hi + 1e-9):
            raise ValueError("gaussian positions must lie inside scene bounds")

    def copy(self) -> "GaussianScene":
        return GaussianScene(self.positions.copy(), self.scales.copy(),
                             self.rotations.copy(), self.opacities.copy(),
                             self.colors.copy(), self.object_ids.copy(),
                             self.bounds.copy())


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray       # (3,3) world-to-camera rotation
    t: np.ndarray       # (3,)

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if np.max(np.abs(self.R.T @ self.R - np.eye(3))) > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t


@dataclass
class RenderOutput:
    color: np.ndarray    # (H, W, 3) in [0, 1]
    depth: np.ndarray    # (H, W), +inf where empty
    id_map: np.ndarray   # (H, W) int32, -1 where empty
    alpha: np.ndarray    # (H, W) accumulated opacity
    depth_valid: np.ndarray = field(default=None)  # (H, W) bool, alpha >= 0.5

    def __post_init__(self):
        if self.depth_valid is None:
            self.depth_valid = self.alpha >= DEPTH_ALPHA_MIN


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) as (w, x, y, z) to rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class Splat2D:
    mean2d: np.ndarray    # (2,) pixel coordinates (u, v)
    cov2d: np.ndarray     # (2, 2) SPD after regularization
    depth: float


def _project_arrays(scene: GaussianScene, cam: Camera, near: float):
    """Vectorized EWA projection. Returns (mean2d, cov2d, z, xc, Jfull, valid)."""
    xc = scene.positions @ cam.R.T + cam.t
    z = xc[:, 2]
    valid = z > near
    zs = np.where(valid, z, 1.0)  # placeholder to avoid div warnings

    u = cam.fx * xc[:, 0] / zs + cam.cx
    v = cam.fy * xc[:, 1] / zs + cam.cy
    mean2d = np.stack([u, v], axis=1)

    Rg = quat_to_rot(scene.rotations)                    # (N,3,3)
    S2 = scene.scales ** 2
    cov3d = np.einsum("nij,nj,nkj->nik", Rg, S2, Rg)     # R diag(s^2) R^T
    M = np.einsum("ij,njk,lk->nil", cam.R, cov3d, cam.R)  # camera-frame cov

    n = len(scene)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * xc[:, 0] / zs ** 2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * xc[:, 1] / zs ** 2
    cov2d = np.einsum("nab,nbc,ndc->nad", J, M, J)
    cov2d[:, 0, 0] += COV_REG
    cov2d[:, 1, 1] += COV_REG
    return mean2d, cov2d, z, xc, J, M, valid


def project_gaussian(g: Gaussian, cam: Camera, near: float = DEFAULT_NEAR):
    """Project one Gaussian; returns a Splat2D, or None when behind the near plane."""
    scene = GaussianScene(g.position[None], g.scale[None], g.rotation[None],
                          [g.opacity], g.color[None], [g.object_id])
    mean2d, cov2d, z, _, _, _, valid = _project_arrays(scene, cam, near)
    if not valid[0]:
        return None
    return Splat2D(mean2d[0], cov2d[0], float(z[0]))


def _depth_order(scene: GaussianScene, z: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Front-to-back order among valid splats; ties broken by gaussian content
    so the result is invariant to permutations of the input list."""
    idx = np.nonzero(valid)[0]
    keys = (scene.colors[idx, 2], scene.colors[idx, 1], scene.colors[idx, 0],
            scene.opacities[idx],
            scene.positions[idx, 2], scene.positions[idx, 1], scene.positions[idx, 0],
            z[idx])
    return idx[np.lexsort(keys)]


def _prepare(scene: GaussianScene, cam: Camera, near: float):
    mean2d, cov2d, z, xc, J, M, valid = _project_arrays(scene, cam, near)
    order = _depth_order(scene, z, valid)
    det = (cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2)
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = cov2d[:, 1, 1] / det
    inv[:, 1, 1] = cov2d[:, 0, 0] / det
    inv[:, 0, 1] = inv[:, 1, 0] = -cov2d[:, 0, 1] / det
    rad_u = CUTOFF * np.sqrt(cov2d[:, 0, 0])
    rad_v = CUTOFF * np.sqrt(cov2d[:, 1, 1])
    return mean2d, cov2d, inv, z, xc, J, M, order, (rad_u, rad_v)


def _tile_lists(order, mean2d, radii, W, H):
    """Per-tile splat index lists (depth-ordered) from per-splat pixel boxes."""
    tx = (W + TILE - 1) // TILE
    ty = (H + TILE - 1) // TILE
    tiles = [[] for _ in range(tx * ty)]
    rad_u, rad_v = radii
    u0 = np.clip(np.floor((mean2d[order, 0] - rad_u[order]) / TILE), 0, tx - 1).astype(int)
    u1 = np.clip(np.floor((mean2d[order, 0] + rad_u[order]) / TILE), 0, tx - 1).astype(int)
    v0 = np.clip(np.floor((mean2d[order, 1] - rad_v[order]) / TILE), 0, ty - 1).astype(int)
    v1 = np.clip(np.floor((mean2d[order, 1] + rad_v[order]) / TILE), 0, ty - 1).astype(int)
    oob = ((mean2d[order, 0] + rad_u[order] < 0) | (mean2d[order, 0] - rad_u[order] > W - 1) |
           (mean2d[order, 1] + rad_v[order] < 0) | (mean2d[order, 1] - rad_v[order] > H - 1))
    for k, gi in enumerate(order):
        if oob[k]:
            continue
        for tv in range(v0[k], v1[k] + 1):
            for tu in range(u0[k], u1[k] + 1):
                tiles[tv * tx + tu].append(gi)
    return tiles, tx, ty


def _tile_alpha(scene, mean2d, inv, ids, us, vs):
    """Per-splat alphas on a tile pixel grid: (K, th, tw), culled at CUTOFF."""
    du = us[None, None, :] - mean2d[ids, 0][:, None, None]
    dv = vs[None, :, None] - mean2d[ids, 1][:, None, None]
    a = inv[ids, 0, 0][:, None, None]
    b = inv[ids, 0, 1][:, None, None]
    c = inv[ids, 1, 1][:, None, None]
    q = a * du * du + 2.0 * b * du * dv + c * dv * dv
    g = np.exp(-0.5 * q)
    g[q > CUTOFF * CUTOFF] = 0.0
    alpha = scene.opacities[ids][:, None, None] * g
    clamped = alpha > ALPHA_CLAMP
    np.minimum(alpha, ALPHA_CLAMP, out=alpha)
    return alpha, g, clamped, du, dv


def render(scene: GaussianScene, cam: Camera, near: float = DEFAULT_NEAR) -> RenderOutput:
    """Tile-based front-to-back alpha compositing of the projected Gaussians."""
    W, H = cam.width, cam.height
    mean2d, cov2d, inv, z, xc, J, M, order, radii = _prepare(scene, cam, near)
    tiles, tx, ty = _tile_lists(order, mean2d, radii, W, H)

    color = np.zeros((H, W, 3))
    depth_num = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))
    id_map = np.full((H, W), -1, dtype=np.int32)
    best_w = np.zeros((H, W))

    for tv in range(ty):
        for tu in range(tx):
            ids = tiles[tv * tx + tu]
            if not ids:
                continue
            ids = np.asarray(ids)
            x0, y0 = tu * TILE, tv * TILE
            x1, y1 = min(x0 + TILE, W), min(y0 + TILE, H)
            us = np.arange(x0, x1, dtype=np.float64)
            vs = np.arange(y0, y1, dtype=np.float64)
            alpha, _, _, _, _ = _tile_alpha(scene, mean2d, inv, ids, us, vs)
            one_m = 1.0 - alpha
            T = np.cumprod(one_m, axis=0)
            T[1:] = T[:-1]
            T[0] = 1.0
            w = alpha * T          # (K, th, tw) compositing weights
            color[y0:y1, x0:x1] += np.einsum("kij,kc->ijc", w, scene.colors[ids])
            depth_num[y0:y1, x0:x1] += np.einsum("kij,k->ij", w, z[ids])
            alpha_acc[y0:y1, x0:x1] += w.sum(axis=0)
            k_best = np.argmax(w, axis=0)
            wmax = np.take_along_axis(w, k_best[None], axis=0)[0]
            upd = wmax > best_w[y0:y1, x0:x1]
            best_w[y0:y1, x0:x1][upd] = wmax[upd]
            id_map[y0:y1, x0:x1][upd] = scene.object_ids[ids][k_best][upd]

    covered = alpha_acc > 0.0
    depth = np.full((H, W), np.inf)
    depth[covered] = depth_num[covered] / alpha_acc[covered]
    return RenderOutput(color=color, depth=depth, id_map=id_map,
                        alpha=np.clip(alpha_acc, 0.0, 1.0))


def render_backward(scene: GaussianScene, cam: Camera, dL_dcolor: np.ndarray,
                    near: float = DEFAULT_NEAR):
    """Analytic gradients of sum(dL_dcolor * rendered_color) w.r.t. color,
    opacity and position of every gaussian. Returns dict of arrays."""
    W, H = cam.width, cam.height
    if dL_dcolor.shape != (H, W, 3):
        raise ShapeError(f"dL_dcolor shape {dL_dcolor.shape} != image shape {(H, W, 3)}")
    mean2d, cov2d, inv, z, xc, J, M, order, radii = _prepare(scene, cam, near)
    tiles, tx, ty = _tile_lists(order, mean2d, radii, W, H)

    n = len(scene)
    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)
    d_mean2d = np.zeros((n, 2))
    d_cov = np.zeros((n, 2, 2))

    for tv in range(ty):
        for tu in range(tx):
            ids = tiles[tv * tx + tu]
            if not ids:
                continue
            ids = np.asarray(ids)
            x0, y0 = tu * TILE, tv * TILE
            x1, y1 = min(x0 + TILE, W), min(y0 + TILE, H)
            us = np.arange(x0, x1, dtype=np.float64)
            vs = np.arange(y0, y1, dtype=np.float64)
            alpha, g, clamped, du, dv = _tile_alpha(scene, mean2d, inv, ids, us, vs)
            one_m = 1.0 - alpha
            T = np.cumprod(one_m, axis=0)
            T[1:] = T[:-1]
            T[0] = 1.0
            w = alpha * T
            gpix = dL_dcolor[y0:y1, x0:x1]                      # (th, tw, 3)
            # color gradient: dC/dc_k = w_k
            d_color[ids] += np.einsum("kij,ijc->kc", w, gpix)
            # alpha gradient via transmittance suffix sums
            cg = np.einsum("kc,ijc->kij", scene.colors[ids], gpix)  # <c_k, g> per px
            wc = w * cg
            suffix = np.cumsum(wc[::-1], axis=0)[::-1] - wc      # sum over j>k
            dL_da = cg * T - suffix / one_m
            dL_da[clamped] = 0.0
            d_opacity[ids] += np.einsum("kij,kij->k", dL_da, g)
            # falloff gradient: alpha = o * exp(-q/2); dalpha/dq = -alpha/2
            o = scene.opacities[ids][:, None, None]
            dL_dq = dL_da * (-0.5 * o * g)
            a = inv[ids, 0, 0][:, None, None]
            b = inv[ids, 0, 1][:, None, None]
            c = inv[ids, 1, 1][:, None, None]
            m0 = a * du + b * dv                                # (A @ delta)_u
            m1 = b * du + c * dv
            # q = delta^T A delta, delta = p - mu: dq/dmu = -2 A delta
            d_mean2d[ids, 0] += np.einsum("kij,kij->k", dL_dq, -2.0 * m0)
            d_mean2d[ids, 1] += np.einsum("kij,kij->k", dL_dq, -2.0 * m1)
            # dq/dSigma = -(A delta)(A delta)^T
            d_cov[ids, 0, 0] += np.einsum("kij,kij->k", dL_dq, -m0 * m0)
            d_cov[ids, 0, 1] += np.einsum("kij,kij->k", dL_dq, -m0 * m1)
            d_cov[ids, 1, 0] += np.einsum("kij,kij->k", dL_dq, -m1 * m0)
            d_cov[ids, 1, 1] += np.einsum("kij,kij->k", dL_dq, -m1 * m1)

    # chain mean2d and cov2d back to camera-frame position, then to world
    zs = np.where(z > near, z, 1.0)
    d_xc = np.einsum("nab,na->nb", J, d_mean2d)   # projection Jacobian is J itself
    fx, fy = cam.fx, cam.fy
    X, Y = xc[:, 0], xc[:, 1]
    dJ = np.zeros((n, 3, 2, 3))                   # dJ[:, axis] = dJ/d(xc_axis)
    dJ[:, 0, 0, 2] = -fx / zs ** 2
    dJ[:, 1, 1, 2] = -fy / zs ** 2
    dJ[:, 2, 0, 0] = -fx / zs ** 2
    dJ[:, 2, 1, 1] = -fy / zs ** 2
    dJ[:, 2, 0, 2] = 2.0 * fx * X / zs ** 3
    dJ[:, 2, 1, 2] = 2.0 * fy * Y / zs ** 3
    JM = np.einsum("nab,nbc->nac", J, M)          # (n, 2, 3)
    for axis in range(3):
        dSig = (np.einsum("nab,ncb->nac", dJ[:, axis] @ M, J) +
                np.einsum("nab,ncb->nac", JM, dJ[:, axis]))
        d_xc[:, axis] += np.einsum("nab,nab->n", d_cov, dSig)
    mask = z > near
    d_position = (d_xc * mask[:, None]) @ cam.R
    return {"color": d_color, "opacity": d_opacity, "position": d_position}
