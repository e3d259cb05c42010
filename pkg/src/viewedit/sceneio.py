"""JSON on-disk formats for scenes and cameras.

Scene file: {"version": 1, "bounds": [[3],[3]], "gaussians": [{"pos": [3],
"scale": [3], "quat": [4] (w,x,y,z), "opacity": f, "color": [3], "id": i}]}.
Camera file: {"fx","fy","cx","cy","width","height","R":[9] row-major,"t":[3]}.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .gaussians import Camera, GaussianScene

SCENE_VERSION = 1


def save_scene(path, scene: GaussianScene) -> None:
    doc = {
        "version": SCENE_VERSION,
        "bounds": scene.bounds.tolist(),
        "gaussians": [
            {
                "pos": scene.positions[i].tolist(),
                "scale": scene.scales[i].tolist(),
                "quat": scene.rotations[i].tolist(),
                "opacity": float(scene.opacities[i]),
                "color": scene.colors[i].tolist(),
                "id": int(scene.object_ids[i]),
            }
            for i in range(len(scene))
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_scene(path) -> GaussianScene:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != SCENE_VERSION:
        raise ValueError(f"{path}: unsupported scene version {doc.get('version')}")
    gs = doc["gaussians"]
    return GaussianScene(
        positions=[g["pos"] for g in gs],
        scales=[g["scale"] for g in gs],
        rotations=[g["quat"] for g in gs],
        opacities=[g["opacity"] for g in gs],
        colors=[g["color"] for g in gs],
        object_ids=[g["id"] for g in gs],
        bounds=np.asarray(doc["bounds"]),
    )


def save_camera(path, cam: Camera) -> None:
    doc = {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "R": cam.R.reshape(9).tolist(), "t": cam.t.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_camera(path) -> Camera:
    doc = json.loads(Path(path).read_text())
    return Camera(fx=doc["fx"], fy=doc["fy"], cx=doc["cx"], cy=doc["cy"],
                  width=int(doc["width"]), height=int(doc["height"]),
                  R=np.asarray(doc["R"]).reshape(3, 3), t=np.asarray(doc["t"]))


def save_cameras(path, cams: list[Camera]) -> None:
    docs = [{
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "width": c.width, "height": c.height,
        "R": c.R.reshape(9).tolist(), "t": c.t.tolist(),
    } for c in cams]
    Path(path).write_text(json.dumps(docs))


def load_cameras(path) -> list[Camera]:
    docs = json.loads(Path(path).read_text())
    return [Camera(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=int(d["width"]), height=int(d["height"]),
                   R=np.asarray(d["R"]).reshape(3, 3), t=np.asarray(d["t"]))
            for d in docs]
