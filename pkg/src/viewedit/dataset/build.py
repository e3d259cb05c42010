"""Paired-dataset construction: sample view pairs, jointly edit, warp, score,
filter, and emit length-prefixed records plus a JSON-lines manifest.

Determinism: every sample draws from a generator seeded by (global_seed,
sample_index), renders are cached per (scene, view), and records are written
in sample order, so identical seeds give byte-identical files. Images are
quantized to 8 bits *before* scoring so that re-scoring the stored records
reproduces the filter decision exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..gaussians import Camera, GaussianScene, RenderOutput, render
from ..imaging import from_uint8, png_bytes, png_decode, to_uint8
from ..warp import ProjectedCue, relative_pose, viewpoint_difference, warp
from .filtering import KEEP, FilterConfig, PairScores, filter_pair, score_pair
from .scenes import SceneConfig, generate_scene, scene_scale_of
from .toyedit import (CORRUPT_NONE, CORRUPTIONS, EditInstruction,
                      apply_instruction, build_vocabulary, joint_edit)

DATASET_MAGIC = b"CVCD"
DATASET_VERSION = 1
_BLOCK_NAMES = ("i_x", "i_y", "edit_x", "edit_y",
                "p_xy", "p_xy_mask", "p_yx", "p_yx_mask")


@dataclass
class TrainingSample:
    i_x: np.ndarray
    i_y: np.ndarray
    edit_x: np.ndarray
    edit_y: np.ndarray
    p_xy: ProjectedCue
    p_yx: ProjectedCue
    instruction: EditInstruction
    scores: PairScores
    provenance: dict


@dataclass
class DatasetBuildConfig:
    seed: int = 0
    n_pairs: int = 200
    n_scenes: int = 6
    scene: SceneConfig = field(default_factory=SceneConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    corruption_rate: float = 0.0
    corruption_mode: str = "perturbed"
    n_object_slots: int = 3
    pair_attempts: int = 100

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ConfigError("dataset needs at least one scene")
        if not (0.0 <= self.corruption_rate <= 1.0):
            raise ConfigError(f"corruption_rate {self.corruption_rate} outside [0,1]")
        if self.corruption_mode not in CORRUPTIONS:
            raise ConfigError(f"unknown corruption mode {self.corruption_mode!r}")


class RenderCache:
    """Lazy per-(scene, view) renders shared across samples."""

    def __init__(self, scene: GaussianScene, cams: list[Camera]):
        self.scene = scene
        self.cams = cams
        self._out: dict[int, RenderOutput] = {}

    def view(self, i: int) -> RenderOutput:
        if i not in self._out:
            self._out[i] = render(self.scene, self.cams[i])
        return self._out[i]


def sample_pair(cams: list[Camera], delta_max: float, scene_scale: float,
                rng: np.random.Generator, attempts: int = 100) -> tuple[int, int]:
    """Uniform index pair with viewpoint difference under the bound."""
    if len(cams) < 2:
        raise ValueError("trajectory must contain at least two cameras")
    for _ in range(attempts):
        i, j = rng.choice(len(cams), size=2, replace=False)
        d = viewpoint_difference(cams[i], cams[j], scene_scale)
        if 0.0 < d < delta_max:
            return int(i), int(j)
    raise RuntimeError(f"no camera pair with viewpoint difference < {delta_max} "
                       f"after {attempts} attempts")


def _quantized(img: np.ndarray) -> np.ndarray:
    return from_uint8(to_uint8(img))


def make_pair_sample(cache: RenderCache, ix: int, iy: int,
                     instr: EditInstruction, corruption: str,
                     rng: np.random.Generator, scene_scale: float,
                     provenance: dict) -> TrainingSample:
    rx, ry = cache.view(ix), cache.view(iy)
    cam_x, cam_y = cache.cams[ix], cache.cams[iy]
    img_x, img_y = _quantized(rx.color), _quantized(ry.color)
    ex, ey = joint_edit(img_x, img_y, instr, rx.id_map, ry.id_map,
                        corruption=corruption, rng=rng)
    ex, ey = _quantized(ex), _quantized(ey)
    pose_xy = relative_pose(cam_x, cam_y)
    p_xy = warp(ex, rx.depth, rx.depth_valid, ry.depth, ry.depth_valid,
                pose_xy, cam_x, cam_y)
    p_yx = warp(ey, ry.depth, ry.depth_valid, rx.depth, rx.depth_valid,
                pose_xy.inverse(), cam_y, cam_x)
    p_xy = ProjectedCue(_quantized(p_xy.image) * p_xy.mask[..., None], p_xy.mask)
    p_yx = ProjectedCue(_quantized(p_yx.image) * p_yx.mask[..., None], p_yx.mask)
    delta = viewpoint_difference(cam_x, cam_y, scene_scale)
    scores = score_pair(img_x, img_y, ex, ey, delta)
    return TrainingSample(img_x, img_y, ex, ey, p_xy, p_yx, instr, scores,
                          provenance)


def _instr_doc(instr: EditInstruction) -> dict:
    return {"kind": instr.kind, "target_id": instr.target_id,
            "hue_angle": instr.hue_angle, "gain": instr.gain,
            "vocab_index": instr.vocab_index}


def _instr_from_doc(doc: dict) -> EditInstruction:
    return EditInstruction(doc["kind"], doc["target_id"], doc["hue_angle"],
                           doc["gain"], doc["vocab_index"])


def _write_record(f, sample: TrainingSample) -> None:
    header = {
        "instruction": _instr_doc(sample.instruction),
        "scores": sample.scores.as_dict(),
        "provenance": sample.provenance,
        "blocks": list(_BLOCK_NAMES),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    blocks = [
        png_bytes(sample.i_x), png_bytes(sample.i_y),
        png_bytes(sample.edit_x), png_bytes(sample.edit_y),
        png_bytes(sample.p_xy.image),
        png_bytes((sample.p_xy.mask * np.uint8(255)).astype(np.uint8)),
        png_bytes(sample.p_yx.image),
        png_bytes((sample.p_yx.mask * np.uint8(255)).astype(np.uint8)),
    ]
    f.write(struct.pack("<I", len(hb)))
    f.write(hb)
    f.write(struct.pack("<I", len(blocks)))
    for b in blocks:
        f.write(struct.pack("<I", len(b)))
        f.write(b)


def load_dataset_file(path) -> list[TrainingSample]:
    samples = []
    with open(Path(path), "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: bad dataset magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        while True:
            raw = f.read(4)
            if not raw:
                break
            (hlen,) = struct.unpack("<I", raw)
            header = json.loads(f.read(hlen))
            (nb,) = struct.unpack("<I", f.read(4))
            blocks = []
            for _ in range(nb):
                (blen,) = struct.unpack("<I", f.read(4))
                blocks.append(png_decode(f.read(blen)))
            named = dict(zip(header["blocks"], blocks))
            sc = header["scores"]
            samples.append(TrainingSample(
                i_x=named["i_x"], i_y=named["i_y"],
                edit_x=named["edit_x"], edit_y=named["edit_y"],
                p_xy=ProjectedCue(np.atleast_3d(named["p_xy"]),
                                  named["p_xy_mask"] > 0.5),
                p_yx=ProjectedCue(np.atleast_3d(named["p_yx"]),
                                  named["p_yx_mask"] > 0.5),
                instruction=_instr_from_doc(header["instruction"]),
                scores=PairScores(sc["s0"], sc["s1"], sc["s_g"], sc["s_l"],
                                  sc["delta"]),
                provenance=header["provenance"],
            ))
    return samples


def build_dataset(cfg: DatasetBuildConfig, out_path, manifest_path) -> dict:
    """Run the full pipeline; returns summary counts by decision."""
    vocab = [v for v in build_vocabulary(cfg.n_object_slots) if v.kind != "noop"]
    scenes = []
    for s in range(cfg.n_scenes):
        scene, cams = generate_scene(cfg.seed * 1000003 + s, cfg.scene)
        scenes.append((RenderCache(scene, cams), scene_scale_of(scene),
                       cfg.seed * 1000003 + s))

    counts: dict[str, int] = {}
    out_path, manifest_path = Path(out_path), Path(manifest_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as f, open(manifest_path, "w") as mf:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        for idx in range(cfg.n_pairs):
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, idx)))
            cache, scale, scene_seed = scenes[idx % cfg.n_scenes]
            ix, iy = sample_pair(cache.cams, cfg.filter.delta_max, scale, rng,
                                 cfg.pair_attempts)
            instr = vocab[int(rng.integers(0, len(vocab)))]
            corrupted = rng.uniform() < cfg.corruption_rate
            corruption = cfg.corruption_mode if corrupted else CORRUPT_NONE
            sample = make_pair_sample(
                cache, ix, iy, instr, corruption, rng, scale,
                provenance={"scene_seed": scene_seed, "cam_x": ix, "cam_y": iy,
                            "sample_index": idx, "corruption": corruption})
            decision = filter_pair(sample.scores, cfg.filter)
            counts[decision] = counts.get(decision, 0) + 1
            mf.write(json.dumps({
                "index": idx, "decision": decision,
                "scores": sample.scores.as_dict(),
                "instruction": _instr_doc(instr),
                "provenance": sample.provenance,
            }, sort_keys=True) + "\n")
            if decision == KEEP:
                _write_record(f, sample)
    total = max(cfg.n_pairs, 1)
    summary = {"counts": counts, "n_pairs": cfg.n_pairs,
               "acceptance_rate": counts.get(KEEP, 0) / total}
    return summary


def build_single_view_samples(seed: int, n_samples: int,
                              scene_cfg: SceneConfig | None = None,
                              n_scenes: int = 6, include_noop: bool = True,
                              n_object_slots: int = 3):
    """Unpaired (single image) edit triplets for backbone pretraining.

    Returns (images, vocab_indices, targets) float32/ int arrays.
    """
    cfg = scene_cfg or SceneConfig()
    vocab = build_vocabulary(n_object_slots)
    if not include_noop:
        vocab = [v for v in vocab if v.kind != "noop"]
    caches = []
    for s in range(n_scenes):
        scene, cams = generate_scene(seed * 7777 + s, cfg)
        caches.append(RenderCache(scene, cams))
    imgs = np.empty((n_samples, cfg.image_size, cfg.image_size, 3), dtype=np.float32)
    tgts = np.empty_like(imgs)
    idxs = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 51, i)))
        cache = caches[i % n_scenes]
        v = int(rng.integers(0, len(cache.cams)))
        out = cache.view(v)
        img = _quantized(out.color)
        instr = vocab[int(rng.integers(0, len(vocab)))]
        tgt = _quantized(apply_instruction(img, instr, out.id_map))
        imgs[i] = img
        tgts[i] = tgt
        idxs[i] = instr.vocab_index
    return imgs, idxs, tgts
