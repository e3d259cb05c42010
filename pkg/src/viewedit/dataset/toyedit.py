"""Deterministic parametric image edits standing in for a learned editor.

All edits are (near-)linear color maps, so a globally applied edit commutes
with alpha compositing and therefore with rendering; that is what makes
ground-truth-consistent multi-view supervision possible. Hue rotation is the
3x3 rotation about the gray axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RECOLOR = "recolor_object"
HUE = "global_hue_rotate"
GRAY = "grayscale_style"
BRIGHT = "brightness_ramp"
NOOP = "noop"

KINDS = (NOOP, HUE, GRAY, BRIGHT, RECOLOR)

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class EditInstruction:
    kind: str
    target_id: int = -1        # recolor_object only
    hue_angle: float = 0.0     # radians, hue kinds
    gain: float = 1.0          # brightness kind
    vocab_index: int = -1

    def describe(self) -> str:
        if self.kind == RECOLOR:
            return f"recolor object {self.target_id} by {np.rad2deg(self.hue_angle):.0f} deg"
        if self.kind == HUE:
            return f"rotate hue by {np.rad2deg(self.hue_angle):.0f} deg"
        if self.kind == GRAY:
            return "grayscale style"
        if self.kind == BRIGHT:
            return f"brightness x{self.gain:.2f}"
        return "no-op"


def hue_rotation_matrix(theta: float) -> np.ndarray:
    """Rotation by theta about the (1,1,1)/sqrt(3) axis (Rodrigues)."""
    axis = np.ones(3) / np.sqrt(3.0)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def _apply_linear(img: np.ndarray, M: np.ndarray, mask=None) -> np.ndarray:
    out = img.copy()
    mapped = img @ M.T
    if mask is None:
        out = mapped
    else:
        out[mask] = mapped[mask]
    return np.clip(out, 0.0, 1.0)


def apply_instruction(img: np.ndarray, instr: EditInstruction,
                      id_map: np.ndarray | None = None) -> np.ndarray:
    """Edit one image. recolor_object needs the rendered id map."""
    if instr.kind == NOOP:
        return img.copy()
    if instr.kind == HUE:
        return _apply_linear(img, hue_rotation_matrix(instr.hue_angle))
    if instr.kind == GRAY:
        M = np.outer(np.ones(3), _LUMA)
        return _apply_linear(img, M)
    if instr.kind == BRIGHT:
        return _apply_linear(img, np.eye(3) * instr.gain)
    if instr.kind == RECOLOR:
        if id_map is None:
            raise ValueError("recolor_object requires an id map")
        mask = id_map == instr.target_id
        return _apply_linear(img, hue_rotation_matrix(instr.hue_angle), mask)
    raise ValueError(f"unknown instruction kind {instr.kind!r}")


def build_vocabulary(n_object_slots: int = 3) -> list[EditInstruction]:
    """Stable finite instruction table; index 0 is the no-op."""
    vocab: list[EditInstruction] = [EditInstruction(NOOP, vocab_index=0)]
    for deg in (60.0, 120.0, 180.0, 240.0, 300.0):
        vocab.append(EditInstruction(HUE, hue_angle=np.deg2rad(deg),
                                     vocab_index=len(vocab)))
    vocab.append(EditInstruction(GRAY, vocab_index=len(vocab)))
    for gain in (0.6, 0.75, 1.25, 1.4):
        vocab.append(EditInstruction(BRIGHT, gain=gain, vocab_index=len(vocab)))
    for target in range(1, n_object_slots + 1):
        for deg in (90.0, 180.0, 270.0):
            vocab.append(EditInstruction(RECOLOR, target_id=target,
                                         hue_angle=np.deg2rad(deg),
                                         vocab_index=len(vocab)))
    return vocab


# corruption modes for filter exercising
CORRUPT_NONE = "none"
CORRUPT_NOOP = "noop"               # editor did nothing
CORRUPT_HALF = "half_only"          # only the first half edited
CORRUPT_PERTURBED = "perturbed"     # halves edited with different parameters

CORRUPTIONS = (CORRUPT_NONE, CORRUPT_NOOP, CORRUPT_HALF, CORRUPT_PERTURBED)


def _perturb(instr: EditInstruction, rng: np.random.Generator) -> EditInstruction:
    """A visibly different parameterization of the same instruction kind."""
    if instr.kind in (HUE, RECOLOR):
        shift = np.deg2rad(rng.uniform(80.0, 150.0)) * rng.choice([-1.0, 1.0])
        return EditInstruction(instr.kind, instr.target_id,
                               instr.hue_angle + shift, instr.gain)
    if instr.kind == BRIGHT:
        flipped = 1.0 / instr.gain
        return EditInstruction(instr.kind, instr.target_id, 0.0,
                               gain=float(np.clip(flipped + rng.uniform(0.15, 0.3),
                                                  0.4, 1.9)))
    if instr.kind == GRAY:  # replace by a strong hue rotation instead
        return EditInstruction(HUE, hue_angle=np.deg2rad(rng.uniform(100, 170)))
    return instr


def joint_edit(img_x: np.ndarray, img_y: np.ndarray, instr: EditInstruction,
               id_x: np.ndarray | None = None, id_y: np.ndarray | None = None,
               corruption: str = CORRUPT_NONE,
               rng: np.random.Generator | None = None):
    """Concatenate the two views side by side, edit the canvas, split back.

    Corruption modes simulate editor failures: `noop` leaves the canvas
    untouched, `half_only` edits only the left half, `perturbed` edits the
    halves with different parameters.
    """
    if img_x.shape != img_y.shape:
        raise ValueError(f"joint_edit: image shapes differ: {img_x.shape} vs {img_y.shape}")
    if instr.kind not in KINDS:
        raise ValueError(f"unknown instruction kind {instr.kind!r}")
    if corruption not in CORRUPTIONS:
        raise ValueError(f"unknown corruption mode {corruption!r}")

    W = img_x.shape[1]
    canvas = np.concatenate([img_x, img_y], axis=1)
    ids = None
    if id_x is not None and id_y is not None:
        ids = np.concatenate([id_x, id_y], axis=1)

    if corruption == CORRUPT_NOOP:
        edited = canvas.copy()
    elif corruption == CORRUPT_NONE:
        edited = apply_instruction(canvas, instr, ids)
    elif corruption == CORRUPT_HALF:
        edited = canvas.copy()
        edited[:, :W] = apply_instruction(img_x, instr, id_x)
    else:  # perturbed per half
        if rng is None:
            rng = np.random.default_rng(0)
        other = _perturb(instr, rng)
        edited = np.concatenate([apply_instruction(img_x, instr, id_x),
                                 apply_instruction(img_y, other, id_y)], axis=1)
    return edited[:, :W], edited[:, W:]
