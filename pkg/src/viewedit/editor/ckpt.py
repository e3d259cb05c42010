"""Editor checkpointing: parameter container plus a JSON config sidecar."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..checkpoint import load_checkpoint, save_checkpoint
from .model import ArchitectureConfig, EditorModel


def save_editor(path, model: EditorModel) -> None:
    path = Path(path)
    save_checkpoint(path, model.state_arrays())
    meta = dataclasses.asdict(model.cfg)
    meta["semantic_layers"] = list(model.cfg.semantic_layers)
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True))


def load_editor(path, dtype=np.float32) -> EditorModel:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    meta["semantic_layers"] = tuple(meta["semantic_layers"])
    cfg = ArchitectureConfig(**meta)
    arrays = load_checkpoint(path)
    params = {k: Tensor(v.astype(dtype), requires_grad=False)
              for k, v in arrays.items()}
    return EditorModel(cfg, params=params, dtype=dtype)
