from .model import ArchitectureConfig, EditorModel, Hooks
from .flow import fm_interpolate, fm_loss, sample
from .structural import StructuralPath, train_stage1
from .semantic import SemanticPath, encode_reference, train_stage2
from .pretrain import pretrain_backbone
from .train_common import TrainConfig

__all__ = [
    "ArchitectureConfig", "EditorModel", "Hooks", "fm_interpolate", "fm_loss",
    "sample", "StructuralPath", "train_stage1", "SemanticPath",
    "encode_reference", "train_stage2", "TrainConfig", "pretrain_backbone",
]
