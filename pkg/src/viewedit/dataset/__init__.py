from .scenes import SceneConfig, generate_scene, look_at_camera, scene_scale_of
from .toyedit import (EditInstruction, apply_instruction, build_vocabulary,
                      joint_edit)
from .features import extract_features
from .filtering import FilterConfig, PairScores, filter_pair, score_pair
from .build import (DatasetBuildConfig, RenderCache, TrainingSample,
                    build_dataset, build_single_view_samples,
                    load_dataset_file, make_pair_sample, sample_pair)

__all__ = [
    "SceneConfig", "generate_scene", "look_at_camera", "scene_scale_of",
    "EditInstruction", "apply_instruction", "build_vocabulary", "joint_edit",
    "extract_features", "FilterConfig", "PairScores", "filter_pair",
    "score_pair", "DatasetBuildConfig", "RenderCache", "TrainingSample",
    "build_dataset", "build_single_view_samples", "load_dataset_file",
    "make_pair_sample", "sample_pair",
]
