"""
Toy semi-supervised segmentation harness
Procedural shapes world, linear softmax student with EMA teacher, OT pseudo-labels
"""

__version__ = "1.0.0"

from .settings import CONFIG_KEYS, TrainConfig, load_config
from .shapes import ShapesConfig, ShapesSample, color_to_class, generate_shapes
from .features import FEATURE_DIM, extract_features
from .model import LinearSoftmaxModel
from .augment import AugmentedView, Box, cutmix_box, horizontal_flip, strong_augment, weak_augment
from .metrics import ConfusionMatrix
from .harness import (
    AblationReport,
    RunResult,
    build_data,
    evaluate_miou,
    poly_lr,
    run_ablation,
    run_scaling,
    run_training,
    train_step,
)

__all__ = [
    "CONFIG_KEYS",
    "TrainConfig",
    "load_config",
    "ShapesConfig",
    "ShapesSample",
    "color_to_class",
    "generate_shapes",
    "FEATURE_DIM",
    "extract_features",
    "LinearSoftmaxModel",
    "AugmentedView",
    "Box",
    "cutmix_box",
    "horizontal_flip",
    "strong_augment",
    "weak_augment",
    "ConfusionMatrix",
    "AblationReport",
    "RunResult",
    "build_data",
    "evaluate_miou",
    "poly_lr",
    "run_ablation",
    "run_scaling",
    "run_training",
    "train_step",
]
