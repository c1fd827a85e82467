"""Augmentation, datasets and the training loop."""

from .augment import (
    AugmentParams,
    Transform,
    augment_image,
    augment_stack,
    build_augmented_dataset,
    epoch_permutation,
    sample_transform,
)
from .config import DataConfig, RunConfig, TrainingConfig, load_config, parse_config
from .dataset import (
    Normalizer,
    ProjectionDataset,
    load_projection_dir,
    read_labels,
    split_dataset,
    split_of,
    write_labels,
)
from .trainer import (
    Regressor,
    TrainReport,
    build_and_train,
    evaluate,
    improvement_epochs,
    regression_metrics,
    train,
)

__all__ = [
    "AugmentParams",
    "DataConfig",
    "Normalizer",
    "ProjectionDataset",
    "Regressor",
    "RunConfig",
    "TrainReport",
    "TrainingConfig",
    "Transform",
    "augment_image",
    "augment_stack",
    "build_and_train",
    "build_augmented_dataset",
    "epoch_permutation",
    "evaluate",
    "improvement_epochs",
    "load_config",
    "load_projection_dir",
    "parse_config",
    "read_labels",
    "regression_metrics",
    "sample_transform",
    "split_dataset",
    "split_of",
    "train",
    "write_labels",
]
