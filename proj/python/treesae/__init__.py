"""Tree sparse autoencoders: training, reallocation and hierarchy audits."""

from ._core import (
    Allocation,
    Checkpoint,
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    TrainResult,
    generate,
    greedy_allocate,
    load_dataset,
    resume,
    save_dataset,
    set_log_level,
    train,
    two_feature_check,
)

__all__ = [
    "Allocation",
    "Checkpoint",
    "ConfigError",
    "DimensionError",
    "FormatError",
    "NumericError",
    "TrainResult",
    "generate",
    "greedy_allocate",
    "load_dataset",
    "resume",
    "save_dataset",
    "set_log_level",
    "train",
    "two_feature_check",
]
