"""CNN engine for facial expression recognition.

Thin wrapper around the native module: tensors cross the boundary as numpy
arrays, models as opaque handles with forward/predict/save/load.
"""

from ._core import (
    ArchParseError,
    ConfigError,
    DataError,
    Model,
    ShapeError,
    build_model,
    evaluate,
    grad_check,
    hog_batch,
    hog_extract,
    load_fer_csv,
    make_synthetic_splits,
    parse_arch,
    preset_arch,
    sanity_initial_loss,
    softmax_loss,
    train,
)

__all__ = [
    "ArchParseError",
    "ConfigError",
    "DataError",
    "Model",
    "ShapeError",
    "build_model",
    "evaluate",
    "grad_check",
    "hog_batch",
    "hog_extract",
    "load_fer_csv",
    "make_synthetic_splits",
    "parse_arch",
    "preset_arch",
    "sanity_initial_loss",
    "softmax_loss",
    "train",
]
