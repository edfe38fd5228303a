"""Fingerprint pore detection with a small fully convolutional network."""

from ._core import (
    EVALUATION_MARGIN,
    RECEPTIVE_FIELD,
    CheckpointError,
    Model,
    evaluate_image,
    exclude_border,
    generate_dataset,
    load_image,
    match,
    metrics_from_rates,
    nms,
    postprocess_proposed,
    save_image,
    synthesize,
    traditional_postprocess,
    train,
)

__all__ = [
    "EVALUATION_MARGIN",
    "RECEPTIVE_FIELD",
    "CheckpointError",
    "Model",
    "evaluate_image",
    "exclude_border",
    "generate_dataset",
    "load_image",
    "match",
    "metrics_from_rates",
    "nms",
    "postprocess_proposed",
    "save_image",
    "synthesize",
    "traditional_postprocess",
    "train",
]
