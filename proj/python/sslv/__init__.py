"""Semi-supervised surgical-video learning primitives.

Thin Python surface over the C++ core: probability utilities, frame
samplers, pseudo-label scoring and filtering, confidence-threshold
calibration, synthetic dataset generators, and the experiment runner.
"""

from sslv._core import (
    IGNORE,
    ConfigParseError,
    IntegrityError,
    InvalidInputError,
    PrototypeStore,
    argmax_class,
    cac_thresholds,
    classification_metrics,
    clp_triplet_loss,
    dice_score,
    dual_temporal_views,
    generate_clip_dataset,
    generate_pseudo_mask,
    generate_seg_dataset,
    long_short_sample,
    percentile,
    reliability_score,
    retain_top_half,
    run_experiment,
    segment_random_sample,
    softmax,
    tcr_loss,
    uniform_sample,
)

__all__ = [
    "IGNORE",
    "ConfigParseError",
    "IntegrityError",
    "InvalidInputError",
    "PrototypeStore",
    "argmax_class",
    "cac_thresholds",
    "classification_metrics",
    "clp_triplet_loss",
    "dice_score",
    "dual_temporal_views",
    "generate_clip_dataset",
    "generate_pseudo_mask",
    "generate_seg_dataset",
    "long_short_sample",
    "percentile",
    "reliability_score",
    "retain_top_half",
    "run_experiment",
    "segment_random_sample",
    "softmax",
    "tcr_loss",
    "uniform_sample",
]
