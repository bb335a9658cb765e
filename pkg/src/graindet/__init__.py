"""Dual-phase grain detection and disease classification.

Phase one localizes the significant region of a scene with an anchor-based
two-stage detector; phase two classifies the cropped region with a small
conv-net. The package also ships the synthetic-scene testbed, the metric
suite (IoU, mAP, accuracy, k-fold protocol), and a CLI binding the pieces
into reproducible experiments.
"""

from .anchors import AnchorSpec, RpnTargets, assign_rpn_targets, generate_anchors
from .classifier import CropClassifier
from .dataio import (
    CLASS_LABELS,
    Annotation,
    CropRecord,
    ImageRecord,
    load_crop_manifest,
    load_manifest,
    read_image,
    save_crop_manifest,
    save_manifest,
    write_image,
)
from .detector import Detection, GrainDetector, frcnn_loss, select_proposals
from .errors import ConfigError, DataError, GraindetError
from .geometry import Box, BoxDelta, clip_box, decode, encode, iou, nms
from .metrics import (
    EvalReport,
    FoldPlan,
    accuracy,
    average_precision,
    confusion_matrix,
    cross_validate,
    make_folds,
    match_detections,
    mean_std,
)
from .pipeline import DerivationRule, derive_secondary, infer_pipeline, select_crops
from .roi import crop_resize, resize_image, roi_pool, roi_pool_backward
from .synth import SceneSpec, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "AnchorSpec",
    "Annotation",
    "Box",
    "BoxDelta",
    "CLASS_LABELS",
    "ConfigError",
    "CropClassifier",
    "CropRecord",
    "DataError",
    "DerivationRule",
    "Detection",
    "EvalReport",
    "FoldPlan",
    "GraindetError",
    "GrainDetector",
    "ImageRecord",
    "RpnTargets",
    "SceneSpec",
    "accuracy",
    "assign_rpn_targets",
    "average_precision",
    "clip_box",
    "confusion_matrix",
    "crop_resize",
    "cross_validate",
    "decode",
    "derive_secondary",
    "encode",
    "frcnn_loss",
    "generate_anchors",
    "generate_dataset",
    "infer_pipeline",
    "iou",
    "load_crop_manifest",
    "load_manifest",
    "make_folds",
    "match_detections",
    "mean_std",
    "nms",
    "read_image",
    "resize_image",
    "roi_pool",
    "roi_pool_backward",
    "save_crop_manifest",
    "save_manifest",
    "select_crops",
    "select_proposals",
    "write_image",
]
