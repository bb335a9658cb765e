"""Pipeline orchestration: derive the crop dataset from detections, and run
image -> detections -> crops -> labels end to end.

Each source image contributes at most ``max_crops`` crops. The first crop is
always the highest-confidence detection. Further crops must clear a
confidence floor and, when ground truth is available (dataset derivation),
must also overlap some ground-truth box; at pure inference time the overlap
test is dropped since no ground truth exists. Crops are labeled by the class
of their best-overlapping ground-truth box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classifier import CropClassifier
from .dataio import CropRecord, ImageRecord
from .detector import Detection, GrainDetector
from .geometry import Box, boxes_to_array, iou_matrix
from .roi import crop_resize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DerivationRule:
    """Crop-selection thresholds for building the secondary dataset."""

    max_crops: int = 2
    second_box_confidence: float = 0.90
    second_box_gt_iou: float = 0.5
    crop_width: int = 300
    crop_height: int = 250

    def __post_init__(self):
        if self.max_crops < 1:
            raise ValueError("max_crops must be >= 1")
        for name in ("second_box_confidence", "second_box_gt_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")


def select_crops(
    detections: list[Detection],
    rule: DerivationRule,
    gt_boxes: np.ndarray | None = None,
) -> list[Detection]:
    """Pick the detections worth cropping, best first.

    The top detection is always taken. Subsequent ones need confidence of at
    least ``second_box_confidence`` and, when ``gt_boxes`` is given, IoU of at
    least ``second_box_gt_iou`` with some ground-truth box.
    """
    if not detections:
        return []
    ranked = sorted(
        range(len(detections)), key=lambda i: (-detections[i].confidence, i)
    )
    chosen = [detections[ranked[0]]]
    for i in ranked[1:]:
        if len(chosen) >= rule.max_crops:
            break
        det = detections[i]
        if det.confidence < rule.second_box_confidence:
            continue
        if gt_boxes is not None and len(gt_boxes):
            ious = iou_matrix(np.array([det.box.as_tuple()]), gt_boxes)[0]
            if ious.max() < rule.second_box_gt_iou:
                continue
        chosen.append(det)
    return chosen


def _label_for(box: Box, record: ImageRecord) -> str:
    """Class of the ground-truth box best overlapping ``box``."""
    gts = boxes_to_array([a.box for a in record.annotations])
    ious = iou_matrix(np.array([box.as_tuple()]), gts)[0]
    return record.annotations[int(ious.argmax())].label


def derive_secondary(
    records: list[ImageRecord],
    images: list[np.ndarray],
    detector: GrainDetector,
    rule: DerivationRule = DerivationRule(),
) -> tuple[list[np.ndarray], list[CropRecord]]:
    """Build the secondary crop dataset from an annotated set.

    Returns crop images (rule-sized) plus their records, in source order.
    Images on which the detector finds nothing contribute no crops and are
    logged.
    """
    crops: list[np.ndarray] = []
    out: list[CropRecord] = []
    for record, image in zip(records, images):
        if not record.annotations:
            raise ValueError(f"{record.path}: derivation needs ground-truth boxes")
        detections = detector.predict(image)
        if not detections:
            logger.warning("%s: no detections, contributing zero crops", record.path)
            continue
        gts = boxes_to_array([a.box for a in record.annotations])
        for rank, det in enumerate(select_crops(detections, rule, gts)):
            crop = crop_resize(image, det.box, rule.crop_width, rule.crop_height)
            label = _label_for(det.box, record)
            stem = record.path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
            crops.append(crop)
            out.append(
                CropRecord(
                    crop_path=f"crops/{stem}_crop{rank}.ppm",
                    source_image=record.path,
                    source_box=det.box,
                    class_label=label,
                    confidence=det.confidence,
                )
            )
    return crops, out


def class_counts(labels, class_names) -> dict:
    counts = {c: 0 for c in class_names}
    for lbl in labels:
        counts[lbl] += 1
    return counts


def infer_pipeline(
    image: np.ndarray,
    detector: GrainDetector,
    classifier: CropClassifier,
    rule: DerivationRule = DerivationRule(),
) -> list[tuple[Box, str, float]]:
    """Detect regions, crop them, classify each crop.

    Returns (box, class label, classifier confidence) per kept detection,
    in detection order. No ground truth is involved, so crop selection uses
    the confidence rule alone.
    """
    detections = detector.predict(image)
    kept = select_crops(detections, rule, gt_boxes=None)
    results = []
    for det in kept:
        crop = crop_resize(image, det.box, rule.crop_width, rule.crop_height)
        label, probs = classifier.classify(crop)
        results.append((det.box, label, float(probs.max())))
    return results
