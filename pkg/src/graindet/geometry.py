"""Axis-aligned box arithmetic: IoU, delta coding, clipping, non-maximum suppression.

Boxes use the corner convention (x1, y1, x2, y2) with continuous pixel
coordinates and x2 > x1, y2 > y1. Scalar operations work on :class:`Box`;
the ``*_array`` variants operate on ``(N, 4)`` float arrays and are the
workhorses inside the detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Log-space size deltas are clamped before exponentiation so that an
# untrained regression head cannot produce overflowing boxes.
DELTA_CLAMP = 4.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(
                f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2}) "
                "requires x2 > x1 and y2 > y1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class BoxDelta:
    """Box offsets relative to an anchor: center shifts normalized by the
    anchor extent plus log-space width/height ratios. Dimensionless."""

    dx: float
    dy: float
    dw: float
    dh: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dw, self.dh)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def encode(anchor: Box, target: Box) -> BoxDelta:
    """Express ``target`` as offsets from ``anchor``."""
    acx = 0.5 * (anchor.x1 + anchor.x2)
    acy = 0.5 * (anchor.y1 + anchor.y2)
    tcx = 0.5 * (target.x1 + target.x2)
    tcy = 0.5 * (target.y1 + target.y2)
    return BoxDelta(
        dx=(tcx - acx) / anchor.width,
        dy=(tcy - acy) / anchor.height,
        dw=math.log(target.width / anchor.width),
        dh=math.log(target.height / anchor.height),
    )


def decode(anchor: Box, delta: BoxDelta, clamp: float = DELTA_CLAMP) -> Box:
    """Apply ``delta`` to ``anchor``. Size deltas are clamped to ``±clamp``."""
    dw = min(max(delta.dw, -clamp), clamp)
    dh = min(max(delta.dh, -clamp), clamp)
    cx = 0.5 * (anchor.x1 + anchor.x2) + delta.dx * anchor.width
    cy = 0.5 * (anchor.y1 + anchor.y2) + delta.dy * anchor.height
    w = math.exp(dw) * anchor.width
    h = math.exp(dh) * anchor.height
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def clip_box(box: Box, width: float, height: float) -> Box | None:
    """Clip a box to image bounds; None if nothing remains."""
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, 0.0), width)
    y2 = min(max(box.y2, 0.0), height)
    if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
        return None
    return Box(x1, y1, x2, y2)


def nms(
    candidates: list[tuple[Box, float]], iou_threshold: float
) -> list[tuple[Box, float]]:
    """Greedy non-maximum suppression.

    Candidates are ranked by descending score (ties broken by original
    index); a candidate is suppressed when its IoU with an already kept box
    exceeds ``iou_threshold``. Returns the kept (box, score) pairs in score
    order.
    """
    if not candidates:
        return []
    boxes = boxes_to_array([b for b, _ in candidates])
    scores = np.array([s for _, s in candidates], dtype=np.float64)
    keep = nms_indices(boxes, scores, iou_threshold)
    return [candidates[i] for i in keep]


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` corner-format arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore"):
        out = np.where(union > 0.0, inter / union, 0.0)
    return out


def nms_indices(
    boxes: np.ndarray, scores: np.ndarray, iou_threshold: float
) -> list[int]:
    """Greedy NMS over array inputs; returns kept indices in score order.

    Equal scores keep the lower original index first, so the result is
    deterministic for any input.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if boxes.shape[0] == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    keep: list[int] = []
    alive = order.copy()
    while alive.size > 0:
        i = alive[0]
        keep.append(int(i))
        rest = alive[1:]
        if rest.size == 0:
            break
        ix1 = np.maximum(x1[i], x1[rest])
        iy1 = np.maximum(y1[i], y1[rest])
        ix2 = np.minimum(x2[i], x2[rest])
        iy2 = np.minimum(y2[i], y2[rest])
        iw = np.clip(ix2 - ix1, 0.0, None)
        ih = np.clip(iy2 - iy1, 0.0, None)
        inter = iw * ih
        ov = inter / (areas[i] + areas[rest] - inter)
        alive = rest[ov <= iou_threshold]
    return keep


def encode_array(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Vectorized :func:`encode` over matching ``(N, 4)`` arrays."""
    anchors = np.asarray(anchors, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    tcx = targets[:, 0] + 0.5 * tw
    tcy = targets[:, 1] + 0.5 * th
    return np.stack(
        [(tcx - acx) / aw, (tcy - acy) / ah, np.log(tw / aw), np.log(th / ah)],
        axis=1,
    )


def decode_array(
    anchors: np.ndarray, deltas: np.ndarray, clamp: float = DELTA_CLAMP
) -> np.ndarray:
    """Vectorized :func:`decode`; returns ``(N, 4)`` corner boxes."""
    anchors = np.asarray(anchors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = np.exp(np.clip(deltas[:, 2], -clamp, clamp)) * aw
    h = np.exp(np.clip(deltas[:, 3], -clamp, clamp)) * ah
    return np.stack(
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1
    )


def clip_array(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Clip ``(N, 4)`` boxes to ``[0, width] × [0, height]``."""
    boxes = np.asarray(boxes, dtype=np.float64)
    out = np.empty_like(boxes)
    out[:, 0] = np.clip(boxes[:, 0], 0.0, width)
    out[:, 1] = np.clip(boxes[:, 1], 0.0, height)
    out[:, 2] = np.clip(boxes[:, 2], 0.0, width)
    out[:, 3] = np.clip(boxes[:, 3], 0.0, height)
    return out


def boxes_to_array(boxes: list[Box]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float64 array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[Box]:
    """Inverse of :func:`boxes_to_array`."""
    return [Box(*map(float, row)) for row in np.asarray(arr)]
