"""Anchor grid generation and RPN training-target assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import encode_array, iou_matrix

# Labels used in RpnTargets.labels.
POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

_SQRT2 = math.sqrt(2.0)

#: Tuned anchor configuration: 4 sizes x 4 aspect factors = 16 anchors per cell.
DEFAULT_SIZES = (32.0, 64.0, 128.0, 256.0)
DEFAULT_RATIOS = (
    (1.0, 1.0),
    (1.0 / _SQRT2, 2.0 / _SQRT2),
    (2.0 / _SQRT2, 1.0 / _SQRT2),
    (2.0, 2.0),
)


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor layout: base pixel sizes, (width, height) factors per ratio,
    and the feature-map stride in pixels."""

    sizes: tuple[float, ...] = DEFAULT_SIZES
    ratios: tuple[tuple[float, float], ...] = DEFAULT_RATIOS
    stride: int = 32

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("anchor sizes must be non-empty")
        if not self.ratios:
            raise ValueError("anchor ratios must be non-empty")
        if self.stride <= 0:
            raise ValueError(f"stride must be positive, got {self.stride}")

    @property
    def per_cell(self) -> int:
        return len(self.sizes) * len(self.ratios)


@dataclass
class RpnTargets:
    """Per-anchor training targets.

    labels holds POSITIVE / NEGATIVE / IGNORE per anchor; deltas holds the
    regression target for positive anchors (zeros elsewhere); sample_indices
    is the seeded classification minibatch (positives then negatives).
    """

    labels: np.ndarray
    deltas: np.ndarray
    sample_indices: np.ndarray
    positive_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, int))


def generate_anchors(spec: AnchorSpec, feature_h: int, feature_w: int) -> np.ndarray:
    """Tile the anchor set over a feature map.

    Returns an ``(feature_h * feature_w * per_cell, 4)`` array of corner
    boxes. Ordering is row-major over cells, then size-major, then
    ratio-major within a cell; anchor centers sit at cell centers,
    ``((col + 0.5) * stride, (row + 0.5) * stride)``.
    """
    if feature_h <= 0 or feature_w <= 0:
        raise ValueError(f"feature dims must be positive, got {feature_h}x{feature_w}")
    half = np.array(
        [
            [0.5 * size * wf, 0.5 * size * hf]
            for size in spec.sizes
            for (wf, hf) in spec.ratios
        ],
        dtype=np.float64,
    )  # (A, 2) half-extents
    cy, cx = np.meshgrid(
        (np.arange(feature_h) + 0.5) * spec.stride,
        (np.arange(feature_w) + 0.5) * spec.stride,
        indexing="ij",
    )
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # (cells, 2)
    x1y1 = centers[:, None, :] - half[None, :, :]
    x2y2 = centers[:, None, :] + half[None, :, :]
    anchors = np.concatenate([x1y1, x2y2], axis=2)
    return anchors.reshape(-1, 4)


def assign_rpn_targets(
    anchors: np.ndarray,
    gts: np.ndarray,
    lo: float,
    hi: float,
    n_cls: int,
    rng_seed: int,
) -> RpnTargets:
    """Label anchors against ground-truth boxes and sample a minibatch.

    An anchor is positive when its best IoU exceeds ``hi`` or when it is the
    best-matching anchor for some ground truth (so every ground truth gets at
    least one positive); negative when its best IoU is below ``lo``; ignored
    otherwise. The minibatch holds up to ``n_cls // 2`` positives, topped up
    with negatives to at most ``n_cls``, drawn without replacement by a
    generator seeded with ``rng_seed``.
    """
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"need 0 <= lo < hi <= 1, got lo={lo} hi={hi}")
    anchors = np.asarray(anchors, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    n = anchors.shape[0]
    rng = np.random.default_rng(rng_seed)

    labels = np.full(n, IGNORE, dtype=np.int8)
    deltas = np.zeros((n, 4), dtype=np.float64)

    if gts.shape[0] == 0:
        labels[:] = NEGATIVE
        sample = sample_balanced(
            np.zeros(0, dtype=np.int64), np.arange(n), n_cls, rng
        )
        return RpnTargets(labels, deltas, sample, np.zeros(0, dtype=np.int64))

    ious = iou_matrix(anchors, gts)  # (n, G)
    best_iou = ious.max(axis=1)
    best_gt = ious.argmax(axis=1)

    labels[best_iou < lo] = NEGATIVE
    labels[best_iou > hi] = POSITIVE
    # Coverage fallback: the top anchor per ground truth is positive even
    # below hi (ties resolve to the lowest anchor index via argmax).
    anchor_for_gt = ious.argmax(axis=0)
    labels[anchor_for_gt] = POSITIVE
    best_gt[anchor_for_gt] = np.arange(gts.shape[0])

    pos = np.flatnonzero(labels == POSITIVE)
    deltas[pos] = encode_array(anchors[pos], gts[best_gt[pos]])

    sample = sample_balanced(pos, np.flatnonzero(labels == NEGATIVE), n_cls, rng)
    return RpnTargets(labels, deltas, sample, pos)


def sample_balanced(pos: np.ndarray, neg: np.ndarray, n_total: int, rng) -> np.ndarray:
    """Draw up to ``n_total // 2`` positives, topped up with negatives to at
    most ``n_total``, uniformly without replacement."""
    n_pos = min(len(pos), n_total // 2)
    if len(pos) > n_pos:
        pos = np.sort(rng.choice(pos, size=n_pos, replace=False))
    n_neg = min(len(neg), n_total - n_pos)
    if len(neg) > n_neg:
        neg = np.sort(rng.choice(neg, size=n_neg, replace=False))
    return np.concatenate([pos, neg]).astype(np.int64)
