"""Detection and classification metrics plus the k-fold protocol.

Detections are matched to ground truth greedily in descending confidence;
a detection is a true positive when its IoU with an unclaimed ground-truth
box exceeds the threshold. Average precision is the exact area under the
precision-recall envelope (all-point interpolation), so mAP over a single
class equals that class's AP.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import iou_matrix


def match_detections(
    detections: np.ndarray,
    confidences: np.ndarray,
    ground_truths: np.ndarray,
    iou_threshold: float = 0.5,
) -> np.ndarray:
    """Flag each detection as TP (True) or FP (False).

    Detections are visited in descending confidence (ties keep input
    order); each claims the unmatched ground truth with the highest IoU,
    provided that IoU exceeds ``iou_threshold``. Each ground truth can be
    claimed once; unmatched ground truths count as false negatives through
    ``total_gt`` in :func:`average_precision`.
    """
    detections = np.asarray(detections, dtype=np.float64).reshape(-1, 4)
    confidences = np.asarray(confidences, dtype=np.float64)
    ground_truths = np.asarray(ground_truths, dtype=np.float64).reshape(-1, 4)
    n, g = detections.shape[0], ground_truths.shape[0]
    flags = np.zeros(n, dtype=bool)
    if n == 0 or g == 0:
        return flags
    ious = iou_matrix(detections, ground_truths)
    order = np.argsort(-confidences, kind="stable")
    taken = np.zeros(g, dtype=bool)
    for i in order:
        row = np.where(taken, -1.0, ious[i])
        j = int(row.argmax())
        if row[j] > iou_threshold:
            flags[i] = True
            taken[j] = True
    return flags


def average_precision(
    flags: np.ndarray, confidences: np.ndarray, total_gt: int
) -> float:
    """Area under the precision-recall envelope for one ranked class."""
    flags = np.asarray(flags, dtype=bool)
    confidences = np.asarray(confidences, dtype=np.float64)
    if total_gt <= 0:
        return 0.0
    if flags.size == 0:
        return 0.0
    order = np.argsort(-confidences, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / total_gt
    precision = tp / (tp + fp)
    # Envelope: precision at recall r is the max precision at recall >= r.
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def accuracy(predictions, labels) -> float:
    """Fraction of predictions equal to labels."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(
            f"shape mismatch: predictions {predictions.shape} vs labels {labels.shape}"
        )
    if predictions.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(predictions == labels))


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """Counts ``out[i, j]`` of true class i predicted as class j."""
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, t in zip(np.asarray(predictions), np.asarray(labels)):
        out[int(t), int(p)] += 1
    return out


@dataclass
class FoldPlan:
    """k disjoint validation folds covering range(n) with sizes within 1."""

    k: int
    seed: int
    folds: list[np.ndarray]

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train_indices, validation_indices) for one fold."""
        val = self.folds[fold]
        train = np.concatenate([f for i, f in enumerate(self.folds) if i != fold])
        return np.sort(train), np.sort(val)


def make_folds(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    if k < 2 or n < k:
        raise ValueError(f"need n >= k >= 2, got n={n} k={k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return FoldPlan(k=k, seed=seed, folds=folds)


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1)."""
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def format_mean_std(values, scale: float = 1.0) -> str:
    m, s = mean_std(values)
    return f"{m * scale:.2f} ± {s * scale:.2f}"


@dataclass
class EvalReport:
    """Per-fold metric values with mean ± sample-std aggregates."""

    per_fold: list[dict] = field(default_factory=list)

    def metric_values(self, name: str) -> list[float]:
        return [fold[name] for fold in self.per_fold]

    def summary(self) -> dict:
        out = {}
        names = sorted({k for fold in self.per_fold for k in fold
                        if isinstance(fold[k], (int, float))})
        for name in names:
            vals = self.metric_values(name)
            m, s = mean_std(vals)
            out[name] = {
                "mean": m,
                "std": s,
                "formatted": f"{m:.2f} ± {s:.2f}",
                "per_fold": vals,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"folds": self.per_fold, "summary": self.summary()},
            indent=2, sort_keys=True,
        )


def cross_validate(train_fn, eval_fn, plan: FoldPlan) -> EvalReport:
    """Run the fold protocol: train on k-1 folds, evaluate on the held-out
    fold, and aggregate the per-fold metric dicts."""
    report = EvalReport()
    for fold in range(plan.k):
        train_idx, val_idx = plan.split(fold)
        model = train_fn(train_idx, fold)
        metrics = eval_fn(model, val_idx, fold)
        report.per_fold.append({"fold": fold, **metrics})
    return report
