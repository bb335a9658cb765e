"""Phase one: single-class region detector with a VGG-style backbone.

The network runs in three stages. A stack of 3x3 conv + 2x max-pool levels
turns the input image into a feature map at stride ``2 ** len(channels)``
(640x480 at stride 32 gives 20x15 cells). A two-branch proposal head scores
every anchor as object/background and regresses box offsets; the top
proposals after decode, clip and NMS feed a small fully connected head that
classifies each pooled region and refines its box.

Training optimizes one joint objective per image:

    L = (1/N_cls) * sum(log loss) + lambda * (1/N_reg) * sum(smooth L1)

summed over the proposal and region stages, where the regression term only
covers positive examples and N_reg counts them (zero positives contribute
zero). Classification minibatches are sampled half positive where possible.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import net
from .anchors import (
    DEFAULT_RATIOS,
    AnchorSpec,
    RpnTargets,
    assign_rpn_targets,
    generate_anchors,
    sample_balanced,
)
from .dataio import Annotation
from .geometry import (
    Box,
    clip_array,
    decode_array,
    encode_array,
    iou_matrix,
)
from .geometry import nms_indices
from .roi import resize_image, roi_pool, roi_pool_backward

MIN_PROPOSAL_SIZE = 1.0  # px; degenerate decoded boxes are dropped


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float
    label: str = "grain"


@dataclass
class StageTargets:
    """Loss targets for one stage, aligned with that stage's output rows."""

    class_labels: np.ndarray   # (M,) int
    delta_targets: np.ndarray  # (M, 4)
    cls_indices: np.ndarray    # rows entering the classification term
    reg_indices: np.ndarray    # rows entering the regression term


def select_proposals(
    anchors: np.ndarray,
    objectness: np.ndarray,
    deltas: np.ndarray,
    image_w: int,
    image_h: int,
    nms_iou: float,
    keep_top: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Decode anchors, clip to the image, suppress overlaps, keep the best.

    Returns (boxes, scores) sorted by descending objectness; boxes whose
    clipped extent collapses below one pixel are dropped before NMS.
    """
    boxes = clip_array(decode_array(anchors, deltas), image_w, image_h)
    ok = np.flatnonzero(
        (boxes[:, 2] - boxes[:, 0] >= MIN_PROPOSAL_SIZE)
        & (boxes[:, 3] - boxes[:, 1] >= MIN_PROPOSAL_SIZE)
    )
    boxes = boxes[ok]
    scores = np.asarray(objectness, dtype=np.float64)[ok]
    keep = nms_indices(boxes, scores, nms_iou)[:keep_top]
    return boxes[keep], scores[keep]


def frcnn_loss(
    rpn_logits: np.ndarray,
    rpn_deltas: np.ndarray,
    rpn_targets: StageTargets,
    rcnn_logits: np.ndarray,
    rcnn_deltas: np.ndarray,
    rcnn_targets: StageTargets,
    reg_weight: float,
) -> tuple[dict, tuple]:
    """Joint two-stage loss and its gradients w.r.t. the four output arrays."""
    comp = {}
    grads = []
    for prefix, logits, deltas, tgt in (
        ("rpn", rpn_logits, rpn_deltas, rpn_targets),
        ("rcnn", rcnn_logits, rcnn_deltas, rcnn_targets),
    ):
        g_logits = np.zeros_like(logits)
        g_deltas = np.zeros_like(deltas)
        cls_idx = tgt.cls_indices
        if cls_idx.size:
            losses, g = net.softmax_cross_entropy(
                logits[cls_idx], tgt.class_labels[cls_idx]
            )
            comp[f"{prefix}_cls"] = float(losses.sum()) / cls_idx.size
            g_logits[cls_idx] = g / cls_idx.size
        else:
            comp[f"{prefix}_cls"] = 0.0
        reg_idx = tgt.reg_indices
        if reg_idx.size:
            loss, g = net.smooth_l1(deltas[reg_idx], tgt.delta_targets[reg_idx])
            comp[f"{prefix}_reg"] = reg_weight * loss / reg_idx.size
            g_deltas[reg_idx] = reg_weight * g / reg_idx.size
        else:
            comp[f"{prefix}_reg"] = 0.0
        grads.extend([g_logits, g_deltas])
    comp["total"] = comp["rpn_cls"] + comp["rpn_reg"] + comp["rcnn_cls"] + comp["rcnn_reg"]
    return comp, tuple(grads)


def rpn_stage_targets(t: RpnTargets) -> StageTargets:
    labels = np.clip(t.labels, 0, 1).astype(np.int64)
    return StageTargets(labels, t.deltas, t.sample_indices, t.positive_indices)


def assign_rcnn_targets(
    proposals: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    fg_iou: float,
    batch: int,
    rng_seed: int,
) -> tuple[np.ndarray, StageTargets]:
    """Label proposals against ground truth and sample the head minibatch.

    A proposal is foreground when its best IoU reaches ``fg_iou`` or when it
    is the best proposal for some ground truth; class labels are the matched
    ground-truth class plus one (0 is background). Returns the sampled row
    indices into ``proposals`` and targets aligned with that sample.
    """
    rng = np.random.default_rng(rng_seed)
    n = proposals.shape[0]
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, StageTargets(empty, np.zeros((0, 4)), empty, empty)
    if gt_boxes.shape[0] == 0:
        labels = np.zeros(n, dtype=np.int64)
        deltas = np.zeros((n, 4), dtype=np.float64)
    else:
        ious = iou_matrix(proposals, gt_boxes)
        best = ious.max(axis=1)
        match = ious.argmax(axis=1)
        fg = best >= fg_iou
        top_for_gt = ious.argmax(axis=0)
        fg[top_for_gt] = True
        match[top_for_gt] = np.arange(gt_boxes.shape[0])
        labels = np.where(fg, gt_classes[match] + 1, 0).astype(np.int64)
        deltas = np.zeros((n, 4), dtype=np.float64)
        fg_idx = np.flatnonzero(fg)
        deltas[fg_idx] = encode_array(proposals[fg_idx], gt_boxes[match[fg_idx]])
    sample = sample_balanced(
        np.flatnonzero(labels > 0), np.flatnonzero(labels == 0), batch, rng
    )
    s_labels = labels[sample]
    targets = StageTargets(
        class_labels=s_labels,
        delta_targets=deltas[sample],
        cls_indices=np.arange(sample.size, dtype=np.int64),
        reg_indices=np.flatnonzero(s_labels > 0),
    )
    return sample, targets


class _DetectorNet:
    """Static layer graph: backbone, proposal heads, region head."""

    def __init__(self, channels, anchors_per_cell, roi_size, head_units,
                 n_classes, seed, dtype=np.float32):
        rng = np.random.default_rng(seed)
        layers = []
        prev = 3
        for i, ch in enumerate(channels):
            layers.append(net.Conv2d(prev, ch, 3, padding=1, rng=rng,
                                     dtype=dtype, name=f"backbone.conv{i}"))
            layers.append(net.ReLU())
            layers.append(net.MaxPool2d(2, 2))
            prev = ch
        self.backbone = net.Sequential(layers)
        c = channels[-1]
        a = anchors_per_cell
        self.rpn_conv = net.Conv2d(c, c, 3, padding=1, rng=rng, dtype=dtype,
                                   name="rpn.conv")
        self.rpn_relu = net.ReLU()
        self.rpn_cls = net.Conv2d(c, 2 * a, 1, rng=rng, dtype=dtype, name="rpn.cls")
        self.rpn_reg = net.Conv2d(c, 4 * a, 1, rng=rng, dtype=dtype, name="rpn.reg")
        self.roi_size = roi_size
        self.fc = net.Dense(roi_size * roi_size * c, head_units, rng=rng,
                            dtype=dtype, name="head.fc")
        self.fc_relu = net.ReLU()
        self.cls_head = net.Dense(head_units, n_classes + 1, rng=rng,
                                  dtype=dtype, name="head.cls")
        self.reg_head = net.Dense(head_units, 4, rng=rng, dtype=dtype,
                                  name="head.reg")
        self.anchors_per_cell = a

    def params(self):
        out = list(self.backbone.params())
        for layer in (self.rpn_conv, self.rpn_cls, self.rpn_reg,
                      self.fc, self.cls_head, self.reg_head):
            out.extend(layer.params())
        return out

    def backbone_forward(self, image: np.ndarray, train=False) -> np.ndarray:
        return self.backbone.forward(image[None].astype(
            self.fc.weight.data.dtype, copy=False), train=train)

    def rpn_forward(self, feature, train=False):
        h = self.rpn_relu.forward(self.rpn_conv.forward(feature, train=train),
                                  train=train)
        logits = self.rpn_cls.forward(h, train=train).reshape(-1, 2)
        deltas = self.rpn_reg.forward(h, train=train).reshape(-1, 4)
        return logits, deltas

    def rpn_backward(self, g_logits, g_deltas, feature_shape):
        n, fh, fw, _ = feature_shape
        a = self.anchors_per_cell
        g_h = self.rpn_cls.backward(g_logits.reshape(n, fh, fw, 2 * a))
        g_h = g_h + self.rpn_reg.backward(g_deltas.reshape(n, fh, fw, 4 * a))
        return self.rpn_conv.backward(self.rpn_relu.backward(g_h))

    def rcnn_forward(self, feature_hwc, rois_feat, train=False):
        """Pool feature regions and run the region head.

        ``rois_feat`` is (R, 4) in feature coordinates. Returns logits,
        deltas, and the pooling caches for backward.
        """
        pooled = []
        caches = []
        for row in rois_feat:
            p, cache = roi_pool(feature_hwc, Box(*row), self.roi_size, self.roi_size)
            pooled.append(p)
            caches.append(cache)
        if not pooled:
            dtype = feature_hwc.dtype
            k = self.cls_head.weight.shape[1]
            return np.zeros((0, k), dtype), np.zeros((0, 4), dtype), []
        flat = np.stack(pooled).reshape(len(pooled), -1)
        h = self.fc_relu.forward(self.fc.forward(flat, train=train), train=train)
        return self.cls_head.forward(h, train=train), self.reg_head.forward(h, train=train), caches

    def rcnn_backward(self, g_logits, g_deltas, caches, feature_shape):
        if g_logits.shape[0] == 0:
            return np.zeros(feature_shape, dtype=g_logits.dtype)
        g_h = self.cls_head.backward(g_logits) + self.reg_head.backward(g_deltas)
        g_flat = self.fc.backward(self.fc_relu.backward(g_h))
        c = feature_shape[2]
        g_pooled = g_flat.reshape(-1, self.roi_size, self.roi_size, c)
        g_feat = np.zeros(feature_shape, dtype=g_flat.dtype)
        for g, cache in zip(g_pooled, caches):
            roi_pool_backward(g, cache, out=g_feat)
        return g_feat


class GrainDetector(BaseEstimator):
    """Detect-and-localize estimator for the significant region of a scene.

    fit(X, y) trains on a list of images (H, W, 3 float arrays) with per-image
    annotation lists; predict returns per-image detection lists. Images whose
    size differs from the configured input size are resampled (boxes scale
    along). Deterministic for a fixed seed.
    """

    def __init__(
        self,
        input_width=640,
        input_height=480,
        backbone_channels=(8, 16, 24, 32, 32),
        anchor_sizes=(32.0, 64.0, 128.0, 256.0),
        anchor_ratios=DEFAULT_RATIOS,
        rpn_lo=0.4,
        rpn_hi=0.8,
        proposal_nms_iou=0.8,
        proposals_kept=200,
        grain_threshold=0.6,
        detection_nms_iou=0.5,
        rpn_batch=256,
        rcnn_batch=64,
        rcnn_fg_iou=0.5,
        reg_loss_weight=10.0,
        learning_rate=1e-4,
        optimizer="adam",
        epochs=10,
        roi_size=7,
        head_units=64,
        class_names=("grain",),
        seed=0,
    ):
        self.input_width = input_width
        self.input_height = input_height
        self.backbone_channels = backbone_channels
        self.anchor_sizes = anchor_sizes
        self.anchor_ratios = anchor_ratios
        self.rpn_lo = rpn_lo
        self.rpn_hi = rpn_hi
        self.proposal_nms_iou = proposal_nms_iou
        self.proposals_kept = proposals_kept
        self.grain_threshold = grain_threshold
        self.detection_nms_iou = detection_nms_iou
        self.rpn_batch = rpn_batch
        self.rcnn_batch = rcnn_batch
        self.rcnn_fg_iou = rcnn_fg_iou
        self.reg_loss_weight = reg_loss_weight
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.epochs = epochs
        self.roi_size = roi_size
        self.head_units = head_units
        self.class_names = class_names
        self.seed = seed

    @property
    def stride(self) -> int:
        return 2 ** len(self.backbone_channels)

    def _validate(self):
        if self.input_width % self.stride or self.input_height % self.stride:
            raise ValueError(
                f"input {self.input_width}x{self.input_height} not divisible "
                f"by stride {self.stride}"
            )
        for name in ("rpn_lo", "rpn_hi", "proposal_nms_iou", "grain_threshold",
                     "detection_nms_iou", "rcnn_fg_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.rpn_lo >= self.rpn_hi:
            raise ValueError(f"rpn_lo must be < rpn_hi, got {self.rpn_lo} >= {self.rpn_hi}")
        if self.proposals_kept < 1:
            raise ValueError("proposals_kept must be >= 1")

    def anchor_spec(self) -> AnchorSpec:
        return AnchorSpec(
            sizes=tuple(float(s) for s in self.anchor_sizes),
            ratios=tuple((float(w), float(h)) for w, h in self.anchor_ratios),
            stride=self.stride,
        )

    @property
    def feature_shape(self) -> tuple[int, int]:
        return self.input_height // self.stride, self.input_width // self.stride

    def _build(self):
        self._validate()
        spec = self.anchor_spec()
        fh, fw = self.feature_shape
        self.anchors_ = generate_anchors(spec, fh, fw)
        self.net_ = _DetectorNet(
            tuple(self.backbone_channels), spec.per_cell, self.roi_size,
            self.head_units, len(self.class_names), self.seed,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("detector has no weights; call fit or load_weights")

    def _prepare(self, image: np.ndarray, annos) -> tuple:
        """Resize an image (and its boxes) to the configured input size."""
        h, w = image.shape[:2]
        sx = self.input_width / w
        sy = self.input_height / h
        img = resize_image(image, self.input_width, self.input_height)
        boxes = []
        classes = []
        for a in annos or []:
            box = a.box if isinstance(a, Annotation) else a
            label = a.label if isinstance(a, Annotation) else self.class_names[0]
            boxes.append([box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy])
            classes.append(self.class_names.index(label) if label in self.class_names else 0)
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        return img, boxes, np.asarray(classes, dtype=np.int64)

    def fit(self, X, y):
        """Train on images ``X`` with per-image annotation lists ``y``."""
        if len(X) != len(y):
            raise ValueError(f"got {len(X)} images but {len(y)} annotation lists")
        self._build()
        prepared = [self._prepare(img, annos) for img, annos in zip(X, y)]
        params = self.net_.params()
        opt = net.make_optimizer(self.optimizer, params, self.learning_rate)
        order_rng = np.random.default_rng((self.seed, 0xD0))
        self.history_ = []
        step = 0
        for epoch in range(self.epochs):
            order = order_rng.permutation(len(prepared))
            sums = {}
            for idx in order:
                img, boxes, classes = prepared[idx]
                comp = self._train_step(img, boxes, classes, step, opt)
                step += 1
                for k, v in comp.items():
                    sums[k] = sums.get(k, 0.0) + v
            means = {k: v / len(prepared) for k, v in sums.items()}
            self.history_.append({"epoch": epoch, **means})
        return self

    def _forward_rpn(self, image, train=False):
        feat_b = self.net_.backbone_forward(image, train=train)
        rpn_logits, rpn_deltas = self.net_.rpn_forward(feat_b, train=train)
        return feat_b, rpn_logits, rpn_deltas

    def _train_step(self, image, gt_boxes, gt_classes, step, opt):
        feat_b, rpn_logits, rpn_deltas = self._forward_rpn(image, train=True)
        objectness = net.softmax(rpn_logits)[:, 1]
        proposals, _ = select_proposals(
            self.anchors_, objectness, rpn_deltas,
            self.input_width, self.input_height,
            self.proposal_nms_iou, self.proposals_kept,
        )
        rpn_t = assign_rpn_targets(
            self.anchors_, gt_boxes, self.rpn_lo, self.rpn_hi,
            self.rpn_batch, rng_seed=(self.seed, 1, step),
        )
        sample, rcnn_t = assign_rcnn_targets(
            proposals, gt_boxes, gt_classes, self.rcnn_fg_iou,
            self.rcnn_batch, rng_seed=(self.seed, 2, step),
        )
        rois_feat = proposals[sample] / self.stride
        feature = feat_b[0]
        rcnn_logits, rcnn_deltas, caches = self.net_.rcnn_forward(
            feature, rois_feat, train=True
        )
        comp, (g_rpn_l, g_rpn_d, g_rcnn_l, g_rcnn_d) = frcnn_loss(
            rpn_logits, rpn_deltas, rpn_stage_targets(rpn_t),
            rcnn_logits, rcnn_deltas, rcnn_t, self.reg_loss_weight,
        )
        opt.zero_grad()
        dtype = feature.dtype
        g_feat = self.net_.rcnn_backward(
            g_rcnn_l.astype(dtype), g_rcnn_d.astype(dtype), caches, feature.shape
        )[None]
        g_feat = g_feat + self.net_.rpn_backward(
            g_rpn_l.astype(dtype), g_rpn_d.astype(dtype), feat_b.shape
        )
        self.net_.backbone.backward(g_feat)
        opt.step()
        return comp

    def predict(self, X):
        """Detections for one image or a list of images."""
        self._check_fitted()
        if isinstance(X, np.ndarray) and X.ndim == 3:
            return self._detect(X)
        return [self._detect(img) for img in X]

    def _detect(self, image: np.ndarray) -> list[Detection]:
        h, w = image.shape[:2]
        img, _, _ = self._prepare(image, [])
        feat_b, rpn_logits, rpn_deltas = self._forward_rpn(img, train=False)
        objectness = net.softmax(rpn_logits)[:, 1]
        proposals, _ = select_proposals(
            self.anchors_, objectness, rpn_deltas,
            self.input_width, self.input_height,
            self.proposal_nms_iou, self.proposals_kept,
        )
        if proposals.shape[0] == 0:
            return []
        logits, deltas, _ = self.net_.rcnn_forward(
            feat_b[0], proposals / self.stride, train=False
        )
        probs = net.softmax(logits)
        fg = probs[:, 1:]
        cls = fg.argmax(axis=1)
        conf = fg[np.arange(fg.shape[0]), cls]
        keep = conf > self.grain_threshold
        if not keep.any():
            return []
        boxes = decode_array(proposals[keep], deltas[keep])
        boxes = clip_array(boxes, self.input_width, self.input_height)
        ok = (boxes[:, 2] - boxes[:, 0] >= MIN_PROPOSAL_SIZE) & (
            boxes[:, 3] - boxes[:, 1] >= MIN_PROPOSAL_SIZE
        )
        boxes, conf, cls = boxes[ok], conf[keep][ok], cls[keep][ok]
        kept = nms_indices(boxes, conf, self.detection_nms_iou)
        sx = w / self.input_width
        sy = h / self.input_height
        out = []
        for i in kept:
            b = boxes[i]
            out.append(
                Detection(
                    Box(b[0] * sx, b[1] * sy, b[2] * sx, b[3] * sy),
                    float(conf[i]),
                    self.class_names[int(cls[i])],
                )
            )
        return out

    def save_weights(self, path):
        self._check_fitted()
        net.save_checkpoint(path, {p.name: p.data for p in self.net_.params()})
        return self

    def load_weights(self, path):
        """Build the network from the current config and load a checkpoint."""
        self._build()
        net.load_into(self.net_.params(), path)
        return self
