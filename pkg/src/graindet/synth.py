"""Synthetic heterogeneous-scene generator.

Scenes contain one or two procedural "grain cluster" objects on a cluttered
background. The three classes carry pairwise-distinct signatures:

* ``healthy``     - golden cluster of overlapping grain ellipses.
* ``false_smut``  - golden cluster with several near-black round blobs.
* ``neck_blast``  - pale straw cluster with a thin dark neck line.

``clutter_similarity`` in [0, 1] controls how closely background clutter
matches the object palette and shapes: at 0 the background stays in cool
neutral tones (objects separate by a simple warm-color threshold), at 1 the
clutter mimics object colors and elongation. Ground-truth boxes are the
exact bounding boxes of the rendered object masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Annotation, ImageRecord
from .geometry import Box, iou

# Object palette (warm tones, R - B >= 0.2).
GRAIN_GOLD = np.array([0.78, 0.62, 0.25])
GRAIN_PALE = np.array([0.72, 0.66, 0.46])
SMUT_DARK = np.array([0.10, 0.12, 0.08])
NECK_BROWN = np.array([0.35, 0.22, 0.12])

# Background palette (cool/neutral tones, R - B < 0.1).
NEUTRALS = np.array([
    [0.28, 0.42, 0.22],
    [0.40, 0.44, 0.52],
    [0.45, 0.42, 0.38],
    [0.33, 0.36, 0.30],
])

DEFAULT_CLASS_MIX = {"false_smut": 75, "neck_blast": 63, "healthy": 62}


@dataclass
class SceneSpec:
    width: int = 640
    height: int = 480
    class_mix: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    clutter_density: float = 0.5
    clutter_similarity: float = 0.5
    object_scale: tuple[float, float] = (0.28, 0.48)
    multiclass_rate: float = 0.15
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.clutter_similarity <= 1.0:
            raise ValueError("clutter_similarity must be in [0, 1]")
        if not 0.0 <= self.multiclass_rate <= 1.0:
            raise ValueError("multiclass_rate must be in [0, 1]")
        if min(self.class_mix.values()) < 0 or sum(self.class_mix.values()) <= 0:
            raise ValueError("class_mix weights must be non-negative and not all zero")


def apportion(n: int, weights: dict) -> dict:
    """Split n into integer per-class counts by largest remainder."""
    total = float(sum(weights.values()))
    ideal = {k: n * w / total for k, w in weights.items()}
    counts = {k: int(np.floor(v)) for k, v in ideal.items()}
    short = n - sum(counts.values())
    order = sorted(weights, key=lambda k: ideal[k] - counts[k], reverse=True)
    for k in order[:short]:
        counts[k] += 1
    return counts


def _paint_ellipse(img, mask, cx, cy, a, b, theta, color):
    """Fill a rotated ellipse; updates the object mask when given."""
    h, w = img.shape[:2]
    r = max(a, b)
    x0, x1 = max(int(cx - r - 1), 0), min(int(cx + r + 2), w)
    y0, y1 = max(int(cy - r - 1), 0), min(int(cy + r + 2), h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / a
    v = (-dx * st + dy * ct) / b
    inside = u * u + v * v <= 1.0
    img[y0:y1, x0:x1][inside] = color
    if mask is not None:
        mask[y0:y1, x0:x1] |= inside


def _render_cluster(img, mask, rng, cx, cy, length, label):
    """Draw one grain cluster and its class signature; returns nothing,
    painted pixels are recorded in ``mask``."""
    theta = rng.uniform(0.0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    base = GRAIN_PALE if label == "neck_blast" else GRAIN_GOLD

    if label == "neck_blast":
        # Thin dark neck along the main axis, under the grains.
        _paint_ellipse(img, mask, cx, cy, 0.52 * length, 0.035 * length,
                       theta, NECK_BROWN)

    n_grains = rng.integers(9, 14)
    ts = np.linspace(-0.42 * length, 0.42 * length, n_grains)
    grain_centers = []
    for t in ts:
        off = rng.normal(0.0, 0.05 * length)
        gx = cx + t * ct - off * st
        gy = cy + t * st + off * ct
        color = np.clip(base + rng.normal(0.0, 0.03, size=3), 0.0, 1.0)
        _paint_ellipse(img, mask, gx, gy, 0.14 * length, 0.065 * length,
                       theta + rng.normal(0.0, 0.25), color)
        grain_centers.append((gx, gy))

    if label == "false_smut":
        for _ in range(int(rng.integers(3, 6))):
            gx, gy = grain_centers[int(rng.integers(0, len(grain_centers)))]
            rad = rng.uniform(0.06, 0.10) * length
            color = np.clip(SMUT_DARK + rng.normal(0.0, 0.02, size=3), 0.0, 1.0)
            _paint_ellipse(img, mask, gx, gy, rad, rad, 0.0, color)


def _render_background(img, rng, spec: SceneSpec):
    h, w = img.shape[:2]
    c0 = NEUTRALS[rng.integers(0, len(NEUTRALS))]
    c1 = NEUTRALS[rng.integers(0, len(NEUTRALS))]
    ramp = np.linspace(0.0, 1.0, h)[:, None, None]
    img[:] = c0 * (1 - ramp) + c1 * ramp

    q = spec.clutter_similarity
    n_clutter = int(round(spec.clutter_density * 22))
    object_colors = [GRAIN_GOLD, GRAIN_PALE, SMUT_DARK, NECK_BROWN]
    for _ in range(n_clutter):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        size = rng.uniform(0.04, 0.16) * min(w, h)
        neutral = NEUTRALS[rng.integers(0, len(NEUTRALS))]
        target = object_colors[int(rng.integers(0, len(object_colors)))]
        color = np.clip((1 - q) * neutral + q * target
                        + rng.normal(0.0, 0.02, size=3), 0.0, 1.0)
        if rng.random() < q:
            # Object-like elongated blob.
            _paint_ellipse(img, None, cx, cy, size, size * rng.uniform(0.15, 0.4),
                           rng.uniform(0, np.pi), color)
        else:
            _paint_ellipse(img, None, cx, cy, size * rng.uniform(0.5, 1.0),
                           size * rng.uniform(0.5, 1.0), rng.uniform(0, np.pi), color)


def _mask_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return Box(float(xs.min()), float(ys.min()),
               float(xs.max() + 1.0), float(ys.max() + 1.0))


def generate_scene(spec: SceneSpec, labels: list[str], rng) -> tuple[np.ndarray, list[Annotation]]:
    """Render one scene holding the given object classes."""
    h, w = spec.height, spec.width
    img = np.zeros((h, w, 3), dtype=np.float64)
    _render_background(img, rng, spec)

    annotations = []
    placed: list[Box] = []
    for label in labels:
        length = rng.uniform(*spec.object_scale) * min(w, h)
        mask = np.zeros((h, w), dtype=bool)
        for _ in range(30):
            margin = 0.62 * length
            cx = rng.uniform(margin, w - margin)
            cy = rng.uniform(margin, h - margin)
            probe = Box(cx - margin, cy - margin, cx + margin, cy + margin)
            if all(iou(probe, prev) < 0.05 for prev in placed):
                break
        _render_cluster(img, mask, rng, cx, cy, length, label)
        box = _mask_box(mask)
        placed.append(box)
        annotations.append(Annotation(box, label))

    img += rng.normal(0.0, spec.noise, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return img.astype(np.float32), annotations


def generate_dataset(
    spec: SceneSpec, n_images: int
) -> tuple[list[np.ndarray], list[ImageRecord]]:
    """Generate scenes plus their manifest records.

    Primary-class counts follow ``spec.class_mix`` exactly (largest-remainder
    apportionment); a second object of a different class appears at
    ``spec.multiclass_rate``. Deterministic for a fixed seed.
    """
    counts = apportion(n_images, spec.class_mix)
    labels = [lbl for lbl, c in counts.items() for _ in range(c)]
    master = np.random.default_rng(spec.seed)
    master.shuffle(labels)

    class_names = list(spec.class_mix.keys())
    images = []
    records = []
    for i, primary in enumerate(labels):
        rng = np.random.default_rng((spec.seed, 1, i))
        scene_labels = [primary]
        if len(class_names) > 1 and rng.random() < spec.multiclass_rate:
            others = [c for c in class_names if c != primary]
            scene_labels.append(others[int(rng.integers(0, len(others)))])
        img, annos = generate_scene(spec, scene_labels, rng)
        images.append(img)
        records.append(
            ImageRecord(
                path=f"images/img_{i:05d}.ppm",
                width=spec.width,
                height=spec.height,
                annotations=annos,
            )
        )
    return images, records
