"""Dataset ingestion and persistence.

Images are binary portable pixmaps (P6, maxval 255, 8-bit RGB). In memory
an image is an ``(H, W, 3)`` float32 array in [0, 1]; quantization back to
bytes makes write(read(f)) bit-identical to f.

Annotation manifests are JSON lines, one image record per line::

    {"image": "images/img_000.ppm", "width": 640, "height": 480,
     "annotations": [{"box": [x1, y1, x2, y2], "label": "false_smut"}]}

Datasets follow the directory convention ``images/``, ``manifests/``,
``crops/``, ``checkpoints/``, ``reports/`` under one root.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import Box

CLASS_LABELS = ("false_smut", "neck_blast", "healthy")


@dataclass(frozen=True)
class Annotation:
    box: Box
    label: str


@dataclass
class ImageRecord:
    path: str
    width: int
    height: int
    annotations: list[Annotation] = field(default_factory=list)


def read_image(path) -> np.ndarray:
    """Read a P6 pixmap into an (H, W, 3) float32 array in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise DataError(f"{path}: bad magic {data[:2]!r} at offset 0, expected b'P6'")
    pos = 2
    fields = []
    while len(fields) < 3:
        # Skip whitespace and '#' comment lines between header fields.
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise DataError(f"{path}: bad header token {token!r} at offset {start}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}, expected 255")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise DataError(
            f"{path}: raster has {len(raster)} bytes, expected {expected} "
            f"for {width}x{height}"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float32) / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Write an image as a P6 pixmap. Accepts float in [0, 1] or uint8."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"image must be (H, W, 3), got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def _parse_record(obj: dict, line_no: int) -> ImageRecord:
    try:
        path = obj["image"]
        width = int(obj["width"])
        height = int(obj["height"])
        raw_annos = obj["annotations"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"manifest line {line_no}: malformed record ({exc})") from exc
    extra = set(obj) - {"image", "width", "height", "annotations"}
    if extra:
        raise DataError(f"manifest line {line_no}: unknown keys {sorted(extra)}")
    annos = []
    for a in raw_annos:
        label = a.get("label")
        if label not in CLASS_LABELS:
            raise DataError(
                f"manifest line {line_no}: unknown label {label!r}, "
                f"expected one of {CLASS_LABELS}"
            )
        coords = a.get("box")
        if not isinstance(coords, list) or len(coords) != 4:
            raise DataError(f"manifest line {line_no}: box must be [x1, y1, x2, y2]")
        x1, y1, x2, y2 = map(float, coords)
        if not (x2 > x1 and y2 > y1):
            raise DataError(
                f"manifest line {line_no}: degenerate box {coords}"
            )
        if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
            raise DataError(
                f"manifest line {line_no}: box {coords} outside {width}x{height} image"
            )
        annos.append(Annotation(Box(x1, y1, x2, y2), label))
    return ImageRecord(path, width, height, annos)


def load_manifest(path) -> list[ImageRecord]:
    """Load and validate a JSON-lines manifest, preserving record order."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"manifest line {line_no}: invalid JSON ({exc})") from exc
            rec = _parse_record(obj, line_no)
            if rec.path in seen:
                raise DataError(f"manifest line {line_no}: duplicate image path {rec.path!r}")
            seen.add(rec.path)
            records.append(rec)
    return records


def save_manifest(path, records: list[ImageRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj = {
                "image": rec.path,
                "width": rec.width,
                "height": rec.height,
                "annotations": [
                    {"box": list(a.box.as_tuple()), "label": a.label}
                    for a in rec.annotations
                ],
            }
            f.write(json.dumps(obj) + "\n")


@dataclass
class CropRecord:
    """One derived crop: where it came from and how it is labeled."""

    crop_path: str
    source_image: str
    source_box: Box
    class_label: str
    confidence: float


def load_crop_manifest(path) -> list[CropRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                box = Box(*map(float, obj["source_box"]))
                rec = CropRecord(
                    obj["crop_path"], obj["source_image"], box,
                    obj["class_label"], float(obj["confidence"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"crop manifest line {line_no}: {exc}") from exc
            if rec.class_label not in CLASS_LABELS:
                raise DataError(
                    f"crop manifest line {line_no}: unknown label {rec.class_label!r}"
                )
            records.append(rec)
    return records


def save_crop_manifest(path, records: list[CropRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            obj = {
                "crop_path": rec.crop_path,
                "source_image": rec.source_image,
                "source_box": list(rec.source_box.as_tuple()),
                "class_label": rec.class_label,
                "confidence": rec.confidence,
            }
            f.write(json.dumps(obj) + "\n")
