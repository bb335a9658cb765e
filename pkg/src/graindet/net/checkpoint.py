"""Binary checkpoint format for named tensors.

Layout (all integers little-endian u32): magic ``DPCK``, format version,
tensor count, then per tensor: name length, UTF-8 name bytes, rank, one
extent per axis, and the float32 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DPCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        tensors[name] = arr.copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return tensors


def load_into(params, path) -> None:
    """Load a checkpoint into a list of named Parameters.

    Raises CheckpointError naming the tensor on any missing name or shape
    mismatch.
    """
    tensors = load_checkpoint(path)
    for p in params:
        if p.name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {p.name!r}")
        arr = tensors[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"{path}: tensor {p.name!r} has shape {arr.shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
        p.grad = np.zeros_like(p.data)
    extra = set(tensors) - {p.name for p in params}
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
