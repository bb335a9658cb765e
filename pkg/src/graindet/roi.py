"""Fixed-size region extraction.

Two resampling operations share one convention: sample positions use
half-pixel centers (pixel (r, c) is centered at (c + 0.5, r + 0.5)) and
out-of-range positions clamp to the border.

* :func:`roi_pool` turns an arbitrary feature-map region into a fixed grid
  by taking, per output cell, the channelwise max over a 2x2 grid of
  bilinear samples inside the cell's sub-bin.
* :func:`crop_resize` bilinearly resamples an image region to fixed pixel
  dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, clip_box


def _sample_axis(start: float, extent: float, n_out: int, n_samples: int, limit: int):
    """Per-output-bin sample positions along one axis, in index space.

    Returns (lo, hi, frac) arrays of shape (n_out, n_samples): integer
    neighbor indices and the interpolation fraction toward ``hi``.
    """
    bin_size = extent / n_out
    offs = (np.arange(n_samples) + 0.5) / n_samples
    pos = start + (np.arange(n_out)[:, None] + offs[None, :]) * bin_size
    p = np.clip(pos - 0.5, 0.0, limit - 1.0)
    lo = np.floor(p).astype(np.int64)
    hi = np.minimum(lo + 1, limit - 1)
    return lo, hi, p - lo


@dataclass
class RoiPoolCache:
    feature_shape: tuple
    y_lo: np.ndarray
    y_hi: np.ndarray
    wy: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    wx: np.ndarray
    winner: np.ndarray  # (out_h, out_w, C) flat index into the sample grid


def roi_pool(
    feature: np.ndarray,
    region: Box,
    out_h: int = 7,
    out_w: int = 7,
    samples: int = 2,
) -> tuple[np.ndarray, RoiPoolCache]:
    """Pool a feature-map region to ``(out_h, out_w, C)``.

    ``region`` is in feature coordinates and is clipped to the feature
    extent; a region with no intersection is an error (callers filter).
    """
    h, w, _ = feature.shape
    clipped = clip_box(region, float(w), float(h))
    if clipped is None:
        raise ValueError(f"region {region.as_tuple()} does not intersect {w}x{h} feature")
    y_lo, y_hi, wy = _sample_axis(clipped.y1, clipped.height, out_h, samples, h)
    x_lo, x_hi, wx = _sample_axis(clipped.x1, clipped.width, out_w, samples, w)
    wy = wy.astype(feature.dtype)
    wx = wx.astype(feature.dtype)

    # Separable gather: values has shape (out_h, sy, out_w, sx, C).
    f_ll = feature[y_lo][:, :, x_lo]
    f_lh = feature[y_lo][:, :, x_hi]
    f_hl = feature[y_hi][:, :, x_lo]
    f_hh = feature[y_hi][:, :, x_hi]
    wy_ = wy[:, :, None, None, None]
    wx_ = wx[None, None, :, :, None]
    values = (
        f_ll * (1 - wy_) * (1 - wx_)
        + f_lh * (1 - wy_) * wx_
        + f_hl * wy_ * (1 - wx_)
        + f_hh * wy_ * wx_
    )
    grid = values.transpose(0, 2, 1, 3, 4).reshape(out_h, out_w, samples * samples, -1)
    winner = grid.argmax(axis=2)
    pooled = np.take_along_axis(grid, winner[:, :, None, :], axis=2)[:, :, 0, :]
    cache = RoiPoolCache(feature.shape, y_lo, y_hi, wy, x_lo, x_hi, wx, winner)
    return pooled, cache


def roi_pool_backward(
    grad: np.ndarray, cache: RoiPoolCache, out: np.ndarray | None = None
) -> np.ndarray:
    """Scatter output gradients back to the feature map.

    Each output cell's gradient flows to the four corners of its winning
    sample point, weighted bilinearly. Accumulates into ``out`` when given.
    """
    h, w, c = cache.feature_shape
    out_h, out_w, _ = grad.shape
    n_sx = cache.wx.shape[1]
    sy, sx = np.divmod(cache.winner, n_sx)  # (out_h, out_w, C)

    ii = np.arange(out_h)[:, None, None]
    jj = np.arange(out_w)[None, :, None]
    ry_lo = cache.y_lo[ii, sy]
    ry_hi = cache.y_hi[ii, sy]
    fy = cache.wy[ii, sy]
    cx_lo = cache.x_lo[jj, sx]
    cx_hi = cache.x_hi[jj, sx]
    fx = cache.wx[jj, sx]

    ch = np.broadcast_to(np.arange(c)[None, None, :], grad.shape)
    if out is None:
        out = np.zeros(cache.feature_shape, dtype=grad.dtype)
    flat = out.reshape(-1)
    for rows, wrow in ((ry_lo, 1 - fy), (ry_hi, fy)):
        for cols, wcol in ((cx_lo, 1 - fx), (cx_hi, fx)):
            idx = (rows * w + cols) * c + ch
            np.add.at(flat, idx.ravel(), (grad * wrow * wcol).ravel())
    return out


def crop_resize(image: np.ndarray, box: Box, out_w: int = 300, out_h: int = 250) -> np.ndarray:
    """Crop ``box`` out of an image and resample it to (out_h, out_w).

    ``box`` is in image coordinates, clipped to the image; a zero-area
    clipped box is an error. Bilinear resampling keeps each output sample
    inside the [min, max] range of the source region.
    """
    h, w = image.shape[:2]
    clipped = clip_box(box, float(w), float(h))
    if clipped is None:
        raise ValueError(f"box {box.as_tuple()} does not intersect {w}x{h} image")
    y_lo, y_hi, wy = _sample_axis(clipped.y1, clipped.height, out_h, 1, h)
    x_lo, x_hi, wx = _sample_axis(clipped.x1, clipped.width, out_w, 1, w)
    y_lo, y_hi, wy = y_lo[:, 0], y_hi[:, 0], wy[:, 0].astype(image.dtype)
    x_lo, x_hi, wx = x_lo[:, 0], x_hi[:, 0], wx[:, 0].astype(image.dtype)

    wy_ = wy[:, None, None]
    wx_ = wx[None, :, None]
    out = (
        image[y_lo][:, x_lo] * (1 - wy_) * (1 - wx_)
        + image[y_lo][:, x_hi] * (1 - wy_) * wx_
        + image[y_hi][:, x_lo] * wy_ * (1 - wx_)
        + image[y_hi][:, x_hi] * wy_ * wx_
    )
    return out.astype(image.dtype, copy=False)


def resize_image(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resample a whole image to (out_h, out_w)."""
    h, w = image.shape[:2]
    if (w, h) == (out_w, out_h):
        return image.copy()
    return crop_resize(image, Box(0.0, 0.0, float(w), float(h)), out_w, out_h)
