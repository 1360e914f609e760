"""Bilinear resampling shared by view generation, aggregation, and decoding.

One convention everywhere: sample centers are aligned (align_corners=False in
the usual framework vocabulary) and out-of-range source coordinates clamp to
the edge. Resizing to the input size is an exact copy.
"""

from __future__ import annotations

import numpy as np


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) float array to (out_h, out_w)."""
    if values.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or 3-D array, got ndim={values.ndim}")
    h, w = values.shape[:2]
    if h < 1 or w < 1:
        raise ValueError(f"cannot resample an empty array of shape {values.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got ({out_h}, {out_w})")
    values = np.asarray(values, dtype=np.float64)
    if (h, w) == (out_h, out_w):
        return values.copy()

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if values.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    top = (1.0 - wx) * values[y0][:, x0] + wx * values[y0][:, x1]
    bot = (1.0 - wx) * values[y1][:, x0] + wx * values[y1][:, x1]
    return (1.0 - wy) * top + wy * bot


def hflip(values: np.ndarray) -> np.ndarray:
    """Mirror along the width axis (axis 1)."""
    return np.ascontiguousarray(values[:, ::-1])
