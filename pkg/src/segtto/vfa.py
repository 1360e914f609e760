"""Visual feature aggregation over the selected views.

Features are painted onto a full-image canvas: the original features seed it
with count 1 everywhere, each selected view resamples its features into its
crop box (un-flipping first) and bumps the counts there, and finalization
divides and resamples back to the working grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .resample import bilinear_resize, hflip
from .types import FeatureMap, full_cover


@dataclass
class FeatureCanvas:
    accum: np.ndarray       # H x W x d running sums
    counts: np.ndarray      # H x W contribution counts, >= 1 everywhere

    @property
    def height(self) -> int:
        return self.accum.shape[0]

    @property
    def width(self) -> int:
        return self.accum.shape[1]


def init_canvas(orig: FeatureMap, image_size: tuple[int, int]) -> FeatureCanvas:
    """Seed the canvas with the original features resampled to image size."""
    height, width = image_size
    if height < 1 or width < 1:
        raise ValueError(f"canvas size must be positive, got {image_size}")
    g = orig.geometry
    if (g.h1, g.w1, g.h2, g.w2) != (0, 0, height, width):
        raise ValueError(
            f"original features must cover the full frame, got {g} for size {image_size}"
        )
    orig.validate(height, width)
    accum = bilinear_resize(orig.values, height, width)
    counts = np.ones((height, width), dtype=np.int64)
    return FeatureCanvas(accum, counts)


def accumulate_view(canvas: FeatureCanvas, view_features: FeatureMap) -> FeatureCanvas:
    """Add one view's features into its crop box; mutates and returns canvas."""
    g = view_features.geometry
    view_features.validate(canvas.height, canvas.width)
    if view_features.channels != canvas.accum.shape[2]:
        raise ValueError(
            f"view feature dim {view_features.channels} does not match canvas "
            f"{canvas.accum.shape[2]}"
        )
    values = view_features.values
    if g.hflip:
        values = hflip(values)
    patch = bilinear_resize(values, g.height, g.width)
    canvas.accum[g.h1 : g.h2, g.w1 : g.w2] += patch
    canvas.counts[g.h1 : g.h2, g.w1 : g.w2] += 1
    return canvas


def finalize_canvas(canvas: FeatureCanvas, target: tuple[int, int]) -> FeatureMap:
    """Count-normalize and resample to the target grid; full-cover geometry."""
    th, tw = target
    if th < 1 or tw < 1:
        raise ValueError(f"target grid must be positive, got {target}")
    mean = canvas.accum / canvas.counts[..., None]
    values = bilinear_resize(mean, th, tw)
    return FeatureMap(values, full_cover(canvas.height, canvas.width))


def aggregate_visual(
    orig: FeatureMap,
    selected: Sequence[FeatureMap],
    image_size: tuple[int, int],
    target: tuple[int, int],
) -> FeatureMap:
    """The composed canvas round trip.

    An empty selection short-circuits to the original features unchanged, so
    disabling aggregation is exact.
    """
    if not selected:
        return orig
    canvas = init_canvas(orig, image_size)
    for view_features in selected:
        accumulate_view(canvas, view_features)
    return finalize_canvas(canvas, target)
