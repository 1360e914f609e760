"""Augmented view sampling and entropy-ranked retention."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import SegTTOConfig
from .errors import SelectionError, ViewGenerationError
from .objective import LossMap, aggregate_values
from .resample import bilinear_resize, hflip
from .types import ImageTensor, ViewGeometry

MIN_CROP = 2            # smallest legal crop side, in pixels
_SAMPLE_TRIES = 10


@dataclass
class View:
    image: ImageTensor
    geometry: ViewGeometry


@dataclass
class ViewBatch:
    views: list[View]
    rng_seed: int

    def __len__(self) -> int:
        return len(self.views)


@dataclass
class SelectionResult:
    kept_indices: list[int]       # ascending
    per_view_score: list[float]   # raw scores for all m views


def _sample_crop_box(
    rng: np.random.Generator,
    height: int,
    width: int,
    area_range: tuple[float, float],
    ratio_range: tuple[float, float],
) -> tuple[int, int, int, int]:
    area = height * width
    for _ in range(_SAMPLE_TRIES):
        target_area = rng.uniform(*area_range) * area
        ratio = rng.uniform(*ratio_range)
        w = round(math.sqrt(target_area * ratio))
        h = round(math.sqrt(target_area / ratio))
        if MIN_CROP <= h <= height and MIN_CROP <= w <= width:
            h1 = int(rng.integers(0, height - h + 1))
            w1 = int(rng.integers(0, width - w + 1))
            return h1, w1, h1 + h, w1 + w
    # Centered fallback with the aspect ratio clamped into range.
    in_ratio = width / height
    if in_ratio < ratio_range[0]:
        w, h = width, round(width / ratio_range[0])
    elif in_ratio > ratio_range[1]:
        w, h = round(height * ratio_range[1]), height
    else:
        w, h = width, height
    if h < MIN_CROP or w < MIN_CROP:
        raise ViewGenerationError(
            f"cannot cut a {MIN_CROP}x{MIN_CROP} crop from a {height}x{width} image"
        )
    h1 = (height - h) // 2
    w1 = (width - w) // 2
    return h1, w1, h1 + h, w1 + w


def generate_views(
    image: ImageTensor,
    count: int,
    seed: int,
    *,
    area_range: tuple[float, float] = (0.3, 1.0),
    ratio_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
    flip_probability: float = 0.5,
    target_size: int | None = None,
) -> ViewBatch:
    """Seeded random resized crops with horizontal flips.

    Each view samples a crop area fraction and aspect ratio, rejecting boxes
    that do not fit or fall under MIN_CROP per side, then optionally flips.
    Geometry is tracked in original pixel space; flips are recorded, not baked
    into the coordinates. When target_size is set the crop is resampled to
    that square (a backend input resolution), otherwise it keeps its size.
    """
    image.validate()
    if count < 1:
        raise ValueError(f"view count must be >= 1, got {count}")
    if not 0.0 < area_range[0] <= area_range[1] <= 1.0:
        raise ValueError(f"bad area range {area_range}")
    if not 0.0 < ratio_range[0] <= ratio_range[1]:
        raise ValueError(f"bad ratio range {ratio_range}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    height, width = image.height, image.width
    views: list[View] = []
    for index in range(count):
        h1, w1, h2, w2 = _sample_crop_box(rng, height, width, area_range, ratio_range)
        flip = bool(rng.random() < flip_probability)
        patch = image.pixels[h1:h2, w1:w2]
        if target_size is not None:
            patch = np.clip(bilinear_resize(patch, target_size, target_size), 0.0, 1.0)
        if flip:
            patch = hflip(patch)
        views.append(
            View(
                ImageTensor(np.ascontiguousarray(patch), f"{image.source_id}#view{index}"),
                ViewGeometry(h1, w1, h2, w2, hflip=flip),
            )
        )
    return ViewBatch(views, rng_seed=seed)


def score_views(loss_maps: Sequence[LossMap], cfg: SegTTOConfig) -> list[float]:
    """One scalar per view: the spatial aggregate of its loss surface."""
    if len(loss_maps) == 0:
        raise ValueError("score_views needs at least one loss map")
    return [aggregate_values(lm.values, cfg.aggregation_mode) for lm in loss_maps]


def retention_count(m: int, retention_fraction: float) -> int:
    # The epsilon absorbs binary representation dust in fraction * m without
    # ever promoting a genuine fractional part (those are >= 1/m).
    return max(1, math.floor(retention_fraction * m + 1e-9))


def select_views(scores: Sequence[float], retention_fraction: float) -> SelectionResult:
    """Keep the lowest-scoring fraction of views.

    Ties break toward the lower index; non-finite scores are excluded before
    ranking. Kept indices come back ascending.
    """
    m = len(scores)
    if m == 0:
        raise ValueError("select_views needs at least one score")
    if not 0.0 < retention_fraction <= 1.0:
        raise ValueError(f"retention fraction must be in (0, 1], got {retention_fraction}")
    arr = np.asarray(scores, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(arr))
    if finite.size == 0:
        raise SelectionError("every view score is non-finite")
    target = retention_count(m, retention_fraction)
    order = finite[np.argsort(arr[finite], kind="stable")]
    kept = sorted(int(i) for i in order[:target])
    return SelectionResult(kept_indices=kept, per_view_score=[float(s) for s in arr])


def write_view_dump(batch: ViewBatch, directory: str | Path) -> None:
    """Debug artifacts: one PNG per view plus a geometry sidecar."""
    import json

    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for index, view in enumerate(batch.views):
        arr = np.clip(view.image.pixels * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(directory / f"view_{index:03d}.png")
        g = view.geometry
        lines.append(
            json.dumps(
                {
                    "index": index,
                    "source_id": view.image.source_id,
                    "h1": g.h1,
                    "w1": g.w1,
                    "h2": g.h2,
                    "w2": g.w2,
                    "hflip": g.hflip,
                },
                sort_keys=True,
            )
        )
    (directory / "geometry.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
