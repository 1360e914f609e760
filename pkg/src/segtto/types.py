"""Shared data types: images, feature maps, embeddings, vocabularies, masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

IGNORE_LABEL = 255


@dataclass(frozen=True)
class ViewGeometry:
    """Axis-aligned box in original-image pixel space, plus the flip flag.

    Rows [h1, h2) and columns [w1, w2); half-open on the high side.
    """

    h1: int
    w1: int
    h2: int
    w2: int
    hflip: bool = False

    @property
    def height(self) -> int:
        return self.h2 - self.h1

    @property
    def width(self) -> int:
        return self.w2 - self.w1

    def validate(self, image_h: int | None = None, image_w: int | None = None) -> None:
        if not (0 <= self.h1 < self.h2 and 0 <= self.w1 < self.w2):
            raise ValueError(f"degenerate view box {self}")
        if image_h is not None and self.h2 > image_h:
            raise ValueError(f"view box {self} exceeds image height {image_h}")
        if image_w is not None and self.w2 > image_w:
            raise ValueError(f"view box {self} exceeds image width {image_w}")


def full_cover(height: int, width: int) -> ViewGeometry:
    """Geometry spanning an entire height x width frame."""
    return ViewGeometry(0, 0, height, width)


@dataclass
class ImageTensor:
    """H x W x 3 float pixels in [0, 1] with a stable source id."""

    pixels: np.ndarray
    source_id: str = ""

    def validate(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"image {self.source_id!r} has empty extent {p.shape[:2]}")
        if not np.isfinite(p).all():
            raise ValueError(f"image {self.source_id!r} contains non-finite pixels")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError(f"image {self.source_id!r} has pixels outside [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class FeatureMap:
    """h' x w' x d dense visual features covering a source-image region."""

    values: np.ndarray
    geometry: ViewGeometry

    def validate(self, image_h: int | None = None, image_w: int | None = None) -> None:
        v = self.values
        if v.ndim != 3:
            raise ValueError(f"feature values must be (h, w, d), got {v.shape}")
        if min(v.shape) < 1:
            raise ValueError(f"feature map has empty extent {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature map contains non-finite values")
        self.geometry.validate(image_h, image_w)

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass
class TextEmbedding:
    """A d_t vector tied to the text it encodes."""

    values: np.ndarray
    label: str = ""
    normalized: bool = False

    def validate(self) -> None:
        v = self.values
        if v.ndim != 1 or v.shape[0] < 1:
            raise ValueError(f"text embedding must be a non-empty vector, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError(f"text embedding {self.label!r} is non-finite")
        if self.normalized and abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
            raise ValueError(f"embedding {self.label!r} flagged normalized but is not")


@dataclass(frozen=True)
class CategoryVocabulary:
    """Ordered category names with optional descriptions and an image type."""

    names: tuple[str, ...]
    descriptions: Mapping[str, str] = field(default_factory=dict)
    image_type: str = "photo"

    def __post_init__(self):
        if not self.names:
            raise ValueError("vocabulary must contain at least one category")
        seen = set()
        for name in self.names:
            if not name.strip():
                raise ValueError("vocabulary contains an empty category name")
            if name in seen:
                raise ValueError(f"duplicate category name {name!r}")
            seen.add(name)
        unknown = set(self.descriptions) - seen
        if unknown:
            raise ValueError(f"descriptions for unknown categories: {sorted(unknown)}")
        object.__setattr__(self, "descriptions", MappingProxyType(dict(self.descriptions)))

    def __len__(self) -> int:
        return len(self.names)

    def prompt_text(self, index: int) -> str:
        """The text a category contributes to prompts: its description if present."""
        name = self.names[index]
        return self.descriptions.get(name, name)


@dataclass
class SegmentationMask:
    """Per-pixel category indices; IGNORE_LABEL marks unevaluated pixels."""

    labels: np.ndarray

    def validate(self, n_categories: int | None = None) -> None:
        lab = self.labels
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError(f"mask dtype must be integer, got {lab.dtype}")
        if n_categories is not None:
            valid = (lab < n_categories) | (lab == IGNORE_LABEL)
            if lab.min() < 0 or not valid.all():
                raise ValueError("mask labels outside the vocabulary range")


_IMAGE_TYPE_HEADER = "#image_type:"


def parse_vocabulary(text: str) -> CategoryVocabulary:
    """Parse the one-category-per-line format.

    Lines are category names, optionally followed by a tab and a description.
    A `#image_type: <string>` header may appear anywhere; other `#` lines are
    comments. Blank lines are skipped.
    """
    names: list[str] = []
    descriptions: dict[str, str] = {}
    image_type = "photo"
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(_IMAGE_TYPE_HEADER):
            image_type = line[len(_IMAGE_TYPE_HEADER):].strip()
            continue
        if line.startswith("#"):
            continue
        name, _, description = line.partition("\t")
        name = name.strip()
        description = description.strip()
        if not name:
            raise ValueError(f"vocabulary line has no category name: {raw!r}")
        names.append(name)
        if description:
            descriptions[name] = description
    return CategoryVocabulary(tuple(names), descriptions, image_type)


def format_vocabulary(vocab: CategoryVocabulary) -> str:
    lines = [f"{_IMAGE_TYPE_HEADER} {vocab.image_type}"]
    for name in vocab.names:
        desc = vocab.descriptions.get(name)
        lines.append(f"{name}\t{desc}" if desc else name)
    return "\n".join(lines) + "\n"


def load_vocabulary(path: str | Path) -> CategoryVocabulary:
    return parse_vocabulary(Path(path).read_text(encoding="utf-8"))
