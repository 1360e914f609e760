"""Dataset folder layout and PNG IO.

Layout: `images/<id>.<ext>` (any Pillow-readable RGB format), optional
`masks/<id>.png` single-channel ground truth with 255 = ignore, and a
`vocab.txt`. Predictions land in `<out>/pred/<id>.png`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .types import ImageTensor, SegmentationMask

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class DatasetEntry:
    image_id: str
    image_path: Path
    mask_path: Path | None


def load_image(path: str | Path, source_id: str | None = None) -> ImageTensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return ImageTensor(arr, source_id if source_id is not None else Path(path).stem)


def load_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)


def write_mask(path: str | Path, mask: SegmentationMask) -> None:
    labels = mask.labels
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("mask labels do not fit an 8-bit PNG")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path)


def write_counts(path: str | Path, counts: np.ndarray) -> None:
    """Contribution counts as an 8-bit grayscale debug image."""
    scaled = np.clip(counts.astype(np.float64) / max(1, counts.max()) * 255.0, 0, 255)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(scaled.astype(np.uint8), mode="L").save(path)


def iter_dataset(root: str | Path) -> list[DatasetEntry]:
    """Entries sorted by image id; processing order never depends on the OS."""
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"no images/ directory under {root}")
    masks_dir = root / "masks"
    entries = []
    for path in sorted(images_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        mask_path = masks_dir / f"{path.stem}.png"
        entries.append(
            DatasetEntry(path.stem, path, mask_path if mask_path.exists() else None)
        )
    return entries
