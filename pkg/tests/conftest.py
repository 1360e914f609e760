"""Shared builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from segtto import CategoryVocabulary, ImageTensor, OracleBackend, SegTTOConfig

FIXTURES = Path(__file__).parent / "fixtures"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def make_image(seed: int, height: int = 24, width: int = 24, source_id: str | None = None) -> ImageTensor:
    rng = make_rng(seed)
    return ImageTensor(
        rng.uniform(size=(height, width, 3)),
        source_id if source_id is not None else f"img{seed}",
    )


@pytest.fixture
def oracle() -> OracleBackend:
    return OracleBackend(seed=0)


@pytest.fixture
def small_oracle() -> OracleBackend:
    """Low-dimensional backend; keeps brute-force comparisons fast."""
    return OracleBackend(seed=1, feature_dim=8, token_dim=6, input_resolution=None)


@pytest.fixture
def vocab3() -> CategoryVocabulary:
    return CategoryVocabulary(("sky", "sea", "rock"))


@pytest.fixture
def fast_cfg() -> SegTTOConfig:
    """Small view budget and a soft-regime temperature for quick runs."""
    return SegTTOConfig(temperature=10.0, view_count=8, rng_seed=0)


def build_dataset(
    root: Path,
    count: int = 3,
    size: int = 24,
    seed: int = 0,
    with_masks: bool = False,
) -> Path:
    """Write a small on-disk dataset: images/, vocab.txt, optional masks/."""
    from PIL import Image

    rng = make_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if with_masks:
        (root / "masks").mkdir(exist_ok=True)
    for i in range(count):
        pixels = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        Image.fromarray(pixels, mode="RGB").save(root / "images" / f"img{i}.png")
        if with_masks:
            labels = rng.integers(0, 3, size=(size, size)).astype(np.uint8)
            Image.fromarray(labels, mode="L").save(root / "masks" / f"img{i}.png")
    (root / "vocab.txt").write_text("sky\nsea\nrock\n", encoding="utf-8")
    return root


def deepcrack_vocab() -> CategoryVocabulary:
    return CategoryVocabulary(("concrete or asphalt", "crack"), {}, "photo")


def foodseg_vocab() -> CategoryVocabulary:
    return CategoryVocabulary(
        ("background", "candy", "egg tart"),
        {"background": "background of food"},
        "photo of food",
    )


def kvasir_vocab() -> CategoryVocabulary:
    return CategoryVocabulary(
        ("others", "tool"),
        {
            "others": "gastrointestinal (GI) tract tissue",
            "tool": "endoscopic grasping tool",
        },
        "photo",
    )
