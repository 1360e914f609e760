"""Cross-modal probability maps and the self-supervised loss surfaces.

Per location q the logit of category j is the temperature-scaled mean cosine
between the visual feature at q and that category's prompt embeddings; the
softmax runs over categories. Entropy and pseudo-label cross-entropy are then
per-location scalars, reduced spatially by a configurable aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SegTTOConfig
from .types import FeatureMap

LOG_FLOOR = 1e-12


@dataclass
class ProbabilityMap:
    """h' x w' x n category distribution per location."""

    probs: np.ndarray
    source_view: int = 0

    @property
    def n_categories(self) -> int:
        return self.probs.shape[2]


@dataclass
class PseudoLabelMap:
    """Per-location targets, detached from any gradient flow."""

    labels: np.ndarray            # h' x w' x n, rows sum to 1
    mode: str = "hard"


@dataclass
class LossMap:
    """Per-location non-negative scalars."""

    values: np.ndarray            # h' x w'
    source_view: int = 0


# -- array-level core (shared with the tuning gradients) ----------------------

def normalize_rows(arr: np.ndarray, axis: int = -1) -> np.ndarray:
    return arr / np.maximum(np.linalg.norm(arr, axis=axis, keepdims=True), 1e-12)


def cosine_logits(values: np.ndarray, text_features: np.ndarray, temperature: float) -> np.ndarray:
    """(h, w, d) visual grid x (n, p, d) text grid -> (h*w, n) logits."""
    flat = values.reshape(-1, values.shape[-1])
    a_hat = normalize_rows(flat)
    b_hat = normalize_rows(text_features)
    cos = np.einsum("qd,npd->qnp", a_hat, b_hat)
    return temperature * cos.mean(axis=2)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=-1, keepdims=True)


def entropy_values(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row with the 0*log(0) = 0 convention."""
    terms = np.where(probs > 0.0, probs * np.log(np.maximum(probs, LOG_FLOOR)), 0.0)
    return -terms.sum(axis=-1)


def hard_labels(probs: np.ndarray) -> np.ndarray:
    """One-hot at the per-row argmax; ties go to the lowest index."""
    winners = np.argmax(probs, axis=-1)
    out = np.zeros_like(probs)
    np.put_along_axis(out, winners[..., None], 1.0, axis=-1)
    return out


def cross_entropy_values(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -(labels * np.log(np.clip(probs, LOG_FLOOR, None))).sum(axis=-1)


def aggregate_values(values: np.ndarray, mode: str) -> float:
    """Reduce a loss surface to one scalar: mean, median, or max.

    The even-count median is the mean of the two middle order statistics.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("cannot aggregate an empty loss map")
    if mode == "mean":
        return float(flat.mean())
    if mode == "median":
        return float(np.median(flat))
    if mode == "max":
        return float(flat.max())
    raise ValueError(f"unknown aggregation mode {mode!r}")


def aggregate_weights(values: np.ndarray, mode: str) -> np.ndarray:
    """d(aggregate)/d(values), flattened; the subgradient at ties picks the
    same elements the forward pass reads."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("cannot aggregate an empty loss map")
    weights = np.zeros_like(flat)
    if mode == "mean":
        weights[:] = 1.0 / flat.size
    elif mode == "median":
        order = np.argsort(flat, kind="stable")
        mid = flat.size // 2
        if flat.size % 2 == 1:
            weights[order[mid]] = 1.0
        else:
            weights[order[mid - 1]] = 0.5
            weights[order[mid]] = 0.5
    elif mode == "max":
        weights[int(np.argmax(flat))] = 1.0
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return weights


# -- typed operations ---------------------------------------------------------

def probability_map(
    visual: FeatureMap,
    text_features: np.ndarray,
    temperature: float,
    view_index: int = 0,
) -> ProbabilityMap:
    """Category distribution at every feature-grid location.

    text_features is the (n, p, d) prompt grid; the p prompt logits of a
    category are averaged before the softmax over the n categories.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    feats = np.asarray(text_features, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[0] < 1 or feats.shape[1] < 1:
        raise ValueError(f"text features must be (n, p, d), got {feats.shape}")
    if feats.shape[2] != visual.channels:
        raise ValueError(
            f"text dim {feats.shape[2]} does not match visual dim {visual.channels}"
        )
    if not np.isfinite(visual.values).all() or not np.isfinite(feats).all():
        raise ValueError("probability_map got non-finite inputs")
    h, w = visual.grid_h, visual.grid_w
    logits = cosine_logits(visual.values, feats, temperature)
    probs = softmax(logits).reshape(h, w, feats.shape[0])
    return ProbabilityMap(probs, source_view=view_index)


def entropy_map(pm: ProbabilityMap) -> LossMap:
    return LossMap(entropy_values(pm.probs), source_view=pm.source_view)


def pseudo_labels(pm: ProbabilityMap, mode: str = "hard") -> PseudoLabelMap:
    """Targets derived from the map itself: argmax one-hot, or the map copied."""
    if mode == "hard":
        return PseudoLabelMap(hard_labels(pm.probs), mode=mode)
    if mode == "soft":
        return PseudoLabelMap(pm.probs.copy(), mode=mode)
    raise ValueError(f"unknown pseudo label mode {mode!r}")


def cross_entropy_map(pm: ProbabilityMap, labels: PseudoLabelMap) -> LossMap:
    if labels.labels.shape != pm.probs.shape:
        raise ValueError(
            f"label shape {labels.labels.shape} does not match map {pm.probs.shape}"
        )
    return LossMap(cross_entropy_values(pm.probs, labels.labels), source_view=pm.source_view)


def spatial_aggregate(lm: LossMap, mode: str) -> float:
    return aggregate_values(lm.values, mode)


def selection_loss_map(pm: ProbabilityMap, cfg: SegTTOConfig) -> LossMap:
    """The per-location scalar that ranks a view for retention.

    entropy_only is the default. full_ssl routes the two per-location loss
    scalars through the gradient-combination rule; both are non-negative, so
    the non-conflict branch always applies and the result is their sum.
    """
    ent = entropy_values(pm.probs)
    if cfg.selection_loss_mode == "entropy_only":
        return LossMap(ent, source_view=pm.source_view)
    labels = pseudo_labels(pm, cfg.pseudo_label_mode)
    ce = cross_entropy_values(pm.probs, labels.labels)
    return LossMap(ent + ce, source_view=pm.source_view)


def dump_loss_maps(path: str | Path, maps: list[LossMap]) -> None:
    """Debug dump: one `view h w` header line then the flattened values."""
    lines = []
    for lm in maps:
        h, w = lm.values.shape
        lines.append(f"view={lm.source_view} shape={h}x{w}")
        lines.append(" ".join(f"{v:.17g}" for v in lm.values.ravel()))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
