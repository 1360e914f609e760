"""Backend contracts and the reference cosine decoder.

A backend bundles a visual encoder, a text encoder that can also encode raw
token-embedding sequences (so prompt tuning can differentiate through it), and
a decoder. The package never touches model weights directly; anything that
satisfies this protocol can be plugged in.
"""

from __future__ import annotations

from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import DecoderContractError
from .resample import bilinear_resize
from .types import FeatureMap, ImageTensor, SegmentationMask, TextEmbedding

# Vector-Jacobian product: cotangent on the output embedding -> cotangent on
# the (L, token_dim) input sequence.
SequenceVJP = Callable[[np.ndarray], np.ndarray]


@runtime_checkable
class Backend(Protocol):
    feature_dim: int          # d of the visual feature grid
    embed_dim: int            # d_t of text embeddings (shared space)
    token_dim: int            # width of token-embedding rows
    input_resolution: int | None  # square side views are resized to, or None
    thread_safe: bool         # encoders may be called concurrently if True

    def encode_image(self, image: ImageTensor) -> FeatureMap: ...

    def encode_text(self, text: str) -> TextEmbedding: ...

    def token_embeddings(self, text: str) -> np.ndarray: ...

    def encode_sequence(self, tokens: np.ndarray) -> np.ndarray: ...

    def encode_sequence_and_vjp(
        self, tokens: np.ndarray
    ) -> tuple[np.ndarray, SequenceVJP]: ...

    def decode(
        self, visual: FeatureMap, bank: Sequence[TextEmbedding]
    ) -> SegmentationMask: ...


def _safe_norms(arr: np.ndarray, axis: int) -> np.ndarray:
    return np.maximum(np.linalg.norm(arr, axis=axis, keepdims=True), 1e-12)


def cosine_argmax_decode(
    visual: FeatureMap,
    bank: Sequence[TextEmbedding],
    projection: np.ndarray | None = None,
) -> SegmentationMask:
    """Upsample features to the covered region and take the per-pixel winner.

    Cosine similarity against every bank entry; ties resolve to the lowest
    index (np.argmax keeps the first maximum). Zero-norm pixels score 0
    against everything and therefore land on category 0.
    """
    if not bank:
        raise DecoderContractError("decode needs at least one text embedding")
    text = np.stack([e.values for e in bank]).astype(np.float64)
    values = visual.values.astype(np.float64)
    if projection is not None:
        values = values @ projection
    if values.shape[2] != text.shape[1]:
        raise DecoderContractError(
            f"visual dim {values.shape[2]} does not match text dim {text.shape[1]}"
        )
    out_h, out_w = visual.geometry.height, visual.geometry.width
    grid = bilinear_resize(values, out_h, out_w)
    grid = grid / _safe_norms(grid, axis=2)
    text = text / _safe_norms(text, axis=1)
    sims = grid @ text.T
    return SegmentationMask(np.argmax(sims, axis=2).astype(np.int64))
