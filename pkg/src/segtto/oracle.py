"""Deterministic hash-seeded backend for tests, audits, and offline runs.

Visual features come from a keyed integer mix of each pixel-block mean, so an
identical image always encodes to bitwise-identical features and every check
against them can be brute-forced without model weights. The text path is a
smooth function of its token embeddings (hash embedding table, harmonic
position weights, fixed seeded linear map, L2 normalization), which keeps the
tuning gradients well defined.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .backends import SequenceVJP, cosine_argmax_decode
from .errors import EncoderError
from .types import FeatureMap, ImageTensor, SegmentationMask, TextEmbedding, full_cover

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(x) -> np.ndarray:
    """splitmix64 finalizer; wrapping modulo 2**64 is the point."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _to_unit_interval(z: np.ndarray) -> np.ndarray:
    # top 53 bits -> [0, 1), then map to [-1, 1)
    return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53) * 2.0 - 1.0


def _string_key(text: str) -> np.uint64:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return np.uint64(int.from_bytes(digest, "little"))


class OracleBackend:
    """See module docstring. All state is fixed at construction; thread safe."""

    BLOCK = 4

    def __init__(
        self,
        seed: int = 0,
        feature_dim: int = 32,
        token_dim: int = 16,
        input_resolution: int | None = 64,
    ):
        if feature_dim < 1 or token_dim < 1:
            raise ValueError("feature_dim and token_dim must be positive")
        self.feature_dim = feature_dim
        self.embed_dim = feature_dim  # identity visual-to-text projection
        self.token_dim = token_dim
        self.input_resolution = input_resolution
        self.thread_safe = True
        self._seed_key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5E9])))
        self._proj = rng.standard_normal((self.embed_dim, token_dim)) / np.sqrt(token_dim)

    # -- visual side ---------------------------------------------------------

    def encode_image(self, image: ImageTensor) -> FeatureMap:
        try:
            image.validate()
        except ValueError as exc:
            raise EncoderError(str(exc), source_id=image.source_id) from exc
        pixels = np.asarray(image.pixels, dtype=np.float64)
        h, w = pixels.shape[:2]
        b = self.BLOCK
        gh, gw = max(1, h // b), max(1, w // b)
        # Block r spans rows [r*b, min((r+1)*b, h)); trailing remainder rows
        # and columns fold into nothing unless the whole axis is shorter than
        # one block, in which case the single block covers it all.
        if h >= b and w >= b:
            cropped = pixels[: gh * b, : gw * b]
            means = cropped.reshape(gh, b, gw, b, -1).mean(axis=(1, 3, 4))
        else:
            means = np.empty((gh, gw), dtype=np.float64)
            for r in range(gh):
                r0, r1 = r * b, min((r + 1) * b, h)
                for c in range(gw):
                    c0, c1 = c * b, min((c + 1) * b, w)
                    means[r, c] = pixels[r0:r1, c0:c1].mean()
        bits = means.view(np.uint64)
        chan = _mix64(np.arange(1, self.feature_dim + 1, dtype=np.uint64))
        mixed = _mix64(_mix64(bits)[..., None] ^ chan[None, None, :] ^ self._seed_key)
        values = _to_unit_interval(mixed)
        return FeatureMap(values, full_cover(h, w))

    # -- text side -----------------------------------------------------------

    def token_embeddings(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            raise ValueError("cannot embed an empty token sequence")
        dims = _mix64(np.arange(1, self.token_dim + 1, dtype=np.uint64))
        rows = [
            _to_unit_interval(_mix64(_string_key(tok) ^ dims ^ self._seed_key))
            for tok in tokens
        ]
        return np.stack(rows)

    def _pool(self, tokens: np.ndarray) -> np.ndarray:
        weights = 1.0 / (1.0 + np.arange(tokens.shape[0], dtype=np.float64))
        return (weights[:, None] * tokens).sum(axis=0)

    def encode_sequence(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[0] < 1 or tokens.shape[1] != self.token_dim:
            raise ValueError(f"token sequence must be (L, {self.token_dim}), got {tokens.shape}")
        y = self._proj @ self._pool(tokens)
        norm = float(np.linalg.norm(y))
        if norm < 1e-12:
            raise EncoderError("token sequence encoded to a degenerate embedding")
        return y / norm

    def encode_sequence_and_vjp(self, tokens: np.ndarray) -> tuple[np.ndarray, SequenceVJP]:
        tokens = np.asarray(tokens, dtype=np.float64)
        out = self.encode_sequence(tokens)
        norm = float(np.linalg.norm(self._proj @ self._pool(tokens)))
        weights = 1.0 / (1.0 + np.arange(tokens.shape[0], dtype=np.float64))

        def vjp(cotangent: np.ndarray) -> np.ndarray:
            g = (cotangent - float(cotangent @ out) * out) / norm
            gs = self._proj.T @ g
            return weights[:, None] * gs[None, :]

        return out, vjp

    def encode_text(self, text: str) -> TextEmbedding:
        values = self.encode_sequence(self.token_embeddings(text))
        return TextEmbedding(values, label=text, normalized=True)

    # -- decode --------------------------------------------------------------

    def decode(self, visual: FeatureMap, bank: Sequence[TextEmbedding]) -> SegmentationMask:
        return cosine_argmax_decode(visual, bank)
