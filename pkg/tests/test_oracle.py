"""Oracle backend, shared value types, resampling, and the cosine decoder."""

from __future__ import annotations

import numpy as np
import pytest

from segtto import (
    CategoryVocabulary,
    DecoderContractError,
    EncoderError,
    FeatureMap,
    ImageTensor,
    OracleBackend,
    TextEmbedding,
    ViewGeometry,
    bilinear_resize,
    cosine_argmax_decode,
    format_vocabulary,
    full_cover,
    hflip,
    parse_vocabulary,
)
from conftest import make_image, make_rng


# -- visual encoder ----------------------------------------------------------


def test_encode_image_grid_shape(oracle):
    feats = oracle.encode_image(make_image(0, 8, 8))
    assert feats.values.shape == (2, 2, 32)
    assert feats.geometry == full_cover(8, 8)


def test_encode_image_feature_dim_override():
    backend = OracleBackend(seed=0, feature_dim=16)
    feats = backend.encode_image(make_image(0, 8, 8))
    assert feats.values.shape == (2, 2, 16)


def test_encode_image_small_image_single_block(oracle):
    feats = oracle.encode_image(make_image(0, 3, 3))
    assert feats.values.shape == (1, 1, 32)


def test_encode_image_range(oracle):
    feats = oracle.encode_image(make_image(1, 16, 16))
    assert np.all(feats.values >= -1.0)
    assert np.all(feats.values < 1.0)


def test_encode_image_deterministic(oracle):
    image = make_image(2, 20, 12)
    a = oracle.encode_image(image)
    b = oracle.encode_image(image)
    assert np.array_equal(a.values, b.values)


def test_encode_image_seed_sensitivity():
    image = make_image(3, 8, 8)
    a = OracleBackend(seed=0).encode_image(image)
    b = OracleBackend(seed=1).encode_image(image)
    assert not np.array_equal(a.values, b.values)


def test_encode_image_content_sensitivity(oracle):
    base = make_image(4, 8, 8)
    bumped = ImageTensor(np.clip(base.pixels + 1e-9, 0.0, 1.0), base.source_id)
    a = oracle.encode_image(base)
    b = oracle.encode_image(bumped)
    # The hash avalanches: even a sub-ulp-of-display change flips features.
    assert not np.array_equal(a.values, b.values)


def test_encode_image_rejects_empty(oracle):
    bad = ImageTensor(np.zeros((0, 4, 3)), "empty")
    with pytest.raises(EncoderError) as exc:
        oracle.encode_image(bad)
    assert exc.value.source_id == "empty"


def test_encode_image_rejects_non_finite(oracle):
    pixels = np.zeros((4, 4, 3))
    pixels[0, 0, 0] = np.nan
    with pytest.raises(EncoderError):
        oracle.encode_image(ImageTensor(pixels, "nan"))


def test_encode_image_rejects_wrong_channels(oracle):
    with pytest.raises(EncoderError):
        oracle.encode_image(ImageTensor(np.zeros((4, 4, 1)), "gray"))


# -- text encoder ------------------------------------------------------------


def test_encode_text_unit_norm(oracle):
    emb = oracle.encode_text("a photo of a crack")
    assert emb.values.shape == (32,)
    assert abs(np.linalg.norm(emb.values) - 1.0) < 1e-6
    assert emb.normalized


def test_encode_text_deterministic(oracle):
    a = oracle.encode_text("sky")
    b = oracle.encode_text("sky")
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, oracle.encode_text("sea").values)


def test_encode_text_empty_rejected(oracle):
    with pytest.raises(ValueError):
        oracle.encode_text("   ")


def test_token_embeddings_shape(oracle):
    toks = oracle.token_embeddings("a photo of a crack")
    assert toks.shape == (5, 16)


def test_token_embeddings_position_independent(oracle):
    # Rows are per-token lookups; position enters later via pooling weights.
    ab = oracle.token_embeddings("alpha beta")
    ba = oracle.token_embeddings("beta alpha")
    assert np.array_equal(ab[0], ba[1])
    assert np.array_equal(ab[1], ba[0])


def test_encode_sequence_matches_encode_text(oracle):
    # encode_text is exactly token lookup followed by sequence encoding, so a
    # prompt bank built from raw token rows starts at the plain text encoding.
    text = "a photo of a crack"
    via_tokens = oracle.encode_sequence(oracle.token_embeddings(text))
    assert np.array_equal(via_tokens, oracle.encode_text(text).values)


def test_encode_sequence_shape_checks(oracle):
    with pytest.raises(ValueError):
        oracle.encode_sequence(np.zeros((0, 16)))
    with pytest.raises(ValueError):
        oracle.encode_sequence(np.zeros((3, 7)))


def test_encode_sequence_vjp_matches_finite_differences(small_oracle):
    rng = make_rng(7)
    tokens = rng.standard_normal((4, small_oracle.token_dim))
    out, vjp = small_oracle.encode_sequence_and_vjp(tokens)
    assert np.array_equal(out, small_oracle.encode_sequence(tokens))
    cot = rng.standard_normal(out.shape)
    grad = vjp(cot)
    assert grad.shape == tokens.shape
    step = 1e-6
    for idx in [(0, 0), (1, 3), (3, small_oracle.token_dim - 1)]:
        shifted = tokens.copy()
        shifted[idx] += step
        plus = float(cot @ small_oracle.encode_sequence(shifted))
        shifted[idx] -= 2 * step
        minus = float(cot @ small_oracle.encode_sequence(shifted))
        fd = (plus - minus) / (2 * step)
        assert abs(fd - grad[idx]) <= 1e-5 * max(1.0, abs(fd))


def test_thread_safe_flag(oracle):
    assert oracle.thread_safe


# -- bilinear resampling -----------------------------------------------------


def test_resize_identity_is_exact():
    rng = make_rng(0)
    values = rng.uniform(size=(5, 7, 3))
    assert bilinear_resize(values, 5, 7) is not values
    assert np.array_equal(bilinear_resize(values, 5, 7), values)


def test_resize_2x2_to_4x4_frozen():
    src = np.array([[1.0, 2.0], [3.0, 4.0]])
    # Half-pixel-centered sampling: source coords for 4 outputs are
    # -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]. The surface is affine
    # (1 + x + 2 y), so each cell is 1 + x + 2 y at the clamped coords.
    xs = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 1.0 + xs[None, :] + 2.0 * xs[:, None]
    out = bilinear_resize(src, 4, 4)
    assert out.shape == (4, 4)
    assert np.allclose(out, expected, atol=1e-12)
    # Corners of the upsampled grid keep the corner values.
    assert out[0, 0] == 1.0 and out[0, 3] == 2.0
    assert out[3, 0] == 3.0 and out[3, 3] == 4.0


def test_resize_constant_stays_constant():
    values = np.full((3, 5, 2), 0.7)
    out = bilinear_resize(values, 9, 4)
    assert np.allclose(out, 0.7, atol=1e-12)


def test_resize_downsample_within_range():
    rng = make_rng(1)
    values = rng.uniform(size=(16, 16))
    out = bilinear_resize(values, 3, 5)
    assert out.min() >= values.min() - 1e-12
    assert out.max() <= values.max() + 1e-12


def test_resize_rejects_empty_target():
    with pytest.raises(ValueError):
        bilinear_resize(np.ones((4, 4)), 0, 4)


def test_hflip_involution():
    rng = make_rng(2)
    values = rng.uniform(size=(4, 6, 3))
    assert np.array_equal(hflip(hflip(values)), values)
    assert np.array_equal(hflip(values)[:, 0], values[:, -1])


# -- geometry and value types ------------------------------------------------


def test_geometry_validate_bounds():
    geom = ViewGeometry(2, 3, 10, 9, False)
    geom.validate(10, 9)
    with pytest.raises(ValueError):
        geom.validate(9, 9)
    with pytest.raises(ValueError):
        ViewGeometry(4, 0, 4, 8, False).validate(10, 10)


def test_full_cover_helper():
    geom = full_cover(6, 9)
    assert (geom.h1, geom.w1, geom.h2, geom.w2) == (0, 0, 6, 9)
    assert not geom.hflip
    assert geom.height == 6 and geom.width == 9


def test_feature_map_accessors():
    fm = FeatureMap(np.zeros((2, 3, 8)), full_cover(16, 16))
    assert (fm.grid_h, fm.grid_w, fm.channels) == (2, 3, 8)
    fm.validate()
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 3)), full_cover(16, 16)).validate()


def test_image_tensor_validate():
    ImageTensor(np.zeros((2, 2, 3)), "ok").validate()
    with pytest.raises(ValueError):
        ImageTensor(np.zeros((2, 2, 3)) + np.inf, "inf").validate()


# -- decoder -----------------------------------------------------------------


def _bank(*rows: tuple[float, ...]) -> list[TextEmbedding]:
    return [
        TextEmbedding(np.asarray(row, dtype=np.float64), label=f"cat{i}", normalized=False)
        for i, row in enumerate(rows)
    ]


def test_decode_picks_highest_cosine():
    visual = FeatureMap(np.array([[[1.0, 0.0]]]), full_cover(1, 1))
    mask = cosine_argmax_decode(visual, _bank((0.0, 1.0), (1.0, 0.1)))
    assert mask.labels.shape == (1, 1)
    assert mask.labels[0, 0] == 1


def test_decode_tie_takes_lowest_index():
    visual = FeatureMap(np.array([[[1.0, 1.0]]]), full_cover(1, 1))
    mask = cosine_argmax_decode(visual, _bank((1.0, 1.0), (1.0, 1.0), (2.0, 2.0)))
    assert mask.labels[0, 0] == 0


def test_decode_upsamples_to_geometry():
    rng = make_rng(3)
    visual = FeatureMap(rng.standard_normal((2, 2, 4)), full_cover(11, 7))
    mask = cosine_argmax_decode(visual, _bank((1.0, 0, 0, 0), (0, 1.0, 0, 0)))
    assert mask.labels.shape == (11, 7)
    assert set(np.unique(mask.labels)) <= {0, 1}


def test_decode_scale_invariant():
    rng = make_rng(4)
    values = rng.standard_normal((3, 3, 6))
    bank = _bank(*[tuple(rng.standard_normal(6)) for _ in range(4)])
    a = cosine_argmax_decode(FeatureMap(values, full_cover(9, 9)), bank)
    b = cosine_argmax_decode(FeatureMap(values * 2.0, full_cover(9, 9)), bank)
    assert np.array_equal(a.labels, b.labels)


def test_decode_dim_mismatch():
    visual = FeatureMap(np.zeros((1, 1, 3)), full_cover(1, 1))
    with pytest.raises(DecoderContractError):
        cosine_argmax_decode(visual, _bank((1.0, 0.0)))


def test_decode_empty_bank():
    visual = FeatureMap(np.zeros((1, 1, 3)), full_cover(1, 1))
    with pytest.raises(DecoderContractError):
        cosine_argmax_decode(visual, [])


def test_decode_projection_applies_before_match():
    visual = FeatureMap(np.array([[[2.0, 0.0, 0.0]]]), full_cover(1, 1))
    # Project the 3-dim feature onto its last two coordinates.
    projection = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    mask = cosine_argmax_decode(visual, _bank((1.0, 0.0), (0.0, 1.0)), projection)
    assert mask.labels[0, 0] == 1


def test_backend_decode_round_trip(oracle, vocab3):
    feats = oracle.encode_image(make_image(5, 16, 16))
    bank = [oracle.encode_text(vocab3.prompt_text(j)) for j in range(len(vocab3.names))]
    mask = oracle.decode(feats, bank)
    assert mask.labels.shape == (16, 16)
    mask.validate(len(vocab3.names))


# -- vocabulary files --------------------------------------------------------


def test_parse_vocabulary_with_descriptions():
    text = "#image_type: photo of food\nbackground\tbackground of food\ncandy\n"
    vocab = parse_vocabulary(text)
    assert vocab.names == ("background", "candy")
    assert vocab.descriptions["background"] == "background of food"
    assert vocab.image_type == "photo of food"
    assert vocab.prompt_text(0) == "background of food"
    assert vocab.prompt_text(1) == "candy"


def test_parse_vocabulary_defaults_image_type():
    assert parse_vocabulary("sky\nsea\n").image_type == "photo"


def test_parse_vocabulary_skips_comments():
    vocab = parse_vocabulary("# a comment\nsky\n\nsea\n")
    assert vocab.names == ("sky", "sea")


def test_parse_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        parse_vocabulary("sky\nsky\n")


def test_parse_vocabulary_rejects_empty():
    with pytest.raises(ValueError):
        parse_vocabulary("# nothing here\n")


def test_vocabulary_round_trip():
    vocab = CategoryVocabulary(("a", "b"), {"b": "letter b"}, "sketch")
    again = parse_vocabulary(format_vocabulary(vocab))
    assert again.names == vocab.names
    assert dict(again.descriptions) == dict(vocab.descriptions)
    assert again.image_type == vocab.image_type


def test_vocabulary_rejects_unknown_description_key():
    with pytest.raises(ValueError):
        CategoryVocabulary(("a",), {"b": "stray"})
