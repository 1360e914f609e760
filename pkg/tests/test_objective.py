"""Probability maps, entropy and pseudo-label losses, spatial aggregates."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from segtto import (
    FeatureMap,
    ProbabilityMap,
    PseudoLabelMap,
    SegTTOConfig,
    cross_entropy_map,
    dump_loss_maps,
    entropy_map,
    full_cover,
    probability_map,
    pseudo_labels,
    selection_loss_map,
    spatial_aggregate,
)
from segtto.objective import (
    LossMap,
    aggregate_values,
    aggregate_weights,
    cross_entropy_values,
    entropy_values,
    hard_labels,
    softmax,
)
from conftest import make_rng


def _pm(probs: np.ndarray, view: int = 0) -> ProbabilityMap:
    return ProbabilityMap(np.asarray(probs, dtype=np.float64), source_view=view)


def _random_map(seed: int, h: int = 4, w: int = 5, n: int = 3) -> ProbabilityMap:
    raw = make_rng(seed).uniform(0.05, 1.0, size=(h, w, n))
    return _pm(raw / raw.sum(axis=-1, keepdims=True))


def _simplex_rows(n: int):
    raw = hnp.arrays(np.float64, (6, n), elements=st.floats(1e-6, 1e6))
    return raw.map(lambda a: a / a.sum(axis=-1, keepdims=True))


# -- probability maps --------------------------------------------------------


def test_two_category_probabilities_frozen():
    # Unit visual feature against two unit text features at cosines
    # (ln 2, 0) and temperature 1 gives softmax (2/3, 1/3).
    ln2 = math.log(2.0)
    visual = FeatureMap(np.array([[[1.0, 0.0]]]), full_cover(1, 1))
    text = np.array([[[ln2, math.sqrt(1.0 - ln2 * ln2)]], [[0.0, 1.0]]])
    pm = probability_map(visual, text, temperature=1.0)
    assert pm.probs.shape == (1, 1, 2)
    assert abs(pm.probs[0, 0, 0] - 2.0 / 3.0) < 1e-12
    assert abs(pm.probs[0, 0, 1] - 1.0 / 3.0) < 1e-12


def test_single_category_is_certain():
    rng = make_rng(0)
    visual = FeatureMap(rng.standard_normal((3, 3, 8)), full_cover(12, 12))
    pm = probability_map(visual, rng.standard_normal((1, 2, 8)), temperature=50.0)
    assert np.array_equal(pm.probs, np.ones((3, 3, 1)))
    assert np.array_equal(entropy_map(pm).values, np.zeros((3, 3)))


def test_rows_sum_to_one(oracle, vocab3):
    from conftest import make_image

    visual = oracle.encode_image(make_image(10, 16, 16))
    text = np.stack(
        [
            np.stack([oracle.encode_text(f"{t} {name}").values for t in ("a", "the")])
            for name in vocab3.names
        ]
    )
    pm = probability_map(visual, text, temperature=100.0)
    sums = pm.probs.sum(axis=-1)
    assert np.all(np.abs(sums - 1.0) < 1e-6)
    assert np.all(pm.probs >= 0.0)


def test_visual_rescale_invariance():
    rng = make_rng(1)
    values = rng.standard_normal((2, 2, 6))
    text = rng.standard_normal((3, 2, 6))
    base = probability_map(FeatureMap(values, full_cover(8, 8)), text, 10.0)
    # Power-of-two scaling leaves the normalized features bitwise identical.
    doubled = probability_map(FeatureMap(values * 2.0, full_cover(8, 8)), text, 10.0)
    assert np.array_equal(base.probs, doubled.probs)
    scaled = probability_map(FeatureMap(values * 3.7, full_cover(8, 8)), text, 10.0)
    assert np.allclose(base.probs, scaled.probs, atol=1e-9)


def test_zero_feature_row_goes_uniform():
    values = np.zeros((1, 1, 4))
    text = make_rng(2).standard_normal((5, 1, 4))
    pm = probability_map(FeatureMap(values, full_cover(4, 4)), text, 30.0)
    assert np.allclose(pm.probs[0, 0], 0.2, atol=1e-12)


def test_prompt_average_not_member_logit():
    # With two prompts per category the logit must use their mean cosine.
    visual = FeatureMap(np.array([[[1.0, 0.0]]]), full_cover(1, 1))
    text = np.array(
        [
            [[1.0, 0.0], [0.0, 1.0]],    # cosines 1 and 0 -> mean 0.5
            [[0.6, 0.8], [0.6, -0.8]],   # cosines 0.6 and 0.6 -> mean 0.6
        ]
    )
    pm = probability_map(visual, text, temperature=1.0)
    expected = softmax(np.array([0.5, 0.6]))
    assert np.allclose(pm.probs[0, 0], expected, atol=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"temperature": 0.0},
        {"temperature": -5.0},
        {"text_shape": (3, 6)},
        {"text_dim": 5},
        {"poison": "visual"},
        {"poison": "text"},
    ],
)
def test_probability_map_rejects_bad_inputs(kwargs):
    rng = make_rng(3)
    values = rng.standard_normal((2, 2, 6))
    text = rng.standard_normal(kwargs.get("text_shape", (3, 2, kwargs.get("text_dim", 6))))
    if kwargs.get("poison") == "visual":
        values[0, 0, 0] = np.inf
    if kwargs.get("poison") == "text":
        text[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        probability_map(
            FeatureMap(values, full_cover(8, 8)), text, kwargs.get("temperature", 10.0)
        )


# -- entropy -----------------------------------------------------------------


@pytest.mark.parametrize("n", [2, 3, 10, 100])
def test_uniform_entropy_is_log_n(n):
    pm = _pm(np.full((2, 2, n), 1.0 / n))
    assert np.all(np.abs(entropy_map(pm).values - math.log(n)) < 1e-9)


def test_one_hot_entropy_is_zero_exactly():
    probs = np.zeros((1, 3, 4))
    probs[:, :, 2] = 1.0
    assert np.array_equal(entropy_map(_pm(probs)).values, np.zeros((1, 3)))


def test_half_half_entropy_frozen():
    values = entropy_map(_pm(np.array([[[0.5, 0.5]]]))).values
    assert abs(values[0, 0] - math.log(2.0)) < 1e-12
    assert round(float(values[0, 0]), 4) == 0.6931


@given(_simplex_rows(5))
@settings(max_examples=60, deadline=None)
def test_entropy_bounds(rows):
    h = entropy_values(rows)
    assert np.all(h >= -1e-12)
    assert np.all(h <= math.log(rows.shape[-1]) + 1e-9)


@given(_simplex_rows(4))
@settings(max_examples=60, deadline=None)
def test_sharpening_never_raises_entropy(rows):
    sharp = rows**2
    sharp = sharp / sharp.sum(axis=-1, keepdims=True)
    assert np.all(entropy_values(sharp) <= entropy_values(rows) + 1e-9)


# -- pseudo labels and cross-entropy -----------------------------------------


def test_hard_labels_argmax():
    labels = hard_labels(np.array([[0.2, 0.5, 0.3]]))
    assert np.array_equal(labels, np.array([[0.0, 1.0, 0.0]]))


def test_hard_labels_tie_lowest_index():
    labels = hard_labels(np.array([[0.5, 0.5], [0.25, 0.25]]))
    assert np.array_equal(labels, np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_soft_labels_are_detached_copies():
    pm = _random_map(4)
    lab = pseudo_labels(pm, "soft")
    assert np.array_equal(lab.labels, pm.probs)
    lab.labels[0, 0, 0] = 99.0
    assert pm.probs[0, 0, 0] != 99.0


def test_pseudo_labels_unknown_mode():
    with pytest.raises(ValueError):
        pseudo_labels(_random_map(5), "fuzzy")


def test_cross_entropy_frozen_value():
    pm = _pm(np.array([[[0.7, 0.3]]]))
    lab = PseudoLabelMap(np.array([[[1.0, 0.0]]]), mode="hard")
    value = cross_entropy_map(pm, lab).values[0, 0]
    assert abs(value - (-math.log(0.7))) < 1e-12
    assert round(float(value), 4) == 0.3567


def test_cross_entropy_of_soft_self_equals_entropy(oracle, vocab3):
    from conftest import make_image

    visual = oracle.encode_image(make_image(11, 12, 12))
    text = np.stack([oracle.encode_text(n).values for n in vocab3.names])[:, None, :]
    pm = probability_map(visual, text, temperature=40.0)
    ce = cross_entropy_map(pm, pseudo_labels(pm, "soft")).values
    assert np.allclose(ce, entropy_map(pm).values, atol=1e-9)


@given(_simplex_rows(3))
@settings(max_examples=60, deadline=None)
def test_cross_entropy_non_negative(rows):
    assert np.all(cross_entropy_values(rows, hard_labels(rows)) >= -1e-12)


def test_cross_entropy_shape_mismatch():
    with pytest.raises(ValueError):
        cross_entropy_map(_random_map(6, 2, 2, 3), PseudoLabelMap(np.zeros((2, 3, 3))))


def test_cross_entropy_survives_zero_probability():
    pm = _pm(np.array([[[1.0, 0.0]]]))
    lab = PseudoLabelMap(np.array([[[0.0, 1.0]]]))
    value = cross_entropy_map(pm, lab).values[0, 0]
    assert np.isfinite(value)
    # Floored at the log clamp: -log(1e-12).
    assert abs(value - (-math.log(1e-12))) < 1e-9


# -- spatial aggregation -----------------------------------------------------


def test_aggregate_frozen_examples():
    values = np.array([[1.0, 2.0], [3.0, 10.0]])
    assert aggregate_values(values, "mean") == 4.0
    assert aggregate_values(values, "median") == 2.5
    assert aggregate_values(values, "max") == 10.0
    assert aggregate_values(np.array([[1.0, 2.0, 9.0]]), "median") == 2.0


def test_aggregate_matches_double_loop():
    values = make_rng(7).uniform(size=(16, 16))
    total = 0.0
    for r in range(16):
        for c in range(16):
            total += values[r, c]
    assert abs(aggregate_values(values, "mean") - total / 256.0) < 1e-9
    ordered = sorted(values.ravel().tolist())
    assert abs(aggregate_values(values, "median") - (ordered[127] + ordered[128]) / 2.0) < 1e-12
    assert aggregate_values(values, "max") == ordered[-1]


def test_aggregate_empty_and_unknown():
    with pytest.raises(ValueError):
        aggregate_values(np.zeros((0,)), "mean")
    with pytest.raises(ValueError):
        aggregate_values(np.ones((2, 2)), "mode")
    with pytest.raises(ValueError):
        aggregate_weights(np.ones((2, 2)), "mode")


@pytest.mark.parametrize("mode", ["mean", "median", "max"])
def test_aggregate_weights_reproduce_value(mode):
    for seed in range(5):
        flat = make_rng(seed).uniform(size=17 if seed % 2 else 16)
        weights = aggregate_weights(flat, mode)
        assert weights.shape == flat.shape
        assert abs(weights.sum() - 1.0) < 1e-12
        # The subgradient reads exactly the entries the forward pass used.
        assert abs(float(weights @ flat) - aggregate_values(flat, mode)) < 1e-12


def test_aggregate_weights_mean_is_exact_gradient():
    flat = make_rng(9).uniform(size=12)
    weights = aggregate_weights(flat, "mean")
    bumped = flat.copy()
    bumped[3] += 0.5
    assert abs(
        aggregate_values(bumped, "mean") - aggregate_values(flat, "mean") - 0.5 * weights[3]
    ) < 1e-12


def test_spatial_aggregate_wrapper():
    lm = LossMap(np.array([[1.0, 3.0]]))
    assert spatial_aggregate(lm, "mean") == 2.0


# -- selection loss ----------------------------------------------------------


def test_selection_loss_entropy_only():
    pm = _random_map(12)
    lm = selection_loss_map(pm, SegTTOConfig())
    assert np.array_equal(lm.values, entropy_map(pm).values)


def test_selection_loss_full_ssl_is_sum():
    pm = _random_map(13)
    cfg = SegTTOConfig(selection_loss_mode="full_ssl")
    ent = entropy_map(pm).values
    ce = cross_entropy_map(pm, pseudo_labels(pm, cfg.pseudo_label_mode)).values
    assert np.allclose(selection_loss_map(pm, cfg).values, ent + ce, atol=1e-12)


def test_selection_loss_preserves_view_index():
    pm = _random_map(14)
    pm.source_view = 9
    assert selection_loss_map(pm, SegTTOConfig()).source_view == 9


# -- debug dump --------------------------------------------------------------


def test_dump_loss_maps_round_trip(tmp_path):
    maps = [
        LossMap(np.array([[0.25, 1.5]]), source_view=0),
        LossMap(np.array([[2.0], [0.125]]), source_view=3),
    ]
    path = tmp_path / "losses.txt"
    dump_loss_maps(path, maps)
    lines = path.read_text().splitlines()
    assert lines[0] == "view=0 shape=1x2"
    assert [float(v) for v in lines[1].split()] == [0.25, 1.5]
    assert lines[2] == "view=3 shape=2x1"
    assert [float(v) for v in lines[3].split()] == [2.0, 0.125]
