"""Installed-package self-verification: a compact invariant suite.

Runs without the test tree or network. Each check returns quickly and covers
one contract the rest of the system leans on.
"""

from __future__ import annotations

import numpy as np

from .attributes import AttributeSet, aggregate_attributes, mix_text_embedding
from .config import SegTTOConfig, format_config, parse_config_text, validate_config
from .objective import cross_entropy_values, entropy_values, softmax
from .oracle import OracleBackend
from .pipeline import SegmentationJob, segment_image
from .tuning import build_prompt_bank, evaluate_ssl, pcgrad_combine
from .types import CategoryVocabulary, FeatureMap, ImageTensor, full_cover
from .vfa import aggregate_visual
from .views import generate_views, select_views


def _check_pcgrad() -> str:
    out = pcgrad_combine(np.array([1.0, 0.0]), np.array([-1.0, 1.0]))
    assert np.allclose(out, [0.5, 1.5], atol=1e-12), out
    out = pcgrad_combine(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert np.allclose(out, [0.0, 0.0], atol=1e-12), out
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(100):
        dim = int(rng.integers(2, 65))
        g_a, g_b = rng.standard_normal(dim), rng.standard_normal(dim)
        combined = pcgrad_combine(g_a, g_b)
        if float(g_a @ g_b) >= 0:
            assert np.array_equal(combined, g_a + g_b)
    return "projection identities hold"


def _check_objective() -> str:
    for n in (2, 3, 10):
        uniform = np.full((1, n), 1.0 / n)
        assert abs(entropy_values(uniform)[0] - np.log(n)) < 1e-9
    rng = np.random.Generator(np.random.PCG64(11))
    probs = softmax(rng.standard_normal((50, 4)))
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6
    gap = np.abs(cross_entropy_values(probs, probs.copy()) - entropy_values(probs))
    assert gap.max() < 1e-9
    return "entropy and cross-entropy identities hold"


def _check_selection() -> str:
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(20):
        m = int(rng.integers(1, 65))
        scores = np.round(rng.standard_normal(m), 1)  # deliberate ties
        frac = float(rng.uniform(0.05, 1.0))
        kept = select_views(scores, frac).kept_indices
        expect = sorted(
            sorted(range(m), key=lambda i: (scores[i], i))[
                : max(1, int(np.floor(frac * m + 1e-9)))
            ]
        )
        assert kept == expect, (kept, expect)
    return "matches full-sort reference"


def _check_vfa() -> str:
    rng = np.random.Generator(np.random.PCG64(5))
    orig = FeatureMap(rng.standard_normal((6, 6, 3)), full_cover(6, 6))
    assert aggregate_visual(orig, [], (6, 6), (6, 6)) is orig
    twin = FeatureMap(orig.values.copy(), full_cover(6, 6))
    out = aggregate_visual(orig, [twin], (6, 6), (6, 6))
    assert np.array_equal(out.values, orig.values)
    return "empty and identical-view fixed points are exact"


def _check_oracle_determinism() -> str:
    backend = OracleBackend(seed=9)
    rng = np.random.Generator(np.random.PCG64(13))
    image = ImageTensor(rng.uniform(size=(16, 16, 3)), "selfcheck")
    a = backend.encode_image(image).values
    b = backend.encode_image(image).values
    assert np.array_equal(a, b)
    emb = backend.encode_text("a photo of a crack")
    assert abs(np.linalg.norm(emb.values) - 1.0) < 1e-9
    return "bitwise-stable encoders"


def _check_gradients() -> str:
    backend = OracleBackend(seed=1, feature_dim=8, token_dim=6, input_resolution=None)
    vocab = CategoryVocabulary(("ash", "bone"))
    cfg = validate_config(SegTTOConfig(temperature=3.0, prompt_count=2))
    bank = build_prompt_bank(vocab, backend, 2)
    rng = np.random.Generator(np.random.PCG64(2))
    view = FeatureMap(rng.standard_normal((3, 3, 8)), full_cover(3, 3))
    _, grads = evaluate_ssl(bank, [view], cfg, backend, ("entropy",))
    grad = grads["entropy"]
    arrays = list(bank.class_tokens) + list(bank.prompt_tokens)
    flat_index = 0
    checked = 0
    step = 1e-4
    for arr in arrays:
        for offset in range(0, arr.size, max(1, arr.size // 2)):
            original = arr.flat[offset]
            arr.flat[offset] = original + step
            up, _ = evaluate_ssl(bank, [view], cfg, backend, ("entropy",), need_grads=False)
            arr.flat[offset] = original - step
            down, _ = evaluate_ssl(bank, [view], cfg, backend, ("entropy",), need_grads=False)
            arr.flat[offset] = original
            fd = (up["entropy"] - down["entropy"]) / (2 * step)
            got = grad[flat_index + offset]
            assert abs(got - fd) <= 1e-3 * max(1.0, abs(fd)), (got, fd)
            checked += 1
        flat_index += arr.size
    return f"{checked} coordinates match finite differences"


def _check_views() -> str:
    rng = np.random.Generator(np.random.PCG64(21))
    image = ImageTensor(rng.uniform(size=(40, 30, 3)), "vc")
    batch = generate_views(image, 16, seed=4, target_size=8)
    for view in batch.views:
        g = view.geometry
        assert 0 <= g.h1 < g.h2 <= 40 and 0 <= g.w1 < g.w2 <= 30
        assert g.height >= 2 and g.width >= 2
        assert view.image.pixels.shape == (8, 8, 3)
    again = generate_views(image, 16, seed=4, target_size=8)
    assert all(
        np.array_equal(a.image.pixels, b.image.pixels)
        for a, b in zip(batch.views, again.views)
    )
    return "geometry legal and reproducible"


def _check_attributes() -> str:
    rng = np.random.Generator(np.random.PCG64(17))
    embs = rng.standard_normal((4, 8))
    attrs = AttributeSet("x", [f"a{i}" for i in range(4)], embs, rng.uniform(0.2, 1.0, 4))
    vec = aggregate_attributes(attrs)
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-6
    perm = rng.permutation(4)
    shuffled = AttributeSet("x", [attrs.attributes[i] for i in perm], embs[perm], attrs.weights[perm])
    assert np.allclose(aggregate_attributes(shuffled), vec, atol=1e-12)
    tuned = rng.standard_normal((5, 8))
    assert np.allclose(mix_text_embedding(tuned, vec, 1.0), tuned.mean(axis=0), atol=1e-12)
    assert np.array_equal(mix_text_embedding(tuned, vec, 0.0), vec)
    return "aggregation is unit-norm and order-free"


def _check_pipeline_determinism() -> str:
    backend = OracleBackend(seed=3, input_resolution=16)
    vocab = CategoryVocabulary(("sky", "sea"))
    cfg = SegTTOConfig(temperature=10.0, view_count=4, rng_seed=5)
    rng = np.random.Generator(np.random.PCG64(19))
    image = ImageTensor(rng.uniform(size=(12, 12, 3)), "det")
    job = SegmentationJob(image, vocab, cfg, backend)
    first = segment_image(job)
    second = segment_image(job)
    assert np.array_equal(first.mask.labels, second.mask.labels)
    return "repeat runs are bitwise identical"


def _check_config() -> str:
    cfg = validate_config(SegTTOConfig())
    assert parse_config_text(format_config(cfg)) == cfg
    assert validate_config(cfg) is cfg
    return "round trip and idempotence hold"


CHECKS = (
    ("pcgrad", _check_pcgrad),
    ("objective", _check_objective),
    ("selection", _check_selection),
    ("aggregation", _check_vfa),
    ("oracle", _check_oracle_determinism),
    ("gradients", _check_gradients),
    ("views", _check_views),
    ("attributes", _check_attributes),
    ("pipeline", _check_pipeline_determinism),
    ("config", _check_config),
)


def run_selftest() -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        try:
            detail = fn()
            results.append((name, True, detail))
        except Exception as exc:  # noqa: BLE001 - report, do not crash the suite
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
