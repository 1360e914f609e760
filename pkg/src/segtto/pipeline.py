"""Per-image orchestration and the dataset runner.

Stage order for one image: encode the original, generate and encode views,
score and select, tune the text bank on the survivors, assemble the final
per-category text features, aggregate visual features, decode. Tuning and
attribute mixing touch only the text side while aggregation touches only the
visual side, so those stages commute; the order here is fixed for
reproducibility, and a test asserts the commutation.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attributes import AttributeProvider, aggregate_attributes, mix_text_embedding, reweight
from .backends import Backend
from .config import SegTTOConfig, format_config, validate_config
from .dataset import iter_dataset, load_image, load_mask, write_counts, write_mask
from .errors import AttributeRetrievalError, SegTTOError, StageError
from .metrics import ConfusionAccumulator, Report, compute_miou
from .objective import dump_loss_maps, probability_map, selection_loss_map
from .oracle import OracleBackend
from .resample import bilinear_resize
from .tuning import (
    PromptBank,
    TuningTrace,
    build_prompt_bank,
    compose_text_features,
    reset_bank,
    run_textual_tuning,
)
from .types import (
    CategoryVocabulary,
    FeatureMap,
    ImageTensor,
    SegmentationMask,
    TextEmbedding,
    full_cover,
    load_vocabulary,
)
from .version import __version__
from .vfa import accumulate_view, finalize_canvas, init_canvas
from .views import SelectionResult, ViewBatch, generate_views, score_views, select_views, write_view_dump


@dataclass
class SegmentationJob:
    image: ImageTensor
    vocab: CategoryVocabulary
    cfg: SegTTOConfig
    backend: Backend
    attributes: AttributeProvider | None = None


@dataclass
class SegmentationResult:
    mask: SegmentationMask
    text_bank: list[TextEmbedding]
    visual_features: FeatureMap
    trace: TuningTrace
    selection: SelectionResult
    timings: dict[str, float] = field(default_factory=dict)
    counts: np.ndarray | None = None
    degraded: bool = False


def per_image_seed(rng_seed: int, source_id: str) -> int:
    """Stable per-image seed: independent of dataset ordering."""
    digest = hashlib.blake2b(
        f"{rng_seed}:{source_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") >> 1


def _encode_full(backend: Backend, image: ImageTensor) -> FeatureMap:
    """Encode the whole frame (resized to the backend's working resolution
    when it declares one) and tag it as covering the original extent."""
    image.validate()
    res = backend.input_resolution
    pixels = image.pixels
    if res is not None and pixels.shape[:2] != (res, res):
        pixels = np.clip(bilinear_resize(pixels, res, res), 0.0, 1.0)
    fm = backend.encode_image(ImageTensor(pixels, image.source_id))
    return FeatureMap(fm.values, full_cover(image.height, image.width))


def _encode_views(backend: Backend, batch: ViewBatch) -> list[FeatureMap]:
    out = []
    for view in batch.views:
        fm = backend.encode_image(view.image)
        out.append(FeatureMap(fm.values, view.geometry))
    return out


def _mean_bank(feats: np.ndarray, vocab: CategoryVocabulary) -> list[TextEmbedding]:
    return [
        TextEmbedding(feats[j].mean(axis=0), label=vocab.names[j])
        for j in range(feats.shape[0])
    ]


def baseline_segment(job: SegmentationJob, bank: PromptBank | None = None) -> SegmentationMask:
    """The unadapted decode: original features against the frozen prompt means."""
    cfg = validate_config(job.cfg)
    backend = job.backend
    if bank is None:
        bank = build_prompt_bank(job.vocab, backend, cfg.prompt_count)
    else:
        reset_bank(bank)
    orig = _encode_full(backend, job.image)
    feats = compose_text_features(bank, backend)
    return backend.decode(orig, _mean_bank(feats, job.vocab))


class _Stages:
    """Runs stages, times them, and wraps failures with the stage name."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, name: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except (SegTTOError, ValueError, FileNotFoundError) as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start
        return result


def _assemble_text_bank(
    job: SegmentationJob,
    cfg: SegTTOConfig,
    feats: np.ndarray,
) -> tuple[list[TextEmbedding], list[TextEmbedding], np.ndarray | None]:
    """Final per-category embeddings, plus the extended decode bank and the
    owner projection when attributes ride along as extra vocabulary entries."""
    vocab = job.vocab
    if cfg.attribute_mode == "none":
        bank = _mean_bank(feats, vocab)
        return bank, bank, None
    if job.attributes is None:
        raise AttributeRetrievalError(
            f"attribute_mode={cfg.attribute_mode!r} needs an attribute provider"
        )
    sets = job.attributes.sets_for(vocab)
    if cfg.attribute_mode == "pre_aggregation":
        bank = []
        for j in range(len(vocab)):
            tuned_mean = feats[j].mean(axis=0)
            weighted = reweight(sets[j], tuned_mean)
            mixed = mix_text_embedding(feats[j], aggregate_attributes(weighted), cfg.mix)
            bank.append(TextEmbedding(mixed, label=vocab.names[j]))
        return bank, bank, None
    # post_aggregation: attributes become extra decode entries whose wins are
    # projected back to the owning category.
    bank = _mean_bank(feats, vocab)
    extended = list(bank)
    owners = list(range(len(vocab)))
    for j, attr_set in enumerate(sets):
        for r, attr in enumerate(attr_set.attributes):
            extended.append(
                TextEmbedding(attr_set.embeddings[r], label=f"{vocab.names[j]}::{attr}")
            )
            owners.append(j)
    return bank, extended, np.asarray(owners, dtype=np.int64)


def segment_image(
    job: SegmentationJob,
    bank: PromptBank | None = None,
    *,
    dump_views_dir: str | Path | None = None,
    dump_losses_path: str | Path | None = None,
    fallback_baseline: bool = False,
) -> SegmentationResult:
    """Adapt to one image and decode it.

    The bank, when supplied, is reset to its frozen snapshot first so that
    every image starts from the same state; passing none builds a fresh one.
    With fallback_baseline, any failed stage downgrades to the unadapted
    decode and flags the result instead of raising.
    """
    cfg = validate_config(job.cfg)
    backend = job.backend
    try:
        return _segment_adapted(job, cfg, bank, dump_views_dir, dump_losses_path)
    except StageError:
        if not fallback_baseline:
            raise
        mask = baseline_segment(job, bank)
        orig = _encode_full(backend, job.image)
        return SegmentationResult(
            mask=mask,
            text_bank=[],
            visual_features=orig,
            trace=TuningTrace(),
            selection=SelectionResult([], []),
            degraded=True,
        )


def _segment_adapted(
    job: SegmentationJob,
    cfg: SegTTOConfig,
    bank: PromptBank | None,
    dump_views_dir: str | Path | None = None,
    dump_losses_path: str | Path | None = None,
) -> SegmentationResult:
    backend = job.backend
    stages = _Stages()

    if bank is None:
        bank = stages.run("bank", build_prompt_bank, job.vocab, backend, cfg.prompt_count)
    else:
        if bank.n_categories != len(job.vocab) or bank.prompt_count != cfg.prompt_count:
            raise StageError("bank", ValueError("prompt bank does not match job"))
        stages.run("bank", reset_bank, bank)

    orig = stages.run("encode", _encode_full, backend, job.image)

    seed = per_image_seed(cfg.rng_seed, job.image.source_id)
    batch = stages.run(
        "views",
        generate_views,
        job.image,
        cfg.view_count,
        seed,
        target_size=backend.input_resolution,
    )
    if dump_views_dir is not None:
        write_view_dump(batch, dump_views_dir)
    view_feats = stages.run("views", _encode_views, backend, batch)

    def _select():
        feats0 = compose_text_features(bank, backend)
        maps = [
            selection_loss_map(
                probability_map(vf, feats0, cfg.temperature, view_index=i), cfg
            )
            for i, vf in enumerate(view_feats)
        ]
        if dump_losses_path is not None:
            dump_loss_maps(dump_losses_path, maps)
        return select_views(score_views(maps, cfg), cfg.retention_fraction)

    selection = stages.run("select", _select)
    tuning_views = [view_feats[i] for i in selection.kept_indices]

    def _tune():
        return run_textual_tuning(bank, tuning_views, cfg, backend)

    _, trace = stages.run("tune", _tune)

    feats = stages.run("text", compose_text_features, bank, backend)
    text_bank, decode_bank, owners = stages.run("text", _assemble_text_bank, job, cfg, feats)

    def _aggregate() -> tuple[FeatureMap, np.ndarray | None]:
        # The aggregation stage consumes the plain floor of the retention
        # budget: a fraction below one view disables it entirely while
        # scoring and tuning above always keep at least one view.
        effective = math.floor(cfg.retention_fraction * len(batch) + 1e-9)
        if effective < 1:
            return orig, None
        image_size = (job.image.height, job.image.width)
        canvas = init_canvas(orig, image_size)
        for i in selection.kept_indices:
            accumulate_view(canvas, view_feats[i])
        return finalize_canvas(canvas, (orig.grid_h, orig.grid_w)), canvas.counts

    visual, counts = stages.run("aggregate", _aggregate)

    def _decode() -> SegmentationMask:
        mask = backend.decode(visual, decode_bank)
        if owners is not None:
            mask = SegmentationMask(owners[mask.labels])
        return mask

    mask = stages.run("decode", _decode)
    mask.validate(len(job.vocab))
    return SegmentationResult(
        mask=mask,
        text_bank=text_bank,
        visual_features=visual,
        trace=trace,
        selection=selection,
        timings=stages.timings,
        counts=counts,
    )


# -- dataset runner -----------------------------------------------------------

def _trace_lines(image_id: str, trace: TuningTrace) -> list[str]:
    lines = [
        json.dumps(
            {
                "image": image_id,
                "step": r.step,
                "loss": r.loss,
                "value": r.value,
                "update_norm": r.update_norm,
            },
            sort_keys=True,
        )
        for r in trace.records
    ]
    if trace.initial_loss is not None:
        lines.append(
            json.dumps(
                {
                    "image": image_id,
                    "initial_loss": trace.initial_loss,
                    "final_loss": trace.final_loss,
                },
                sort_keys=True,
            )
        )
    return lines


def run_dataset(
    root: str | Path,
    cfg: SegTTOConfig,
    out_dir: str | Path,
    *,
    backend: Backend | None = None,
    vocab_path: str | Path | None = None,
    attributes: AttributeProvider | None = None,
    fallback_baseline: bool = False,
    trace_path: str | Path | None = None,
    emit_csv: str | Path | None = None,
    dump_counts_dir: str | Path | None = None,
) -> dict:
    """Segment every image under root and write predictions plus a summary.

    Images are processed in sorted id order with per-image seeds derived from
    (cfg.rng_seed, id), so results do not depend on how the directory lists.
    Unreadable images are skipped and counted. Returns the summary record
    (also written to summary.json).
    """
    started = time.perf_counter()
    cfg = validate_config(cfg)
    root = Path(root)
    out_dir = Path(out_dir)
    vocab = load_vocabulary(vocab_path if vocab_path is not None else root / "vocab.txt")
    if backend is None:
        backend = OracleBackend(seed=cfg.rng_seed)
    bank = build_prompt_bank(vocab, backend, cfg.prompt_count)

    conf = ConfusionAccumulator(len(vocab))
    records: list[dict] = []
    trace_lines: list[str] = []
    processed = 0
    skipped = 0
    degraded = 0
    any_gt = False

    for entry in iter_dataset(root):
        image_started = time.perf_counter()
        try:
            image = load_image(entry.image_path, entry.image_id)
            job = SegmentationJob(image, vocab, cfg, backend, attributes)
            result = segment_image(job, bank=bank, fallback_baseline=fallback_baseline)
        except (SegTTOError, OSError, ValueError) as exc:
            skipped += 1
            records.append({"id": entry.image_id, "error": str(exc)})
            continue
        processed += 1
        degraded += int(result.degraded)
        write_mask(out_dir / "pred" / f"{entry.image_id}.png", result.mask)
        if dump_counts_dir is not None and result.counts is not None:
            write_counts(Path(dump_counts_dir) / f"{entry.image_id}.png", result.counts)
        record = {
            "id": entry.image_id,
            "height": image.height,
            "width": image.width,
            "degraded": result.degraded,
            "seconds": time.perf_counter() - image_started,
        }
        if entry.mask_path is not None:
            gt = load_mask(entry.mask_path)
            conf.add(result.mask, gt)
            any_gt = True
            counted = gt != 255
            record["pixel_accuracy"] = (
                float((result.mask.labels[counted] == gt[counted]).mean())
                if counted.any()
                else None
            )
        records.append(record)
        trace_lines.extend(_trace_lines(entry.image_id, result.trace))

    per_class: list[float | None]
    miou: float | None
    if any_gt:
        per_class, miou = compute_miou(conf)
    else:
        per_class, miou = [None] * len(vocab), None

    report = Report(
        per_class_iou=per_class,
        miou=miou,
        image_count=processed,
        skipped_count=skipped,
        config_echo=format_config(cfg),
        version=f"segtto-{__version__}",
    )
    summary = dict(report.to_dict())
    summary["categories"] = list(vocab.names)
    summary["degraded_count"] = degraded
    summary["ignored_pixels"] = conf.ignored
    summary["per_image"] = records
    summary["wall_clock_sec"] = time.perf_counter() - started

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        Path(trace_path).write_text(
            "\n".join(trace_lines) + ("\n" if trace_lines else ""), encoding="utf-8"
        )
    if emit_csv is not None:
        lines = ["class,iou"]
        for c, name in enumerate(vocab.names):
            iou = per_class[c]
            lines.append(f"{name},{'' if iou is None else f'{iou:.6f}'}")
        Path(emit_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(emit_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary
