"""Command line entry points.

Exit codes: 0 on success, 1 when a job fails, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .attributes import (
    AttributeCache,
    AttributeProvider,
    HTTPChatClient,
    OfflineClient,
    build_llm_prompt,
    fetch_attributes,
)
from .config import SegTTOConfig, load_config, validate_config
from .dataset import load_image, write_counts, write_mask
from .errors import SegTTOError
from .oracle import OracleBackend
from .pipeline import SegmentationJob, _trace_lines, run_dataset, segment_image
from .selfcheck import run_selftest
from .types import load_vocabulary
from .version import __version__


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="override rng_seed")
    parser.add_argument("--offline", action="store_true", help="forbid network access")
    parser.add_argument("--cache", help="attribute cache file")
    parser.add_argument("--dataset-id", default="default", help="cache namespace")
    parser.add_argument("--fallback-baseline", action="store_true",
                        help="degrade to the unadapted decode when a stage fails")
    parser.add_argument("--trace", help="write tuning trace JSONL here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segtto",
        description="Per-image test-time optimization for open-vocabulary segmentation",
    )
    parser.add_argument("--version", action="version", version=f"segtto {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment one image")
    seg.add_argument("image", help="input image path")
    seg.add_argument("--vocab", required=True, help="vocabulary file")
    seg.add_argument("--output", help="prediction PNG path (default: <stem>_pred.png)")
    seg.add_argument("--dump-views", help="directory for augmented view dumps")
    seg.add_argument("--dump-counts", help="write the aggregation count map PNG here")
    seg.add_argument("--dump-losses", help="write per-view selection loss maps here")
    _add_common(seg)

    ev = sub.add_parser("evaluate", help="run a dataset folder and report IoU")
    ev.add_argument("root", help="dataset root (images/, masks/, vocab.txt)")
    ev.add_argument("--vocab", help="vocabulary file (default: <root>/vocab.txt)")
    ev.add_argument("--out", default="segtto_out", help="output directory")
    ev.add_argument("--emit-csv", help="write per-class IoU CSV here")
    ev.add_argument("--dump-counts", help="directory for aggregation count maps")
    _add_common(ev)

    at = sub.add_parser("attributes", help="pre-generate or refresh an attribute cache")
    at.add_argument("--vocab", required=True, help="vocabulary file")
    at.add_argument("--llm-url", help="chat completion endpoint (or SEGTTO_LLM_URL)")
    at.add_argument("--llm-model", help="model identifier (or SEGTTO_LLM_MODEL)")
    _add_common(at)

    sub.add_parser("selftest", help="run the built-in invariant suite")
    return parser


def _load_cfg(args: argparse.Namespace) -> SegTTOConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SegTTOConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    return validate_config(cfg)


def _attribute_provider(args, cfg, backend):
    if cfg.attribute_mode == "none" and not getattr(args, "command", "") == "attributes":
        return None
    cache = AttributeCache(args.cache) if args.cache else AttributeCache()
    client = OfflineClient() if args.offline else HTTPChatClient(
        getattr(args, "llm_url", None), getattr(args, "llm_model", None)
    )
    return AttributeProvider(cache, client, backend, args.dataset_id)


def _cmd_segment(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    backend = OracleBackend(seed=cfg.rng_seed)
    image = load_image(args.image)
    vocab = load_vocabulary(args.vocab)
    provider = _attribute_provider(args, cfg, backend)
    job = SegmentationJob(image, vocab, cfg, backend, provider)
    result = segment_image(
        job,
        dump_views_dir=args.dump_views,
        dump_losses_path=args.dump_losses,
        fallback_baseline=args.fallback_baseline,
    )
    output = Path(args.output) if args.output else Path(f"{Path(args.image).stem}_pred.png")
    write_mask(output, result.mask)
    if args.dump_counts and result.counts is not None:
        write_counts(args.dump_counts, result.counts)
    if args.trace:
        lines = _trace_lines(image.source_id, result.trace)
        Path(args.trace).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    kept = len(result.selection.kept_indices)
    print(f"wrote {output} ({kept} views kept, degraded={result.degraded})")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    backend = OracleBackend(seed=cfg.rng_seed)
    provider = _attribute_provider(args, cfg, backend)
    summary = run_dataset(
        args.root,
        cfg,
        args.out,
        backend=backend,
        vocab_path=args.vocab,
        attributes=provider,
        fallback_baseline=args.fallback_baseline,
        trace_path=args.trace,
        emit_csv=args.emit_csv,
        dump_counts_dir=args.dump_counts,
    )
    shown = {k: v for k, v in summary.items() if k != "per_image"}
    print(json.dumps(shown, indent=2, sort_keys=True))
    return 0


def _cmd_attributes(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    backend = OracleBackend(seed=cfg.rng_seed)
    vocab = load_vocabulary(args.vocab)
    if not args.cache:
        print("error: --cache is required to store attributes", file=sys.stderr)
        return 2
    cache = AttributeCache(args.cache)
    client = OfflineClient() if args.offline else HTTPChatClient(args.llm_url, args.llm_model)
    for j in range(len(vocab)):
        prompt = build_llm_prompt(vocab, j)
        reference = backend.encode_text(vocab.prompt_text(j)).values
        attrs = fetch_attributes(
            prompt, client, cache, backend, reference, dataset_id=args.dataset_id
        )
        print(f"{vocab.names[j]}: {len(attrs)} attributes")
    cache.save(args.cache, dataset_id=args.dataset_id)
    return 0


def _cmd_selftest(_: argparse.Namespace) -> int:
    results = run_selftest()
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += int(not ok)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


_COMMANDS = {
    "segment": _cmd_segment,
    "evaluate": _cmd_evaluate,
    "attributes": _cmd_attributes,
    "selftest": _cmd_selftest,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version and 2 for usage errors
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except SegTTOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
