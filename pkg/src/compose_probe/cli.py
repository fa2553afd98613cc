"""Command-line surface: reproducible runs over the library modules.

Exit codes: 0 success, 2 usage, 3 runtime/scorer failure, 4 bad data format.
Every run that writes artifacts also writes a manifest capturing the
subcommand, flags, seeds, input hashes and tool version; rerunning with an
equal manifest reproduces the outputs byte for byte (timestamps aside).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .biscor import (
    CaptionTemplates,
    DEFAULT_TEMPLATES,
    SwapCategory,
    build_split,
    emit_render_jobs,
)
from .crops import CropConfig, Placement, per_size_counts, plan_crops
from .errors import (
    CacheMissError,
    ComposeProbeError,
    ConfigurationError,
    ConsistencyError,
    DataFormatError,
    ExhaustionError,
    ProtocolError,
    SceneParseError,
    ScorerError,
    StoreCorruptionError,
    StoreFormatError,
    TransportError,
)
from .metrics import dump_instances, evaluate, load_instances
from .scenes import load_clevr_scenes
from .segments import (
    Granularity,
    Lexicon,
    SegmentAnnotation,
    segment_automatic,
    segment_structured,
)
from .sgi import SgiConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_DATA = 4

USAGE_ERRORS = (ConfigurationError, ConsistencyError)
DATA_ERRORS = (SceneParseError, StoreFormatError, StoreCorruptionError, DataFormatError)
RUNTIME_ERRORS = (ScorerError, CacheMissError, TransportError, ProtocolError, ExhaustionError)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, args: argparse.Namespace,
                   inputs: list[Path], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": getattr(args, "seed", None),
        "input_hashes": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "tool_version": __version__,
        "started_at": started,
        "finished_at": time.time(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _parse_sizes(text: str) -> tuple[tuple[int, int], ...]:
    sizes = []
    for part in text.split(";"):
        w, h = part.split(",")
        sizes.append((int(w), int(h)))
    return tuple(sizes)


def cmd_plan_crops(args) -> int:
    config = CropConfig(
        sizes=_parse_sizes(args.sizes) if args.sizes else CropConfig().sizes,
        placement=Placement(args.placement),
        include_full_image=not args.no_full_image,
    )
    rects = plan_crops(args.width, args.height, config)
    counts = per_size_counts(args.width, args.height, config)
    payload = {
        "width": args.width,
        "height": args.height,
        "placement": args.placement,
        "per_size": {f"{w}x{h}": c for (w, h), c in counts.items()},
        "total": len(rects),
        "crops": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h} for r in rects],
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    else:
        json.dump(payload, sys.stdout, indent=2)
        print()
    for (w, h), c in counts.items():
        print(f"size {w}x{h}: {c}", file=sys.stderr)
    print(f"total: {len(rects)}", file=sys.stderr)
    return EXIT_OK


def cmd_segment(args) -> int:
    lexicon = Lexicon.from_dir(args.lexicons) if args.lexicons else None
    if not args.caption or not args.caption.strip():
        raise ConfigurationError("--caption may not be empty")
    if args.strategy == "structured":
        if not args.annotation:
            raise ConfigurationError("structured segmentation needs --annotation")
        with open(args.annotation, "r", encoding="utf-8") as fh:
            annotation = SegmentAnnotation.from_dict(json.load(fh))
        segs = segment_structured(annotation, args.caption, Granularity(args.granularity))
    else:
        segs = segment_automatic(args.caption, lexicon)
    json.dump({"caption": args.caption, "segments": list(segs.segments)}, sys.stdout, indent=2)
    print()
    return EXIT_OK


def _build_scorer(args):
    from .scoring import (
        GlobalLiveScorer,
        GlobalStoreScorer,
        RandomScorer,
        SgiLiveScorer,
        SgiStoreScorer,
    )

    sgi_cfg = SgiConfig(
        crop_config=CropConfig(placement=Placement(args.placement)),
        granularity=Granularity(args.granularity),
    )
    if args.scorer == "random":
        return RandomScorer(seed=args.seed)
    if args.store:
        from .embeddings import store_read

        store = store_read(args.store)
        if args.scorer == "global":
            return GlobalStoreScorer(store)
        if args.scorer == "sgi":
            return SgiStoreScorer(store, sgi_cfg)
        if args.scorer == "transformer":
            from .training import TransformerScorer, load_checkpoint

            if not args.checkpoint:
                raise ConfigurationError("--scorer transformer needs --checkpoint")
            params, model_cfg = load_checkpoint(args.checkpoint)
            return TransformerScorer(params, model_cfg, store)
        raise ConfigurationError(f"unknown scorer {args.scorer!r}")
    if not args.encoder:
        raise ConfigurationError("need --store or --encoder for this scorer")
    from .remote import RemoteEncoder

    encoder = RemoteEncoder(args.encoder)
    cache_dir = os.environ.get("COMPOSE_PROBE_CACHE")
    if cache_dir:
        from .cache import CachingEncoder, EmbeddingCache
        from .embeddings import text_key
        from .raster import ImageRaster

        def keys_for(items, is_text):
            if is_text:
                return [text_key(t) for t in items]
            out = []
            for item in items:
                data = item.pixels if isinstance(item, ImageRaster) else bytes(item)
                out.append("img-bytes:" + hashlib.sha256(data).hexdigest()[:24])
            return out

        encoder = CachingEncoder(encoder, EmbeddingCache(cache_dir, encoder.descriptor()), keys_for)
    if not args.images:
        raise ConfigurationError("live scorers need --images <dir>")
    if args.scorer == "global":
        return GlobalLiveScorer(encoder, args.images)
    if args.scorer == "sgi":
        return SgiLiveScorer(encoder, args.images, sgi_cfg)
    raise ConfigurationError(f"scorer {args.scorer!r} not available in live mode")


def cmd_eval(args) -> int:
    started = time.time()
    instances = load_instances(args.dataset)
    scorer = _build_scorer(args)
    report = evaluate(instances, scorer, lenient=args.lenient)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(out_dir / "report.json")
    report.write_csv(out_dir / "report.csv")
    if hasattr(scorer, "encoder") and hasattr(scorer.encoder, "cache"):
        scorer.encoder.cache.save()
    write_manifest(out_dir, "eval", args, [Path(args.dataset)], started)
    avg = report.average
    print(f"instances: {report.n_instances} skipped: {report.n_skipped}")
    for c in report.categories:
        print(f"{c.category}: I2T {c.i2t_pct:.1f} T2I {c.t2i_pct:.1f} Group {c.group_pct:.1f}")
    print(f"average: I2T {avg.i2t_pct:.1f} T2I {avg.t2i_pct:.1f} Group {avg.group_pct:.1f}")
    return EXIT_OK


def cmd_build_biscor(args) -> int:
    started = time.time()
    scenes = load_clevr_scenes(args.clevr_scenes)
    templates = CaptionTemplates.from_json(args.templates) if args.templates else DEFAULT_TEMPLATES
    categories = (
        [SwapCategory(args.category)] if args.category != "all" else list(SwapCategory)
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for category in categories:
        records = build_split(scenes, category, args.n, args.seed, templates)
        dump_instances(
            [r.to_retrieval_instance() for r in records],
            out_dir / f"{category.value}.jsonl",
        )
        if not args.no_render_jobs:
            emit_render_jobs(records, out_dir / f"render_{category.value}")
        print(f"{category.value}: {len(records)} instances")
    write_manifest(out_dir, "build-biscor", args, [Path(args.clevr_scenes)], started)
    return EXIT_OK


def cmd_train(args) -> int:
    from .transformer import TransformerConfig, Variant, init_params, param_count
    from .training import (
        TrainConfig,
        make_separable_pairs,
        pairs_from_store,
        save_checkpoint,
        train,
        write_history_csv,
    )

    started = time.time()
    if args.layers < 1:
        raise ConfigurationError("--layers must be >= 1")
    variant = Variant(args.variant)
    if args.synthetic_pairs:
        model_cfg = TransformerConfig(
            variant=variant, layers=args.layers, model_dim=32, heads=4, ff_dim=64,
            max_patches=4, max_tokens=4, visual_dim=max(16, args.synthetic_pairs),
            text_dim=max(16, args.synthetic_pairs),
        )
        data = make_separable_pairs(args.synthetic_pairs, model_cfg, seed=args.seed)
        batch = min(args.synthetic_pairs, args.batch_size)
    else:
        if not (args.data and args.pairs):
            raise ConfigurationError("training needs --data <store.emb1> --pairs <jsonl>")
        from .embeddings import store_read

        store = store_read(args.data)
        items = []
        with open(args.pairs, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    items.append((d["image"], d["caption"]))
        data = pairs_from_store(store, items, variant)
        first_v, first_t = data.visual[0], data.textual[0]
        model_cfg = TransformerConfig(
            variant=variant, layers=args.layers,
            max_patches=max(v.shape[0] for v in data.visual),
            max_tokens=max(t.shape[0] for t in data.textual),
            visual_dim=first_v.shape[1], text_dim=first_t.shape[1],
        )
        batch = args.batch_size
    train_cfg = TrainConfig(batch_size=batch, epochs=args.epochs)
    n_params = param_count(init_params(model_cfg, seed=args.seed))
    print(f"parameters: {n_params} ({n_params/1e6:.2f}M)")
    result = train(train_cfg, model_cfg, data, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "model", result.params, model_cfg)
    write_history_csv(result.history, out_dir / "history.csv")
    write_manifest(out_dir, "train", args,
                   [Path(p) for p in (args.data, args.pairs) if p], started)
    print(f"best val accuracy: {result.best_val_accuracy:.4f} (epoch {result.best_epoch})")
    if args.require_accuracy is not None and result.best_val_accuracy < args.require_accuracy:
        print(f"accuracy below required {args.require_accuracy}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_param_count(args) -> int:
    from .transformer import TransformerConfig, Variant, init_params, param_count

    cfg = TransformerConfig(variant=Variant(args.variant), layers=args.layers)
    n = param_count(init_params(cfg, seed=0))
    print(f"parameters: {n} ({n/1e6:.2f}M)")
    return EXIT_OK


def cmd_sweep_layers(args) -> int:
    from .transformer import TransformerConfig, Variant
    from .training import TrainConfig, make_separable_pairs, train

    rows = []
    for layers in range(1, args.max_layers + 1):
        cfg = TransformerConfig(
            variant=Variant(args.variant), layers=layers, model_dim=32, heads=4,
            ff_dim=64, max_patches=4, max_tokens=4,
            visual_dim=max(16, args.pairs), text_dim=max(16, args.pairs),
        )
        data = make_separable_pairs(args.pairs, cfg, seed=args.seed)
        result = train(TrainConfig(batch_size=min(args.pairs, 8), epochs=args.epochs),
                       cfg, data, seed=args.seed)
        rows.append((layers, result.best_val_accuracy))
    print(f"{'layers':>6}  {'val accuracy':>12}")
    for layers, acc in rows:
        print(f"{layers:>6}  {100 * acc:>12.1f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("layers,val_accuracy\n")
            for layers, acc in rows:
                fh.write(f"{layers},{100 * acc:.2f}\n")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    rb = data["random_baseline"]
    print(f"scorer: {data['scorer']}")
    print(f"{'category':<12} {'n':>6} {'I2T':>7} {'T2I':>7} {'Group':>7}")
    print(f"{'random':<12} {'':>6} {rb['i2t']:>7.1f} {rb['t2i']:>7.1f} {rb['group']:>7.1f}")
    for row in data["categories"]:
        print(f"{row['category']:<12} {row['n']:>6} {row['i2t']:>7.1f} {row['t2i']:>7.1f} {row['group']:>7.1f}")
    avg = data["average"]
    print(f"{'average':<12} {avg['n']:>6} {avg['i2t']:>7.1f} {avg['t2i']:>7.1f} {avg['group']:>7.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compose-probe",
        description="Structure-aware image/text matching, retrieval evaluation, "
                    "swap-benchmark construction, and alignment-transformer training.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan-crops", help="enumerate multi-scale crops")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--placement", choices=["grid", "overlap"], default="grid")
    p.add_argument("--sizes", help="semicolon-separated w,h pairs, e.g. '32,32;56,56'")
    p.add_argument("--no-full-image", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan_crops)

    p = sub.add_parser("segment", help="decompose a caption into segments")
    p.add_argument("--caption", required=True)
    p.add_argument("--strategy", choices=["automatic", "structured"], default="automatic")
    p.add_argument("--granularity", choices=["fine", "coarse"], default="coarse")
    p.add_argument("--annotation", help="JSON file with objects/phrases for structured mode")
    p.add_argument("--lexicons", help="directory overriding the bundled word lists")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="run bidirectional retrieval evaluation")
    p.add_argument("--dataset", required=True, help="instances JSONL")
    p.add_argument("--scorer", choices=["global", "sgi", "transformer", "random"], required=True)
    p.add_argument("--store", help="EMB1 embedding store path")
    p.add_argument("--encoder", help="encoder service base URL")
    p.add_argument("--images", help="image directory for live scorers")
    p.add_argument("--checkpoint", help="model checkpoint prefix for --scorer transformer")
    p.add_argument("--placement", choices=["grid", "overlap"], default="overlap")
    p.add_argument("--granularity", choices=["fine", "coarse"], default="coarse")
    p.add_argument("--lenient", action="store_true", help="skip failing instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("build-biscor", help="construct swap instances from CLEVR scenes")
    p.add_argument("--clevr-scenes", required=True)
    p.add_argument("--category", choices=[c.value for c in SwapCategory] + ["all"], default="all")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--templates", help="JSON file overriding caption templates")
    p.add_argument("--no-render-jobs", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_biscor)

    p = sub.add_parser("train", help="train the alignment transformer")
    p.add_argument("--variant", choices=["local", "global"], default="local")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--data", help="EMB1 store with sequence records")
    p.add_argument("--pairs", help="JSONL of {image, caption} training rows")
    p.add_argument("--synthetic-pairs", type=int,
                   help="train on N bundled separable synthetic pairs instead of real data")
    p.add_argument("--batch-size", type=int, default=50)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-accuracy", type=float,
                   help="exit 3 unless best validation accuracy reaches this")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("param-count", help="parameter count for a model config")
    p.add_argument("--variant", choices=["local", "global"], default="local")
    p.add_argument("--layers", type=int, default=4)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("sweep-layers", help="layer ablation over synthetic pairs")
    p.add_argument("--variant", choices=["local", "global"], default="local")
    p.add_argument("--max-layers", type=int, default=4)
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_layers)

    p = sub.add_parser("report", help="print a saved evaluation report as a table")
    p.add_argument("--report", required=True, help="report.json path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ComposeProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
