"""Command-line surface: ingest, reconstruct, evaluate, visualize, filter, semantic.

Every command prints a single JSON report to stdout and obeys one exit-code
contract: 0 success, 2 user/configuration error, 3 environment/I-O error.
Field dumps are first-class artifacts, so search, composition, and
visualization stay independently runnable and cacheable.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .compose import (
    correspondence_map,
    reconstruct,
    semantic_correspondence,
)
from .database import TrainingDatabase
from .errors import ConfigError, PatchfieldError
from .metrics import ClassPalette, metric_report, quantize
from .search import SearchConfig, exhaustive_search, hpm_run
from .store import (
    ingest,
    filter_manifest,
    load_image,
    load_query_spec,
    read_field,
    save_image,
    write_field,
)
from .tensors import LayerSpec


def _emit(report: dict) -> None:
    print(json.dumps(report, indent=2, sort_keys=True))


def _parse_id_list(text: str) -> list[int]:
    try:
        return [int(piece) for piece in text.split(",") if piece.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _layer_or_die(db: TrainingDatabase, name: str):
    spec = db.layer_specs.get(name)
    if spec is None:
        raise ConfigError(f"layer {name!r} not in manifest (has {sorted(db.layer_specs)})")
    return spec


def _candidates(db: TrainingDatabase, query_tensors, top_k: int) -> list[int]:
    if top_k >= len(db):
        return list(range(len(db)))
    desc_tensor = query_tensors.get(db.descriptor_layer)
    if desc_tensor is None:
        raise ConfigError(
            f"query provides no tensor for descriptor layer {db.descriptor_layer!r}, "
            f"required for --top-k pruning below the database size"
        )
    return db.top_k_neighbors(db.global_descriptor(desc_tensor), top_k)


def cmd_ingest(args) -> int:
    _, report = ingest(args.manifest)
    _emit(report)
    return 0


def cmd_reconstruct(args) -> int:
    if args.top_k < 1:
        raise ConfigError("top_k must be ≥ 1")
    if args.iterations < 0:
        raise ConfigError("iterations must be ≥ 0")
    if args.threads < 1:
        raise ConfigError("threads must be ≥ 1")
    if args.samples < 0:
        raise ConfigError("samples must be ≥ 0")

    db, _ = ingest(args.manifest)
    layer = _layer_or_die(db, args.layer)
    query = load_query_spec(args.query)
    query_tensor = query.tensors.get(args.layer)
    if query_tensor is None:
        raise ConfigError(f"query provides no tensor for layer {args.layer!r}")
    candidates = _candidates(db, query.tensors, args.top_k)

    started = time.perf_counter()
    if args.search == "oracle":
        field = exhaustive_search(query_tensor, db, layer, candidates, threads=args.threads)
    else:
        config = SearchConfig(
            candidate_image_ids=tuple(candidates),
            iterations=args.iterations,
            rng_seed=args.seed,
            random_samples_per_cell_per_iter=args.samples,
        )
        field = hpm_run(query_tensor, db, layer, config, threads=args.threads)
    raster, coverage = reconstruct(field, db, layer, source=args.source)
    wall = time.perf_counter() - started

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recon_path = out_dir / "reconstruction.png"
    field_path = out_dir / "field.chpf"
    save_image(raster, recon_path)
    write_field(field, field_path)

    report = {
        "command": "reconstruct",
        "layer": args.layer,
        "search": args.search,
        "source": args.source,
        "top_k": args.top_k,
        "candidates": candidates,
        "iterations": args.iterations if args.search == "hpm" else None,
        "seed": args.seed if args.search == "hpm" else None,
        "threads": args.threads,
        "grid": list(field.grid_shape),
        "eval_count": field.eval_count,
        "wall_time_s": wall,
        "uncovered_pixels": coverage.uncovered_pixels,
        "outputs": {"reconstruction": str(recon_path), "field": str(field_path)},
    }
    if args.gt is not None:
        report["metrics"] = _evaluate_raster(raster, args.gt, args.palette, args.baseline)
    _emit(report)
    return 0


def _evaluate_raster(raster: np.ndarray, gt_path, palette_path, baseline_path) -> dict:
    if palette_path is None:
        raise ConfigError("a --palette file is required to quantize RGB labels")
    palette = ClassPalette.from_json(palette_path)
    gt = quantize(load_image(gt_path), palette)
    pred = quantize(raster, palette)
    baseline = None
    if baseline_path is not None:
        baseline = quantize(load_image(baseline_path), palette)
    return metric_report(gt, pred, palette, baseline_classes=baseline)


def cmd_evaluate(args) -> int:
    if args.recon is not None:
        raster = load_image(args.recon)
    else:
        if args.manifest is None or args.layer is None:
            raise ConfigError("--field needs --manifest and --layer to recompose")
        db, _ = ingest(args.manifest)
        layer = _layer_or_die(db, args.layer)
        field = read_field(args.field, layer_name=args.layer)
        raster, _ = reconstruct(field, db, layer, source=args.source)
    report = _evaluate_raster(raster, args.gt, args.palette, args.baseline)
    _emit(report)
    return 0


def cmd_visualize(args) -> int:
    db, _ = ingest(args.manifest)
    layer = _layer_or_die(db, args.layer)
    field = read_field(args.field, layer_name=args.layer)
    query_image = load_image(args.query_image)
    cmap = correspondence_map(field, db, layer, query_image, source=args.source)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overlay_path = out_dir / "query_overlay.png"
    save_image(cmap.query_overlay, overlay_path)
    source_paths = {}
    for image_id, raster in sorted(cmap.sources.items()):
        path = out_dir / f"source_{image_id:03d}.png"
        save_image(raster, path)
        source_paths[str(image_id)] = str(path)
    legend_path = out_dir / "legend.json"
    legend_path.write_text(json.dumps(cmap.legend, indent=2, sort_keys=True) + "\n")

    _emit(
        {
            "command": "visualize",
            "layer": args.layer,
            "contributors": len(cmap.sources),
            "outputs": {
                "query_overlay": str(overlay_path),
                "legend": str(legend_path),
                "sources": source_paths,
            },
        }
    )
    return 0


def cmd_filter(args) -> int:
    if args.include is None and args.exclude is None and not args.require_tag:
        raise ConfigError("nothing to do: give --include, --exclude, or --require-tag")
    result = filter_manifest(
        args.manifest,
        args.out,
        include=args.include,
        exclude=args.exclude,
        require_tags=args.require_tag or None,
    )
    _emit({"command": "filter", **result})
    return 0


def cmd_semantic(args) -> int:
    if args.iterations < 0:
        raise ConfigError("iterations must be ≥ 0")
    spec_a = load_query_spec(args.a)
    spec_b = load_query_spec(args.b)
    if spec_a.labels is None:
        raise ConfigError(f"{args.a}: query spec needs labels_png for semantic tinting")
    palette = ClassPalette.from_json(args.palette)
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    if not classes:
        raise ConfigError("no classes requested")

    for tensors in (spec_a.tensors, spec_b.tensors):
        if args.layer not in tensors:
            raise ConfigError(f"both pairs must provide tensors for layer {args.layer!r}")
    tensor_b = spec_b.tensors[args.layer]
    db_layer = LayerSpec(
        layer_name=args.layer,
        hyperpatch_h=args.hyperpatch,
        hyperpatch_w=args.hyperpatch,
        depth=tensor_b.depth,
        patch_size=args.patch_size,
        scale=args.scale,
    )
    config = SearchConfig(
        candidate_image_ids=(0,),
        iterations=args.iterations,
        rng_seed=args.seed,
        random_samples_per_cell_per_iter=args.samples,
    )
    pairs = semantic_correspondence(
        spec_a.tensors,
        spec_a.image,
        spec_b.tensors,
        spec_b.image,
        db_layer,
        spec_a.labels,
        palette,
        classes,
        config=config,
        threads=args.threads,
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for pair in pairs:
        side_by_side = np.concatenate([pair.query_raster, pair.train_raster], axis=1)
        path = out_dir / f"semantic_{pair.class_name}.png"
        save_image(side_by_side, path)
        outputs[pair.class_name] = {"output": str(path), "query_cells": pair.query_cells}
    _emit({"command": "semantic", "layer": args.layer, "classes": outputs})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchfield",
        description=(
            "Dense patch-correspondence fields over CNN activation tensors: "
            "ingest datasets, search fields, compose reconstructions, "
            "score them, and visualize correspondences."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset manifest and report on it")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("reconstruct", help="search a field and compose a reconstruction")
    p.add_argument("--manifest", required=True)
    p.add_argument("--query", required=True, help="query-spec JSON (image + tensors)")
    p.add_argument("--layer", required=True)
    p.add_argument("--source", choices=("input", "output"), default="input")
    p.add_argument("--search", choices=("oracle", "hpm"), default="hpm")
    p.add_argument("--top-k", type=int, default=16, dest="top_k")
    p.add_argument("--iterations", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1, help="random samples per cell per iteration")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--gt", default=None, help="ground-truth label PNG for metrics")
    p.add_argument("--palette", default=None)
    p.add_argument("--baseline", default=None, help="baseline label PNG for deltas")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score a reconstruction against ground truth")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--recon", default=None, help="reconstruction PNG")
    group.add_argument("--field", default=None, help="field dump to recompose first")
    p.add_argument("--manifest", default=None)
    p.add_argument("--layer", default=None)
    p.add_argument("--source", choices=("input", "output"), default="output")
    p.add_argument("--gt", required=True)
    p.add_argument("--palette", default=None)
    p.add_argument("--baseline", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="correspondence-map PNGs and legend from a field dump")
    p.add_argument("--field", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--query-image", required=True, dest="query_image")
    p.add_argument("--source", choices=("input", "output"), default="input")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("filter", help="derive a manifest keeping a subset of pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include", type=_parse_id_list, default=None)
    p.add_argument("--exclude", type=_parse_id_list, default=None)
    p.add_argument("--require-tag", action="append", default=[], dest="require_tag")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("semantic", help="class-tinted correspondences between two pairs")
    p.add_argument("--a", required=True, help="query-spec JSON with labels_png")
    p.add_argument("--b", required=True, help="query-spec JSON for the training image")
    p.add_argument("--layer", required=True)
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--palette", required=True)
    p.add_argument("--hyperpatch", type=int, default=2)
    p.add_argument("--patch-size", type=int, default=2, dest="patch_size")
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--iterations", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_semantic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PatchfieldError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
