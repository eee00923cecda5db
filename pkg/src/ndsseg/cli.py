"""Command-line entry point.

Subcommands: synth, train, eval, predict, indices, info.  Every command
accepts --seed, --config, and --out; flags override config-file values.
Exit codes: 0 success, 1 validation/runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import TASK_NAMES, echo_config, load_run_config, with_seed
from .data import load_manifest, split_dataset
from .errors import NdsError
from .fileio import write_mask_png, write_ndsr
from .losses import segmentation_scores
from .models import build_model
from .nn import load_checkpoint
from .raster import IndexKind, Raster, compute_index
from .synth import generate_benchmark
from .train import (
    evaluate,
    load_model_checkpoint,
    predict_field_all,
    train,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="run config JSON")
    p.add_argument("--seed", type=int, default=None, help="override every seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndsseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    _add_common(p)
    p.add_argument("--fields", type=int, default=8)

    p = sub.add_parser("train", help="train a model on a manifest dataset")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--task", choices=sorted(TASK_NAMES), default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--task", choices=sorted(TASK_NAMES), default=None)

    p = sub.add_parser("predict", help="stitched full-field prediction for one field")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--field-id", default=None, help="default: first field in manifest")
    p.add_argument("--task", choices=sorted(TASK_NAMES), default=None)

    p = sub.add_parser("indices", help="export NDVI/GNDVI/NDWI rasters for one field")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--field-id", default=None)

    p = sub.add_parser("info", help="print checkpoint metadata")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _resolve(args) -> tuple:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    out_dir = Path(args.out) if args.out is not None else Path(cfg.out_dir)
    return cfg, out_dir


def _dataset(cfg, args):
    manifest = getattr(args, "manifest", None) or cfg.manifest
    if manifest is None:
        raise NdsError("no manifest given (use --manifest or the config file)")
    return load_manifest(Path(manifest))


def _apply_task(cfg, args):
    if getattr(args, "task", None):
        cfg = replace(cfg, train=replace(cfg.train, task=TASK_NAMES[args.task]))
    return cfg


def _find_field(dataset, field_id):
    if field_id is None:
        return dataset[0]
    for seq in dataset:
        if seq.field_id == field_id:
            return seq
    raise NdsError(f"field {field_id!r} not found in manifest")


def cmd_synth(args) -> int:
    cfg, out_dir = _resolve(args)
    echo_config(cfg, out_dir, __version__)
    manifest = generate_benchmark(cfg.synth, args.fields, out_dir)
    print(f"wrote {args.fields} fields; manifest at {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg, out_dir = _resolve(args)
    cfg = _apply_task(cfg, args)
    echo_config(cfg, out_dir, __version__)
    dataset = _dataset(cfg, args)
    train_fields, val_fields, _ = split_dataset(dataset, cfg.train.seed)
    model = build_model(cfg.model)
    ckpt, history = train(model, train_fields, val_fields, cfg.train, out_dir)
    print(f"best checkpoint: {ckpt} (epochs: {len(history)})")
    return 0


def cmd_eval(args) -> int:
    cfg, out_dir = _resolve(args)
    cfg = _apply_task(cfg, args)
    echo_config(cfg, out_dir, __version__)
    dataset = _dataset(cfg, args)
    splits = dict(zip(("train", "val", "test"), split_dataset(dataset, cfg.train.seed)))
    model = load_model_checkpoint(args.checkpoint)
    report = evaluate(model, splits[args.split], cfg.train)
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(report.to_json() + "\n")
    print(report.to_json())
    print(f"metrics written to {metrics_path}")
    return 0


def cmd_predict(args) -> int:
    cfg, out_dir = _resolve(args)
    cfg = _apply_task(cfg, args)
    echo_config(cfg, out_dir, __version__)
    dataset = _dataset(cfg, args)
    seq = _find_field(dataset, args.field_id)
    model = load_model_checkpoint(args.checkpoint)
    masks = predict_field_all(
        model, seq, cfg.train.task, cfg.train.repr, cfg.train.strategy.side,
        cfg.train.tile_overlap,
    )
    final = masks[-1]
    write_mask_png(out_dir / f"{seq.field_id}_pred.png", final)
    write_ndsr(out_dir / f"{seq.field_id}_pred.ndsr", final)
    iou, f1 = segmentation_scores(final, seq.target_mask, cfg.train.loss)
    print(f"{seq.field_id}: stitched prediction written (IOU {iou:.3f}, F1 {f1:.3f})")
    return 0


def cmd_indices(args) -> int:
    cfg, out_dir = _resolve(args)
    echo_config(cfg, out_dir, __version__)
    dataset = _dataset(cfg, args)
    seq = _find_field(dataset, args.field_id)
    for kind in IndexKind:
        for flight_idx, raster in seq.flights:
            idx = compute_index(kind, raster)
            # Shift [-1, 1] to [0, 1] so the NDSR range convention holds.
            scaled = Raster((idx.values + 1.0) / 2.0)
            write_ndsr(out_dir / f"{seq.field_id}_f{flight_idx}_{kind.value}.ndsr", scaled)
    print(f"indices for {seq.field_id} written to {out_dir}")
    return 0


def cmd_info(args) -> int:
    arch_tag, config_json, params, opt_state = load_checkpoint(args.checkpoint)
    n_params = sum(int(a.size) for n, a in params.items() if not n.startswith("buffer:"))
    print(json.dumps({
        "architecture": arch_tag,
        "config": json.loads(config_json),
        "parameter_count": n_params,
        "has_optimizer_state": bool(opt_state),
    }, indent=2))
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "indices": cmd_indices,
    "info": cmd_info,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (NdsError, FileNotFoundError, json.JSONDecodeError, KeyError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
