"""Command-line frontend: one subcommand per pipeline stage.

Every subcommand is deterministic given its inputs, config, and seed; no
output file carries a timestamp. A JSON config file can pre-set any flag of
the chosen subcommand, and explicit flags win over config values.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime
failure (e.g. training divergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import data as dio
from .errors import Divergence, InvalidConfig, ParseError, PlateWasteError
from .masks import LabelMask, class_pixel_counts
from .metrics import AggregationMode
from .models import ModelConfig, build, load_checkpoint, save_checkpoint
from .optim import LrSchedule, default_schedule
from .train import (
    TrainConfig,
    benchmark_throughput,
    evaluate,
    train,
    write_history_csv,
)

OUT_ENV_VAR = "PLATEWASTE_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we own the exit codes
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV_VAR)
    if not out:
        raise UsageError("--out is required (or set " + OUT_ENV_VAR + ")")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_tiers(text: str) -> LrSchedule:
    try:
        tiers = []
        for part in text.split(","):
            epoch, lr = part.split(":")
            tiers.append((int(epoch), float(lr)))
        return LrSchedule(tuple(tiers))
    except (ValueError, IndexError) as exc:
        raise UsageError(f"bad --lr-tiers value {text!r}: expected 'epoch:lr,epoch:lr,...'") from exc


def _aggregation(args) -> AggregationMode:
    return AggregationMode(mode=args.aggregation, include_background=args.include_background)


def _write_json(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------- subcommands


def _cmd_synth(args) -> int:
    out = _out_dir(args)
    if args.fixture == "reference":
        generated = dio.generate_reference_fixture(
            out, image_size=args.size, images_per_stage=args.images_per_stage, seed=args.seed
        )
        for food_type, gen in sorted(generated.items()):
            print(f"{food_type}: {gen.manifest_path}")
        return 0
    spec = dio.toy_training_spec(num_images=args.num_images, image_size=args.size, seed=args.seed)
    gen = dio.synth_generate(spec, out)
    manifest = gen.manifest
    if args.test_fraction is not None:
        entries = dio.split_dataset(
            manifest.entries,
            test_fraction=args.test_fraction,
            val_fraction=args.val_fraction,
            seed=args.split_seed,
        )
        manifest = replace(manifest, entries=tuple(entries))
        dio.save_manifest(manifest, gen.manifest_path)
    counts = {s: len(manifest.select(split=s)) for s in dio.SPLITS}
    print(f"toy: {gen.manifest_path} (train={counts['train']}, val={counts['val']}, test={counts['test']})")
    return 0


def _cmd_augment(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    out = _out_dir(args)
    preset_name = args.preset or manifest.food_type
    if preset_name not in aug.PRESETS:
        raise ParseError(
            f"no augmentation preset named {preset_name!r}; known: {sorted(aug.PRESETS)}"
        )
    spec = aug.PRESETS[preset_name].spec

    new_entries = []
    for split in ("val", "test"):
        for i, entry in enumerate(manifest.select(split=split)):
            image = dio.read_image(manifest.image_path(entry))
            mask = dio.read_mask(manifest.mask_path(entry), num_classes=manifest.num_classes)
            name = f"{split}_{i:04d}.png"
            dio.write_image(image, out / "images" / name)
            dio.write_mask(mask, out / "masks" / name)
            new_entries.append(replace(entry, image=f"images/{name}", mask=f"masks/{name}"))

    train_entries = manifest.select(split="train")
    pairs = (
        (
            dio.read_image(manifest.image_path(e)),
            dio.read_mask(manifest.mask_path(e), num_classes=manifest.num_classes),
        )
        for e in train_entries
    )
    n_out = 0
    for i, (image, mask, _plan) in enumerate(
        aug.expand_training_set(
            pairs, spec, args.multiplier, args.seed, include_original=args.include_original
        )
    ):
        src = train_entries[i // args.multiplier]
        name = f"train_{i // args.multiplier:04d}_{i % args.multiplier}.png"
        dio.write_image(image, out / "images" / name)
        dio.write_mask(mask, out / "masks" / name)
        new_entries.append(replace(src, image=f"images/{name}", mask=f"masks/{name}"))
        n_out += 1

    new_manifest = dio.DatasetManifest(
        food_type=manifest.food_type,
        class_table=manifest.class_table,
        entries=tuple(new_entries),
        root=out,
    )
    dio.save_manifest(new_manifest, out / "manifest.json")
    print(f"augmented train split {len(train_entries)} -> {n_out} entries ({out / 'manifest.json'})")
    return 0


def _cmd_train(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    out = _out_dir(args)
    train_data = dio.load_split_arrays(manifest, "train")
    val_data = dio.load_split_arrays(manifest, "val")
    size = train_data[0].shape[-1] if len(train_data[0]) else 256
    model_config = ModelConfig(
        family=args.arch,
        base_width=args.width,
        num_classes=manifest.num_classes,
        input_size=size,
    )
    model = build(model_config, init_seed=args.seed)
    schedule = _parse_tiers(args.lr_tiers) if args.lr_tiers else default_schedule(args.epochs)
    config = TrainConfig(
        batch_size=args.batch,
        epochs=args.epochs,
        schedule=schedule,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    result = train(config, model, train_data, val_data)
    write_history_csv(result.history, out / "history.csv")
    save_checkpoint(
        model,
        out / "checkpoint.npz",
        metadata={
            "best_epoch": result.best_epoch,
            "best_val_weighted_iou": result.best_val_iou,
            "food_type": manifest.food_type,
            "seed": args.seed,
            "epochs": args.epochs,
            "batch_size": args.batch,
        },
    )
    _write_json(
        out / "train_summary.json",
        json.dumps(
            {
                "best_epoch": result.best_epoch,
                "best_val_weighted_iou": result.best_val_iou,
                "epochs": args.epochs,
                "checkpoint": "checkpoint.npz",
                "history": "history.csv",
            },
            indent=2,
        ),
    )
    print(f"best epoch {result.best_epoch}: val weighted IoU {result.best_val_iou:.4f}")
    return 0


def _metrics_csv_rows(report, class_table):
    rows = [["class", "iou", "dice", "dpa", "defined"]]
    for i, name in enumerate(class_table):
        rows.append(
            [
                f"{i}/{name}",
                f"{report.iou.values[i]:.10g}",
                f"{report.dice.values[i]:.10g}",
                f"{report.dpa.values[i]:.10g}",
                str(bool(report.iou.defined[i])).lower(),
            ]
        )
    rows.append(
        [
            "aggregate",
            f"{report.iou_agg:.10g}",
            f"{report.dice_agg:.10g}",
            f"{report.dpa_agg:.10g}",
            "",
        ]
    )
    rows.append(["pixel_accuracy", f"{report.pixel_accuracy:.10g}", "", "", ""])
    return rows


def _cmd_evaluate(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    model, _meta, _opt = load_checkpoint(args.checkpoint)
    if model.config.num_classes != manifest.num_classes:
        raise InvalidConfig(
            f"checkpoint has {model.config.num_classes} classes, manifest "
            f"{manifest.num_classes}"
        )
    images, labels = dio.load_split_arrays(manifest, args.split)
    report = evaluate(model, images, labels, mode=_aggregation(args))
    out = _out_dir(args)
    _write_json(out / "metrics.json", report.to_json())
    rows = _metrics_csv_rows(report, manifest.class_table)
    with open(out / "metrics.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    for row in rows:
        print("  ".join(str(v).ljust(14) for v in row))
    return 0


def _cmd_predict(args) -> int:
    model, _meta, _opt = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    if args.manifest:
        manifest = dio.load_manifest(args.manifest)
        entries = manifest.select(split=args.split) if args.split else list(manifest.entries)
        paths = [manifest.image_path(e) for e in entries]
    else:
        if not args.images:
            raise UsageError("predict needs --manifest or image paths")
        paths = [Path(p) for p in args.images]
    for path in paths:
        image = dio.read_image(path).transpose(2, 0, 1).astype(np.float32)[None]
        pred = model.predict_labels(image)[0]
        target = out / f"{Path(path).stem}_pred.png"
        dio.write_mask(LabelMask(pred, model.config.num_classes), target)
        print(target)
    return 0


def _cmd_estimate(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    report = dio.waste_report_from_manifest(manifest, clamp=args.clamp_eating_rate)
    out = _out_dir(args)
    with open(out / "waste_report.csv", "w", newline="") as fh:
        report.write_csv(fh)
    _write_json(out / "waste_report.json", report.to_json())
    print(f"{'class':28s} {'pre':>8s} {'post':>8s} {'eaten%':>8s} {'left%':>8s}")
    for row in report.rows:
        print(
            f"{row.class_index}/{row.class_name:26s} {row.pre_avg:8.3f} {row.post_avg:8.3f} "
            f"{row.eating_rate:8.1f} {row.remaining_rate:8.1f}"
        )
    print(f"{'Total':28s} {report.pre_total:8.3f} {report.post_total:8.3f}")
    return 0


def _cmd_hist(args) -> int:
    manifest = dio.load_manifest(args.manifest)
    out = _out_dir(args)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    rows = [["food_type", "stage", "class", "bin_left", "bin_right", "count"]]
    doc = {"food_type": manifest.food_type, "bins": args.bins, "stages": {}}
    for stage in dio.STAGES:
        masks = dio.load_masks(manifest, stage=stage)
        if not masks:
            continue
        props = np.stack([class_pixel_counts(m) / m.num_pixels for m in masks])
        doc["stages"][stage] = {}
        for ci, name in enumerate(manifest.class_table):
            counts, _ = np.histogram(props[:, ci], bins=edges)
            doc["stages"][stage][f"{ci}/{name}"] = counts.tolist()
            for b, cnt in enumerate(counts):
                rows.append(
                    [
                        manifest.food_type,
                        stage,
                        f"{ci}/{name}",
                        f"{edges[b]:.6g}",
                        f"{edges[b + 1]:.6g}",
                        str(int(cnt)),
                    ]
                )
    with open(out / "histograms.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    _write_json(out / "histograms.json", json.dumps(doc, indent=2))
    print(out / "histograms.csv")
    return 0


def _cmd_bench(args) -> int:
    config = ModelConfig(
        family=args.arch,
        base_width=args.width,
        num_classes=args.num_classes,
        input_size=args.size,
    )
    model = build(config, init_seed=args.seed)
    stats = benchmark_throughput(
        model,
        batch_size=args.batch,
        warmup=args.warmup,
        iters=args.iters,
        image_size=args.size,
        seed=args.seed,
    )
    doc = {
        "arch": args.arch,
        "width": args.width,
        "image_size": args.size,
        "batch_size": args.batch,
        "param_count": model.param_count(),
        "throughput_images_per_s": {
            k: {"mean": v.mean, "min": v.min, "max": v.max} for k, v in stats.items()
        },
    }
    print(json.dumps(doc, indent=2))
    if args.out:
        out = _out_dir(args)
        _write_json(out / "bench.json", json.dumps(doc, indent=2))
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "mean", "min", "max"])
            for k, v in stats.items():
                w.writerow([k, f"{v.mean:.6g}", f"{v.min:.6g}", f"{v.max:.6g}"])
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="platewaste", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file pre-setting any flag of this subcommand")
        p.add_argument("--out", help=f"output directory (default from ${OUT_ENV_VAR})")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--fixture", choices=("reference", "toy"), default="reference")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--images-per-stage", type=int, default=12)
    p.add_argument("--num-images", type=int, default=80)
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment", help="expand a manifest's train split")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", help="preset name (defaults to the manifest's food type)")
    p.add_argument("--multiplier", type=int, default=3)
    p.add_argument(
        "--include-original", action=argparse.BooleanOptionalAction, default=True,
        help="keep the untouched original as the first copy",
    )
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="train a model on a manifest")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--arch", choices=("unet", "unetpp"), default="unet")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--lr-tiers", help="schedule as 'epoch:lr,epoch:lr,...' (default tiered decay)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=dio.SPLITS, default="test")
    p.add_argument("--aggregation", choices=("macro", "weighted"), default="weighted")
    p.add_argument(
        "--include-background", action=argparse.BooleanOptionalAction, default=False
    )
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", help="write predicted masks for images")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", choices=dio.SPLITS, default=None)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("estimate", help="waste report from pre/post masks")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument(
        "--clamp-eating-rate", action=argparse.BooleanOptionalAction, default=True,
        help="clamp negative per-dish eating rates at 0",
    )
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("hist", help="per-class proportion histograms")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("bench", help="throughput benchmark")
    add_common(p)
    p.add_argument("--arch", choices=("unet", "unetpp"), default="unet")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--num-classes", type=int, default=2)
    p.set_defaults(func=_cmd_bench)

    return parser


def _apply_config_file(parser, argv):
    """Seed subcommand defaults from --config JSON; explicit flags still win."""
    if not argv or argv[0].startswith("-"):
        return
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv[1:])
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse config file {known.config}: {exc}") from exc
    if not isinstance(values, dict):
        raise ParseError("config file must hold a JSON object")
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    subparser = sub_actions[0].choices.get(argv[0])
    if subparser is None:
        return
    valid = {a.dest for a in subparser._actions}
    for key in values:
        if key not in valid:
            raise UsageError(f"config file sets unknown option {key!r} for {argv[0]!r}")
    subparser.set_defaults(**values)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        if getattr(args, "fixture", None) is not None and args.command == "synth":
            if args.size is None:
                args.size = 256 if args.fixture == "reference" else 64
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Divergence as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except PlateWasteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
