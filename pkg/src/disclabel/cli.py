"""Command-line entry point: ``disclabel <subcommand> ...``.

Exit status: 0 on success, 1 on invalid arguments or data, 2 on I/O errors.
Seeds default to $DISCLABEL_SEED, then 0.  Config-file values are
overridden by explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DivergenceError, IoError, ValidationError
from .io import Image2D, ensure_dir, read_image, read_labels, read_manifest, write_image, write_labels

log = logging.getLogger("disclabel")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("DISCLABEL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"DISCLABEL_SEED must be an integer, got {raw!r}")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON: {e}") from e


def cmd_gen_phantoms(args):
    from .phantom import PhantomConfig, generate_dataset

    overrides = _read_json(args.config) if args.config else {}
    unknown = set(overrides) - set(PhantomConfig.__dataclass_fields__)
    if unknown:
        raise ValidationError(f"unknown phantom config keys: {sorted(unknown)}")
    for key in ("disc_count_range", "disc_spacing_range_px"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    path, m = generate_dataset(PhantomConfig(**overrides), args.n, args.out, args.seed, tuple(args.fractions))
    print(f"wrote {len(m.samples)} phantoms, split {dict(zip(('train', 'test', 'val'), m.counts()))}: {path}")


def cmd_preprocess(args):
    from .preprocess import ClaheParams, preprocess_dataset

    params = ClaheParams(tiles=(args.tiles, args.tiles), clip_factor=args.clip_factor, bins=args.bins)
    path, _ = preprocess_dataset(read_manifest(args.manifest), args.out, args.size, args.target_mm, params)
    print(f"preprocessed manifest: {path}")


def build_train_configs(args):
    from .losses import L1_ONLY
    from .model import ModelConfig
    from .preprocess import TargetParams
    from .train import TrainConfig

    raw = _read_json(args.config) if args.config else {}
    model_raw = raw.pop("model", {})
    tcfg = TrainConfig.from_dict(raw)
    try:
        mcfg = ModelConfig.from_dict(model_raw)
    except TypeError as e:
        raise ValidationError(f"bad model config: {e}") from e
    flag_map = {"epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
                "seed": "seed", "width_scale": "width_scale", "checkpoint_every": "checkpoint_every",
                "optimizer": "optimizer"}
    updates = {field: getattr(args, flag) for flag, field in flag_map.items() if getattr(args, flag) is not None}
    if args.augment:
        updates["augment"] = True
    if args.loss == "l1":
        updates["loss_weights"] = L1_ONLY
    if args.sigma is not None or args.support is not None:
        updates["target"] = TargetParams(args.sigma if args.sigma is not None else tcfg.target.sigma_px,
                                         args.support if args.support is not None else tcfg.target.support_px)
    if "seed" not in raw and "seed" not in updates:
        updates["seed"] = _default_seed()
    tcfg = replace(tcfg, **updates)
    if args.no_redundant_counting:
        mcfg = replace(mcfg, redundant_counting=False)
    return mcfg, tcfg


def cmd_train(args):
    from .model import load_checkpoint
    from .train import train

    mcfg, tcfg = build_train_configs(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    out = ensure_dir(args.out)

    def progress(rec):
        val = "n/a" if rec["val_loss"] is None else f"{rec['val_loss']:.5f}"
        print(f"epoch {rec['epoch']:4d}  train {rec['train_loss']:.5f}  val {val}", flush=True)

    train(read_manifest(args.manifest), mcfg, tcfg, out, resume=resume, progress=progress)
    print(f"checkpoint: {out / 'final.dlck'}")


def cmd_predict(args):
    from .postprocess import assign_levels, extract_keypoints
    from .train import predict

    image = read_image(args.image)
    heatmap = predict(args.checkpoint, image)
    out = ensure_dir(args.out)
    write_image(out / "heatmap.i2f", Image2D(heatmap, image.spacing_mm))
    points = extract_keypoints(heatmap, args.threshold, args.min_component_px)
    write_labels(out / "labels.json", assign_levels(points, args.start_level), source="predicted")
    print(f"{len(points)} discs -> {out / 'labels.json'}")


def cmd_evaluate(args):
    from .metrics import evaluate_dataset, evaluate_predictions, write_report

    manifest = read_manifest(args.manifest)
    if args.predictions:
        pred_dir = Path(args.predictions)
        samples = manifest.split(args.split)

        def pairs():
            for s in samples:
                img = manifest.load_image(s)
                pred = read_labels(pred_dir / Path(s.labels_path).name)
                yield Path(s.image_path).stem, s.contrast, manifest.load_labels(s), pred, img.spacing_mm

        report, rows = evaluate_predictions(pairs(), args.split)
        write_report(args.out, report, rows)
    elif args.checkpoint:
        report, _ = evaluate_dataset(manifest, args.checkpoint, args.split, args.out, args.threshold,
                                     args.min_component_px)
    else:
        raise ValidationError("evaluate needs --checkpoint or --predictions")
    print(json.dumps({k: report[k] for k in ("split", "n_samples", "fnr", "fpr", "dist_mean_mm")}))


def cmd_plot(args):
    from .plot import render_overlay

    image = read_image(args.image)
    heatmap = read_image(args.heatmap).pixels
    labels = read_labels(args.labels) if args.labels else None
    render_overlay(image, heatmap, args.out, labels)
    print(f"overlay: {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="disclabel", description="Intervertebral disc keypoint detection.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-phantoms", help="write a synthetic phantom dataset and split manifest")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--config", help="JSON with PhantomConfig fields")
    g.add_argument("--fractions", type=float, nargs=3, default=(0.75, 0.10, 0.15), metavar=("TRAIN", "TEST", "VAL"))
    g.set_defaults(func=cmd_gen_phantoms)

    pp = sub.add_parser("preprocess", help="resample, crop and CLAHE every sample of a manifest")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--size", type=int, default=141)
    pp.add_argument("--target-mm", type=float, default=1.0)
    pp.add_argument("--tiles", type=int, default=8)
    pp.add_argument("--clip-factor", type=float, default=2.0)
    pp.add_argument("--bins", type=int, default=256)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train the heatmap network")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON with TrainConfig fields and an optional 'model' section")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--seed", type=int)
    t.add_argument("--width-scale", type=float)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--sigma", type=float, help="target Gaussian sigma in px")
    t.add_argument("--support", type=float, help="target support radius in px")
    t.add_argument("--loss", choices=("composite", "l1"), default="composite")
    t.add_argument("--no-redundant-counting", action="store_true")
    t.add_argument("--augment", action="store_true")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="heatmap and disc labels for one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--min-component-px", type=int, default=3)
    pr.add_argument("--start-level", type=int, default=3)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="FNR / FPR / S-I distance report on one split")
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions", help="directory of label files named like the manifest's label files")
    e.add_argument("--split", default="val", choices=("train", "test", "val"))
    e.add_argument("--out", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--min-component-px", type=int, default=3)
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="PNG overlay of a heatmap on its image")
    pl.add_argument("--image", required=True)
    pl.add_argument("--heatmap", required=True)
    pl.add_argument("--labels")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if getattr(args, "seed", None) is None and args.command == "gen-phantoms":
            args.seed = _default_seed()
        args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (IoError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
