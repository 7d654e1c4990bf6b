"""Command-line entry point: ``vidloc <command> [options]``.

Exit status: 0 ok, 1 user error (bad flags, config or input files), 2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import os
import sys
import traceback
from pathlib import Path

from .core import ConfigError, InputError, ModelConfig
from .data import AnnotationError, GenerationError, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .decode import write_predictions
from .encoders import FeatureFormatError
from .evaluation import DecodeConfig, ModelPredictor, evaluate, predict_records
from .model import FreezePolicy
from .training import (TrainConfig, TrainingDiverged, load_checkpoint, make_pretrain_clips, pretrain_multilabel,
                       save_checkpoint, train)

OUTPUT_ROOT_ENV = "VIDLOC_OUTPUT_ROOT"
ABLATION_KEYS = ("loss_kind", "pyramid_style", "M", "text_mode")
USER_ERRORS = (ConfigError, InputError, AnnotationError, FeatureFormatError, GenerationError, FileNotFoundError,
               TrainingDiverged)

log = logging.getLogger("vidloc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------- config handling

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _known_keys(cls):
    return {f.name for f in dataclasses.fields(cls)}


def apply_overrides(doc, overrides):
    """Set dotted ``key=value`` pairs on a TrainConfig-shaped dict.

    Keys are checked against TrainConfig / ModelConfig / FreezePolicy fields.
    """
    doc = json.loads(json.dumps(doc))
    sections = {"model": _known_keys(ModelConfig), "freeze": _known_keys(FreezePolicy)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if len(parts) == 1 and parts[0] in _known_keys(TrainConfig):
            doc[parts[0]] = _parse_value(value)
        elif len(parts) == 2 and parts[0] in sections and parts[1] in sections[parts[0]]:
            sub = doc.setdefault(parts[0], {})
            sub[parts[1]] = _parse_value(value)
            if parts[0] == "model" and parts[1] in ("L", "pyramid_style"):
                sub.pop("regression_ranges", None)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return doc


def load_train_config(path, overrides, seed=None):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    unknown = set(doc) - _known_keys(TrainConfig)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "freeze" in doc and set(doc["freeze"]) - _known_keys(FreezePolicy):
        raise ConfigError(f"unknown freeze keys: {sorted(set(doc['freeze']) - _known_keys(FreezePolicy))}")
    try:
        return TrainConfig(**doc)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config: {e}") from None


def output_dir(args):
    root = args.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    out = Path(root)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _dataset(path, expect_task=None):
    task, classes, samples = load_dataset(path)
    if expect_task is not None and task != expect_task:
        raise ConfigError(f"dataset task {task!r} does not match config task {expect_task!r}")
    return task, classes, samples


def _prepare_config(cfg: TrainConfig, task, classes):
    cfg.model.task = task
    if cfg.model.text_mode == "no-text" and not cfg.model.n_classes:
        cfg.model.n_classes = len(classes)
    return cfg


# --------------------------------------------------------------------------- commands

def cmd_gen_data(args):
    out = output_dir(args) / args.name
    spec = SyntheticSpec(task=args.task, n_videos=args.n_videos, n_classes=args.n_classes,
                         background_fraction=args.background_fraction, noise_std=args.noise_std,
                         seed=args.seed if args.seed is not None else 0)
    samples, names = generate_synthetic(spec)
    save_dataset(out, spec.task, names, samples)
    print(f"wrote {len(samples)} videos to {out}")


def cmd_train(args):
    cfg = load_train_config(args.config, args.set, args.seed)
    task, classes, samples = _dataset(args.data)
    _prepare_config(cfg, task, classes)
    out = output_dir(args)
    res = train(cfg, samples, checkpoint_path=out / "model.npz", log_every=args.log_every)
    (out / "loss_curve.csv").write_text(res.curve_csv())
    print(f"trained {cfg.steps} steps; final loss {res.curve[-1][3]:.4f}" if res.curve else "trained 0 steps")
    print(f"checkpoint: {out / 'model.npz'}")


def _prompts(args, cfg):
    if args.prompts:
        return tuple(args.prompts)
    return cfg.prompts if cfg is not None else ("{label}",)


def cmd_eval(args):
    model, vocab, tc = load_checkpoint(args.checkpoint)
    task, _, samples = _dataset(args.data)
    if task != model.config.task:
        raise ConfigError(f"checkpoint trained for {model.config.task!r}, dataset is {task!r}")
    pred = ModelPredictor(model, vocab, _prompts(args, tc), ensemble=args.ensemble_prompts)
    report = evaluate(pred, samples, task, window=args.window)
    out = output_dir(args)
    (out / "report.json").write_text(report.to_json() + "\n")
    print(report.table())


def cmd_predict(args):
    model, vocab, tc = load_checkpoint(args.checkpoint)
    _, _, samples = _dataset(args.data)
    pred = ModelPredictor(model, vocab, _prompts(args, tc), ensemble=args.ensemble_prompts)
    records = predict_records(pred, samples, DecodeConfig(max_per_video=args.max_per_video))
    out = output_dir(args) / "predictions.jsonl"
    write_predictions(out, records)
    print(f"wrote {len(records)} predictions to {out}")


def parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} is not key=v1,v2")
        key, values = item.split("=", 1)
        if key not in ABLATION_KEYS:
            raise ConfigError(f"ablation key must be one of {ABLATION_KEYS}, got {key!r}")
        grid[key] = [_parse_value(v) for v in values.split(",") if v]
        if not grid[key]:
            raise ConfigError(f"grid entry {key!r} has no values")
    return grid


def cmd_ablate(args):
    grid = parse_grid(args.grid)
    if not grid:
        raise ConfigError("ablate needs at least one --grid key=v1,v2")
    task, classes, samples = _dataset(args.data)
    test = _dataset(args.test_data, task)[2] if args.test_data else samples
    out = output_dir(args)
    keys = sorted(grid)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = list(args.set) + [f"model.{k}={json.dumps(v)}" for k, v in zip(keys, combo)]
        cfg = _prepare_config(load_train_config(args.config, overrides, args.seed), task, classes)
        res = train(cfg, samples)
        report = evaluate(ModelPredictor(res.model, res.vocab, cfg.prompts), test, task)
        rows.append({**dict(zip(keys, combo)), **report.metrics})
        log.info("ablation %s -> %s", dict(zip(keys, combo)), report.metrics)
    metric_names = sorted(k for k in rows[0] if k not in keys)
    with open(out / "ablation.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(keys + metric_names)
        for r in rows:
            w.writerow([r[k] for k in keys] + [f"{r[m]:.6f}" for m in metric_names])
    widths = [max(len(c), 14) for c in keys + metric_names]
    print("  ".join(c.ljust(w) for c, w in zip(keys + metric_names, widths)))
    for r in rows:
        cells = [str(r[k]) for k in keys] + [f"{r[m]:.4f}" for m in metric_names]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))


def cmd_pretrain(args):
    cfg = load_train_config(args.config, args.set, args.seed)
    task, classes, samples = _dataset(args.data)
    if task == "mr":
        raise ConfigError("pretraining needs a labelled (tal or as) dataset")
    clips = make_pretrain_clips(samples, clip_frames=cfg.model.N)
    if not clips:
        raise InputError("no labelled events to cut pretraining clips from")
    model, vocab, losses = pretrain_multilabel(cfg, clips, classes, steps=cfg.steps)
    out = output_dir(args)
    save_checkpoint(out / "pretrained.npz", model, vocab, cfg)
    print(f"pretrained {len(losses)} steps on {len(clips)} clips; final loss {losses[-1]:.4f}"
          if losses else "pretrained 0 steps")


# --------------------------------------------------------------------------- argument parsing

def build_parser():
    p = _Parser(prog="vidloc", description="Video-text temporal localization: train, evaluate, ablate.")
    p.add_argument("--output-dir", help=f"artifact directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a seeded synthetic dataset")
    g.add_argument("--name", default="data")
    g.add_argument("--task", choices=("tal", "mr", "as"), default="tal")
    g.add_argument("--n-videos", type=int, default=200)
    g.add_argument("--n-classes", type=int, default=3)
    g.add_argument("--noise-std", type=float, default=0.3)
    g.add_argument("--background-fraction", type=float)
    g.set_defaults(func=cmd_gen_data)

    def config_args(sp):
        sp.add_argument("--config", help="JSON file mirroring TrainConfig")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override, e.g. lr=0.1 or model.L=1 (repeatable)")

    def model_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--prompts", nargs="+", help="prompt templates, each with one {label} slot")
        sp.add_argument("--ensemble-prompts", action="store_true")

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--log-every", type=int, default=0)
    config_args(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write report.json")
    e.add_argument("--data", required=True)
    e.add_argument("--window", type=int, help="sliding window for segmentation (default: model N)")
    model_args(e)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="dump scored segments as JSON lines")
    pr.add_argument("--data", required=True)
    pr.add_argument("--max-per-video", type=int, default=100)
    model_args(pr)
    pr.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="train and evaluate a grid of variants")
    a.add_argument("--data", required=True)
    a.add_argument("--test-data")
    a.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help=f"one of {', '.join(ABLATION_KEYS)} (repeatable)")
    config_args(a)
    a.set_defaults(func=cmd_ablate)

    pt = sub.add_parser("pretrain", help="clip-level multi-label pretraining")
    pt.add_argument("--data", required=True)
    config_args(pt)
    pt.set_defaults(func=cmd_pretrain)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command (gen-data, train, eval, predict, ablate, pretrain)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        args.func(args)
        return 0
    except UsageError as e:
        print(f"vidloc: usage error: {e}", file=sys.stderr)
        return 1
    except USER_ERRORS as e:
        print(f"vidloc: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort handler
        print(f"vidloc: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        if os.environ.get("VIDLOC_DEBUG"):
            traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
