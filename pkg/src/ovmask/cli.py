"""Command-line entry point.

    ovmask gen-data --out PATH --kind pretrain|detect --count N --seed S
    ovmask pretrain --config FILE [--override key=value ...]
    ovmask finetune --config FILE [--override key=value ...]
    ovmask eval-retrieval --config FILE [--override key=value ...]
    ovmask eval-regions --config FILE [--override key=value ...]
    ovmask verify

Config files are flat key=value text ('#' starts a comment). Every key is
validated against the experiment schema before any compute; unknown keys are
rejected. Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 numeric failure.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .encoders import DualEncoderModel
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateNormError,
    DomainError,
    FormatError,
    GeometryError,
    ShapeError,
    TrainingError,
)
from .training import ExperimentConfig, eval_regions, eval_retrieval, finetune, model_config, pretrain
from .world import Vocabulary, generate_detection_dataset, generate_pretrain_dataset, read_dataset, write_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# command-level keys that sit outside ExperimentConfig
EXTRA_KEYS = {
    "out_dir": str,
    "pretrain_checkpoint": str,
    "detector_checkpoint": str,
    "frozen_checkpoint": str,
    "vlm_backbone": str,
    "scores_csv": str,
    "retrieval_data": str,
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES.get(key) or EXTRA_KEYS.get(key)
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})")


def parse_config(path, overrides=()):
    """Flat key=value file plus --override pairs -> (ExperimentConfig, extras)."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            pairs[key] = value
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        pairs[key] = value

    cfg_kwargs = {}
    extras = {"out_dir": "runs/exp"}
    for key, raw in pairs.items():
        if key in _FIELD_TYPES:
            cfg_kwargs[key] = _coerce(key, raw)
        elif key in EXTRA_KEYS:
            extras[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ExperimentConfig(**cfg_kwargs), extras


def _print_metrics(pairs):
    print(" ".join(f"{k}={v}" for k, v in pairs.items()))


def cmd_gen_data(args):
    if args.count < 0:
        raise ConfigError("--count must be nonnegative")
    if args.kind == "pretrain":
        records = generate_pretrain_dataset(args.count, seed=args.seed, image_size=args.image_size)
    elif args.kind == "detect":
        records = generate_detection_dataset(args.count, seed=args.seed, image_size=args.detect_image_size)
    else:
        raise ConfigError(f"unknown kind {args.kind!r}")
    write_dataset(records, args.out)
    _print_metrics({"records": len(records), "path": args.out})
    return EXIT_OK


def cmd_pretrain(args):
    cfg, extras = parse_config(args.config, args.override)
    result = pretrain(cfg, extras["out_dir"])
    _print_metrics(
        {
            "final_total": f"{result['final_total']:.6f}",
            "final_L_con": f"{result['final_L_con']:.6f}",
            "checkpoint": result["checkpoint"],
            "frozen_checkpoint": result["frozen_checkpoint"],
            "metrics_csv": result["metrics_csv"],
        }
    )
    return EXIT_OK


def cmd_finetune(args):
    cfg, extras = parse_config(args.config, args.override)
    ckpt = extras.get("pretrain_checkpoint") or os.path.join(extras["out_dir"], "pretrain.ckpt")
    result = finetune(cfg, ckpt, extras["out_dir"])
    _print_metrics({"checkpoint": result["checkpoint"]})
    return EXIT_OK


def cmd_eval_retrieval(args):
    cfg, extras = parse_config(args.config, args.override)
    ckpt = extras.get("pretrain_checkpoint") or os.path.join(extras["out_dir"], "pretrain.ckpt")
    vocab = Vocabulary()
    model = DualEncoderModel.load(model_config(cfg, len(vocab)), ckpt)
    if extras.get("retrieval_data"):
        records = read_dataset(extras["retrieval_data"])
    else:
        from .training import _FIXED_RETRIEVAL_EVAL

        records = generate_pretrain_dataset(
            cfg.retrieval_eval_size, seed=_FIXED_RETRIEVAL_EVAL, image_size=cfg.image_size
        )
    result = eval_retrieval(model, records)
    out = {}
    for direction in ("i2t", "t2i"):
        for k, v in result[direction].items():
            out[f"recall_at_{k}_{direction}"] = f"{v:.4f}"
    _print_metrics(out)
    return EXIT_OK


def cmd_eval_regions(args):
    cfg, extras = parse_config(args.config, args.override)
    detector = extras.get("detector_checkpoint") or os.path.join(extras["out_dir"], "detector.ckpt")
    frozen = extras.get("frozen_checkpoint") or os.path.join(extras["out_dir"], "frozen.ckpt")
    flag = extras.get("vlm_backbone", "frozen")
    result, _ = eval_regions(
        cfg, detector, frozen, out_csv=extras.get("scores_csv") or None, vlm_backbone=flag
    )
    _print_metrics(
        {
            "base_accuracy": f"{result['base_accuracy']:.4f}",
            "novel_accuracy": f"{result['novel_accuracy']:.4f}",
            "base_total": result["base_total"],
            "novel_total": result["novel_total"],
            "vlm_backbone": flag,
        }
    )
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_all

    results = run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="ovmask", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a .cfmd dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--kind", required=True, choices=["pretrain", "detect"])
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--image-size", type=int, default=32, dest="image_size")
    gen.add_argument("--detect-image-size", type=int, default=64, dest="detect_image_size")
    gen.set_defaults(fn=cmd_gen_data)

    for name, fn in (
        ("pretrain", cmd_pretrain),
        ("finetune", cmd_finetune),
        ("eval-retrieval", cmd_eval_retrieval),
        ("eval-regions", cmd_eval_regions),
    ):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        cmd.set_defaults(fn=fn)

    ver = sub.add_parser("verify", help="run the invariant suite")
    ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, DomainError, DegenerateNormError, ContractError, ShapeError, GeometryError, DataError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
