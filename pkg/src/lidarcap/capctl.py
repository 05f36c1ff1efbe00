"""Command-line entry point: train / eval / infer / synth.

Config files are YAML documents whose keys mirror the TrainConfig, NetConfig
(under the ``net`` key) and SynthConfig dataclass field names exactly.
Unknown keys are rejected. The CAPCTL_SEED environment variable overrides the
config seed. Errors print a machine-parsable JSON object with an ``error``
message and its ``category`` on stderr and exit nonzero.
"""

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .metrics import DEFAULT_PCK_TAUS
from .net import NetConfig
from .seqdata import (
    SynthConfig,
    load_dataset,
    read_ptc,
    synth_generate_raw,
    write_dataset,
    write_mot,
)
from .smpl_body import load_body_model, synthetic_body_model
from .train import (
    TrainConfig,
    TrainError,
    evaluate_model,
    infer_frames,
    load_checkpoint,
    train,
)


class ConfigError(Exception):
    category = "config"


def _build_dataclass(cls, data, context):
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name == "net":
            value = _build_dataclass(NetConfig, value, context + ".net")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def _load_config(path, cls):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        data = yaml.safe_load(f)
    cfg = _build_dataclass(cls, data or {}, path.name)
    env_seed = os.environ.get("CAPCTL_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"CAPCTL_SEED must be an integer, got {env_seed!r}")
    cfg.validate()
    return cfg


def _load_body(args):
    if getattr(args, "body", None):
        return load_body_model(args.body)
    return synthetic_body_model(seed=0)


def cmd_train(args):
    cfg = _load_config(args.config, TrainConfig)
    if args.out:
        cfg.out_dir = args.out
    if args.data:
        cfg.data_root = args.data
    body = _load_body(args)
    result = train(cfg, body)
    epochs = [r for r in result.manifest.records if r.get("event") == "epoch"]
    summary = {
        "checkpoint": str(result.checkpoint_path),
        "manifest": str(result.manifest.path),
        "steps": result.steps,
        "final_losses": {
            k: v for k, v in (epochs[-1].items() if epochs else ()) if k.startswith("loss_")
        },
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args):
    model, meta = load_checkpoint(args.ckpt)
    body = _load_body(args)
    samples = load_dataset(
        args.data,
        body,
        window=args.window,
        stride=args.stride,
        resample_seed=int(meta.get("seed", 0)),
    )
    report = evaluate_model(
        model,
        samples,
        body,
        pck_taus=DEFAULT_PCK_TAUS,
        with_buckets=args.buckets,
        with_pve=True,
    )
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_infer(args):
    model, meta = load_checkpoint(args.ckpt)
    body = _load_body(args)
    frame_dir = Path(args.frames)
    paths = sorted(frame_dir.glob("*.ptc"))
    if not paths:
        raise TrainError(f"no .ptc frames found under {frame_dir}")
    frames = [read_ptc(p) for p in paths]
    theta, translation = infer_frames(
        model,
        body,
        frames,
        window=args.window,
        stride=args.stride,
        resample_seed=int(meta.get("seed", 0)),
    )
    write_mot(args.out, theta, translation)
    print(json.dumps({"frames": len(frames), "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_synth(args):
    cfg = _load_config(args.config, SynthConfig) if args.config else SynthConfig()
    env_seed = os.environ.get("CAPCTL_SEED")
    if args.config is None and env_seed is not None:
        cfg.seed = int(env_seed)
        cfg.validate()
    body = _load_body(args)
    recordings = synth_generate_raw(cfg, body)
    write_dataset(args.out, recordings)
    summary = []
    for rec in recordings:
        counts = np.array([len(f) for f in rec.frames])
        distances = np.linalg.norm(np.asarray(rec.translation)[:, :2], axis=1)
        summary.append(
            {
                "recording": rec.recording_id,
                "frames": len(rec.frames),
                "distance_m": round(float(distances.mean()), 2),
                "points_min": int(counts.min()),
                "points_mean": round(float(counts.mean()), 1),
                "points_max": int(counts.max()),
            }
        )
    print(json.dumps({"out": str(args.out), "recordings": summary}, indent=2, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="capctl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"capctl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a YAML config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True, help="run directory for manifest + checkpoints")
    p_train.add_argument("--data", default=None, help="override config data_root")
    p_train.add_argument("--body", default=None, help="body model container (default: built-in)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--buckets", action="store_true", help="add distance-bucket breakdown")
    p_eval.add_argument("--out", default=None, help="also write the JSON report here")
    p_eval.add_argument("--window", type=int, default=16)
    p_eval.add_argument("--stride", type=int, default=8)
    p_eval.add_argument("--body", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="pose a directory of .ptc frames")
    p_infer.add_argument("--ckpt", required=True)
    p_infer.add_argument("--frames", required=True, help="directory of *.ptc files, sorted order")
    p_infer.add_argument("--out", required=True, help="output .mot path")
    p_infer.add_argument("--window", type=int, default=16)
    p_infer.add_argument("--stride", type=int, default=None)
    p_infer.add_argument("--body", default=None)
    p_infer.set_defaults(func=cmd_infer)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--config", default=None, help="SynthConfig YAML (default: defaults)")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--body", default=None)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        category = getattr(exc, "category", None)
        if category is None:
            category = "io" if isinstance(exc, OSError) else "internal"
        print(json.dumps({"category": category, "error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
