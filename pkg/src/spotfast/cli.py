"""``spotfast`` command line: data generation, window statistics, training,
evaluation and memory diagnostics.

Results go to stdout as JSON; logs go to stderr. Exit codes: 0 ok, 1 usage,
2 I/O, 3 missing prerequisite, 4 numeric failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as C
from .data import (SyntheticSpec, boundary_durations, generate_synthetic_dataset,
                   last_write_status, list_classes)
from .model import build_model, load_checkpoint
from .pkmem import memory_usage_stats, usage_to_json
from .tensorio import ContainerError
from .train import ClipSet, NumericError, PrerequisiteError, evaluate, run_phase
from .windowing import BoundaryStats, boundary_stats, candidate_windows, window_offset

log = logging.getLogger("spotfast")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_STATE, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def config_help():
    lines = ["config keys (full-scale preset default):"]
    for key, default, text in C.describe():
        lines.append(f"  {key} = {json.dumps(default)}  -- {text}")
    return "\n".join(lines)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


def cmd_gen_data(args):
    spec = SyntheticSpec(num_classes=args.classes, clips_per_class=args.per_class,
                         T=args.frames, H=args.size, W=args.size, seed=args.seed,
                         channels=1 if args.grayscale else 3,
                         val_per_class=args.val_per_class, test_per_class=args.test_per_class)
    manifest = generate_synthetic_dataset(spec, args.out)
    _emit({**manifest.to_json(), "status": last_write_status(args.out)})
    return EXIT_OK


def cmd_window_stats(args):
    if args.mean is not None or args.std is not None:
        if args.mean is None or args.std is None:
            raise UsageError("--mean and --std go together")
        stats = BoundaryStats(args.mean, args.std, 1)
    elif args.durations:
        with open(args.durations) as fh:
            stats = boundary_stats(json.load(fh))
    elif args.data:
        durations = boundary_durations(args.data, args.split)
        if not durations:
            raise PrerequisiteError(f"no word-boundary metadata under {args.data}/*/{args.split}")
        stats = boundary_stats(durations)
    else:
        raise UsageError("give --data, --durations or --mean/--std")
    _emit({"mean": stats.mean, "std": stats.std, "count": stats.count,
           "windows": candidate_windows(stats, args.frames)})
    return EXIT_OK


def _load_cfg(args):
    if args.config:
        cfg = C.load_config(args.config)
    else:
        cfg = C.from_dict({"preset": args.preset})
    if args.data:
        cfg.data_root = args.data
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.data_root:
        raise UsageError("no dataset: pass --data or set data_root in the config")
    return cfg


def cmd_train(args):
    cfg = _load_cfg(args)
    plan = cfg.phases[args.phase - 1]
    if args.epochs is not None:
        plan.epochs = args.epochs
    classes = list_classes(cfg.data_root)
    if args.config is None:
        cfg.model.num_classes = len(classes)
    elif cfg.model.num_classes != len(classes):
        raise C.ConfigError(f"model.num_classes: config says {cfg.model.num_classes}, "
                            f"{cfg.data_root} has {len(classes)} classes")
    frames = cfg.model.backbone.num_frames
    train = ClipSet.from_layout(cfg.data_root, "train", cfg.preprocess, frames)
    val = None
    if any(Path(cfg.data_root).glob("*/val")):
        val = ClipSet.from_layout(cfg.data_root, "val", cfg.preprocess, frames)
    model = build_model(cfg.model, seed=cfg.seed)
    records = run_phase(model, plan, train, cfg.out_dir, val, seed=cfg.seed, resume=args.resume,
                        log_augment=args.log_augment, meta={"data_root": str(cfg.data_root)})
    last = [r for r in records if r.get("event") == "epoch"][-1]
    _emit({"phase": plan.phase_id, "checkpoint": str(Path(cfg.out_dir) / f"phase{plan.phase_id}.ckpt"),
           "metrics": str(Path(cfg.out_dir) / "metrics.jsonl"), **last})
    return EXIT_OK


def _clipset_for(ckpt_meta, model, data, split):
    root = data or ckpt_meta.get("data_root")
    if not root:
        raise UsageError("checkpoint has no data_root; pass --data")
    pre = C.PreprocessConfig(**ckpt_meta["preprocess"]) if "preprocess" in ckpt_meta else C.PreprocessConfig()
    return ClipSet.from_layout(root, split, pre, model.cfg.backbone.num_frames)


def cmd_eval(args):
    if not Path(args.ckpt).exists():
        raise FileNotFoundError(f"checkpoint {args.ckpt} not found")
    model, meta = load_checkpoint(args.ckpt)
    model.use_transformer = meta.get("phase", 1) > 1
    data = _clipset_for(meta, model, args.data, args.split)
    _emit({"split": args.split, "accuracy": evaluate(model, data), "clips": len(data)})
    return EXIT_OK


def cmd_memory_usage(args):
    model, meta = load_checkpoint(args.ckpt)
    model.eval()
    data = _clipset_for(meta, model, args.data, args.split)
    mems = model.transformer.memories()
    hists = [np.zeros(m.size, dtype=np.int64) for m in mems]

    def counter(i):
        def hook(mod, inp):
            hists[i] += memory_usage_stats(inp[0], mod)
        return hook

    hooks = [m.register_forward_pre_hook(counter(i)) for i, m in enumerate(mems)]
    bb = model.cfg.backbone
    offset = window_offset(bb.num_frames, bb.window_size)
    try:
        with torch.no_grad():
            for x, _ in data.eval_batches(32, next(model.parameters()).dtype):
                spot, fast = model.features(x)
                model.transformer(spot.transpose(1, 2), fast.transpose(1, 2), offset)
    finally:
        for h in hooks:
            h.remove()
    _emit({name: json.loads(usage_to_json(h)) for name, h in zip(("spot", "fast"), hists)})
    return EXIT_OK


def build_parser():
    p = _Parser(prog="spotfast", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=config_help())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset in word/split layout")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--per-class", type=int, default=50, help="train clips per class")
    g.add_argument("--val-per-class", type=int, default=0)
    g.add_argument("--test-per-class", type=int, default=0)
    g.add_argument("--frames", type=int, default=29)
    g.add_argument("--size", type=int, default=96, help="frame height and width")
    g.add_argument("--grayscale", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    w = sub.add_parser("window-stats", help="word-boundary statistics and candidate windows")
    w.add_argument("--data", help="dataset root; boundaries read from clip headers")
    w.add_argument("--split", default="train")
    w.add_argument("--durations", help="JSON list of word durations in frames")
    w.add_argument("--mean", type=float)
    w.add_argument("--std", type=float)
    w.add_argument("--frames", type=int, default=29)
    w.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    w.set_defaults(func=cmd_window_stats)

    t = sub.add_parser("train", help="run one training phase", epilog=config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--config", help="YAML file; keys as listed below")
    t.add_argument("--preset", choices=sorted(C.PRESETS), default="desk")
    t.add_argument("--phase", type=int, choices=(1, 2, 3), required=True)
    t.add_argument("--resume", help="previous phase checkpoint (default OUT/phase{p-1}.ckpt)")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--log-augment", action="store_true", help="write per-clip augmentation JSON lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--data")
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity; eval is deterministic")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("memory-usage", help="value-row selection histograms of both memories")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--split", default="val", choices=("train", "val", "test"))
    m.add_argument("--data")
    m.add_argument("--seed", type=int, default=0, help="accepted for uniformity; unused")
    m.set_defaults(func=cmd_memory_usage)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
    try:
        return args.func(args)
    except (UsageError, C.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STATE
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
