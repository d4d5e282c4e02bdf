"""Command-line entry point.

Subcommands: gen-data, scribblify, train, train-baseline, eval, predict.
Exit codes: 0 success, 1 usage error, 2 runtime/data error.  All randomness
is governed by --seed; WMU_THREADS caps worker threads (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

__all__ = ["main", "run"]


def _apply_thread_cap():
    cap = int(os.environ.get("WMU_THREADS", "1"))
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=cap)
    except ImportError:
        pass
    return cap


def _load_config(path) -> dict:
    import tomli
    with open(path, "rb") as f:
        cfg = tomli.load(f)
    for k, v in cfg.items():
        if isinstance(v, (dict, list)) and k != "backbones":
            raise ValueError(f"config key {k!r}: only flat scalar values allowed")
    return cfg


def _build_train_config(args) -> "TrainConfig":
    from .trainer import TrainConfig
    values = {}
    if args.config:
        values.update(_load_config(args.config))
    cli_overrides = {
        "seed": args.seed,
        "backbones": args.backbones,
        "iterations": getattr(args, "iterations", None),
    }
    for k, v in cli_overrides.items():
        if v is not None:
            values[k] = v
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors -> exit code 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _make_parser() -> _Parser:
    p = _Parser(prog="triseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-val", type=int, default=None)
    g.add_argument("--n-test", type=int, default=None)
    g.add_argument("--coverage", type=float, default=0.5)

    s = sub.add_parser("scribblify", help="derive scribbles from dense labels")
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--coverage", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)

    for name in ("train", "train-baseline"):
        t = sub.add_parser(name)
        t.add_argument("--data", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--config", default=None)
        t.add_argument("--seed", type=int, default=None)
        t.add_argument("--iterations", type=int, default=None)
        t.add_argument("--backbones", default=None,
                       help="comma triple, e.g. cnn,attn,ssm")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test",
                   choices=("train", "val", "test"))
    e.add_argument("--out", default=None, help="CSV output path")

    pr = sub.add_parser("predict", help="segment one image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out", required=True, help="output PGM class map")
    pr.add_argument("--overlay", default=None, help="optional color PPM")
    return p


def run(argv=None) -> int:
    _apply_thread_cap()
    args = _make_parser().parse_args(argv)
    from . import data
    if args.command == "gen-data":
        data.gen_synthetic(args.n, args.size, args.seed, args.out,
                           n_val=args.n_val, n_test=args.n_test,
                           coverage=args.coverage)
    elif args.command == "scribblify":
        index = data.load_index(args.data)
        rng = np.random.default_rng(args.seed)
        for sid in index.ids(args.split):
            dense = data.read_pgm(index.root / "labels" / f"{sid}.pgm")
            scrib = data.scribblify(dense, args.coverage,
                                    seed=int(rng.integers(2 ** 31)))
            data.write_pgm(index.root / "scribbles" / f"{sid}.pgm", scrib)
    elif args.command in ("train", "train-baseline"):
        from . import trainer
        cfg = _build_train_config(args)
        fit = trainer.fit if args.command == "train" else trainer.fit_baseline_pce
        fit(cfg, args.data, args.out)
    elif args.command == "eval":
        from . import trainer, metrics
        nets = trainer.load_networks(args.ckpt)
        index = data.load_index(args.data)
        csv_path = args.out or "report.csv"
        rep = metrics.evaluate(
            lambda img: trainer.ensemble_predict(nets, img), index,
            args.split, nets[0].image_size, nets[0].num_classes, csv_path)
        print("mean " + " ".join(f"{m}={v:.4f}" for m, v in rep.mean.items()))
    elif args.command == "predict":
        from . import trainer
        nets = trainer.load_networks(args.ckpt)
        img = data.read_pgm(args.image)
        size = nets[0].image_size
        if img.shape != (size, size):
            raise ValueError(f"image is {img.shape[1]}x{img.shape[0]} but the "
                             f"checkpoint expects {size}x{size}")
        image = img.astype(np.float32)[None] / 255.0
        pred = trainer.ensemble_predict(nets, image)
        data.write_pgm(args.out, pred.astype(np.uint8))
        if args.overlay:
            _write_overlay(args.overlay, img, pred)
    return 0


_CLASS_COLORS = np.array(
    [[0, 0, 0], [220, 60, 60], [60, 200, 60], [60, 90, 220],
     [220, 200, 60], [200, 60, 220], [60, 220, 220], [220, 220, 220]],
    np.float32)


def _write_overlay(path, gray: np.ndarray, pred: np.ndarray):
    """Color PPM: image blended with per-class colors on foreground."""
    rgb = np.repeat(gray[:, :, None].astype(np.float32), 3, axis=2)
    color = _CLASS_COLORS[pred % len(_CLASS_COLORS)]
    fg = (pred > 0)[:, :, None]
    out = np.where(fg, 0.5 * rgb + 0.5 * color, rgb)
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    h, w = pred.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(out.tobytes())


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"triseg: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
