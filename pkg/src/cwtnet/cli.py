"""Operator entry points.

Subcommands: `synth` writes a synthetic patch dataset, `train` runs or
resumes training, `eval` scores a checkpoint against a dataset (CSV plus
comparison grids), `infer` upscales a single PNG, `gradcheck` verifies every
block's gradients. Exit codes: 0 success, 2 usage or configuration error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import verify, wavelet
from .data import read_manifest, synthesize_dataset
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    NumericError,
    ShapeError,
    UsageError,
)
from .evaluate import evaluate, infer_sr
from .network import Mode
from .training import RunConfig, load_network, preset, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cwtnet",
        description="Cross-scale wavelet-transformer super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic patch dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, required=True, help="number of triples (split 5:1)")
    p.add_argument("--scale", type=int, default=2, choices=(2, 4, 8))
    p.add_argument("--patch", type=int, default=32, help="LR patch size")
    p.add_argument("--base-size", type=int, default=256)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train (or resume) a model")
    p.add_argument("--config", help="run-config JSON file")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--emit-default-config", action="store_true",
                   help="print the preset's full config as JSON and exit")
    p.add_argument("--out", help="output directory (required unless emitting config)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--scale", type=int, choices=(2, 4, 8))
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--data-dir", help="train from an on-disk dataset instead of synthetic")
    p.add_argument("--loss", choices=("only-l1", "only-mse", "ours"), default=None,
                   help="loss-function strategy")
    p.add_argument("--opt", choices=("only-sr", "only-wt", "weight-exchange", "ours"),
                   default=None, help="optimization strategy")
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--max-grids", type=int, default=8)

    p = sub.add_parser("infer", help="upscale one PNG image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, dest="infile")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.WR_TEST.value)
    p.add_argument("--wt-input", help="cross-scale PNG (cross_scale mode only)")
    p.add_argument("--on-odd", choices=("crop", "error"), default="crop",
                   help="behaviour for odd-sized inputs")

    p = sub.add_parser("gradcheck", help="verify gradients of every block type")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=None,
                   help="override the frozen per-check instance seeds")
    p.add_argument("--mutate", choices=("haar",), default=None,
                   help="deliberately corrupt a backward rule; the run must then fail")

    return parser


def _cmd_synth(args):
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    train_ids, test_ids = synthesize_dataset(
        args.out, args.seed, args.count, args.scale, args.patch, base_size=args.base_size
    )
    print(f"wrote {len(train_ids)} train / {len(test_ids)} test triples to {args.out}")
    return EXIT_OK


def _load_run_config(args):
    if args.config:
        if not os.path.exists(args.config):
            raise DataError(f"config file missing: {args.config}")
        with open(args.config) as fh:
            try:
                cfg = RunConfig.from_dict(json.load(fh))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ConfigurationError(f"config file unreadable: {exc}") from exc
    else:
        cfg = preset(args.preset)
    if args.steps is not None:
        cfg.steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.network.seed = args.seed
    if args.lr is not None:
        cfg.lr = args.lr
    if args.scale is not None:
        cfg.network.scale = args.scale
        cfg.network.block = None
        cfg.network.__post_init__()
    if args.mode is not None:
        cfg.network.mode = Mode(args.mode)
    if args.data_dir is not None:
        cfg.data.directory = args.data_dir
        manifest = read_manifest(args.data_dir)
        cfg.patch = int(manifest["patch"])
        if args.scale is None and int(manifest["scale"]) != cfg.network.scale:
            cfg.network.scale = int(manifest["scale"])
            cfg.network.block = None
            cfg.network.__post_init__()
    if args.loss is not None:
        cfg.loss_strategy = args.loss
    if args.opt is not None:
        cfg.opt_strategy = args.opt
    return cfg


def _cmd_train(args):
    if args.emit_default_config:
        cfg = preset(args.preset)
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.out:
        raise UsageError("train requires --out (or --emit-default-config)")
    cfg = _load_run_config(args)
    cfg.validate()
    result = train(cfg, args.out, resume_from=args.resume, quiet=not args.verbose)
    last = result["last"]
    print(
        f"finished at step {last.get('step', 0)}: L={last.get('L', float('nan')):.4f} "
        f"psnr={last.get('psnr_db', float('nan')):.2f}dB"
    )
    print(f"checkpoint: {result['final_checkpoint']}")
    print(f"metrics:    {result['metrics_csv']}")
    print(f"curve:      {result['curve_png']}")
    return EXIT_OK


def _cmd_eval(args):
    net, _cfg, _step = load_network(args.ckpt)
    summary = evaluate(net, args.data, args.out, mode=args.mode,
                       split=args.split, max_grids=args.max_grids)
    print(
        f"{summary['count']} images: network {summary['mean_psnr_sr']:.3f} dB / "
        f"{summary['mean_ssim_sr']:.4f}, bicubic {summary['mean_psnr_bicubic']:.3f} dB / "
        f"{summary['mean_ssim_bicubic']:.4f}"
    )
    print(f"report: {summary['csv']}")
    return EXIT_OK


def _cmd_infer(args):
    from PIL import Image

    net, _cfg, _step = load_network(args.ckpt)
    with Image.open(args.infile) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    img = arr.transpose(2, 0, 1)
    h, w = img.shape[1:]
    if h % 2 or w % 2:
        if args.on_odd == "error":
            raise DataError(f"input size {h}x{w} is odd; pass --on-odd crop to trim")
        img = img[:, : h - h % 2, : w - w % 2]
        print(f"warning: cropped odd input {h}x{w} to {img.shape[1]}x{img.shape[2]}",
              file=sys.stderr)

    wt_img = None
    mode = Mode(args.mode)
    if mode == Mode.CROSS_SCALE:
        if not args.wt_input:
            raise UsageError("cross_scale inference requires --wt-input")
        with Image.open(args.wt_input) as im:
            wt_img = (np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0).transpose(2, 0, 1)
    sr = infer_sr(net, img, wt_img, mode)
    out8 = np.clip(np.rint(sr * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    Image.fromarray(out8).save(args.out)
    print(f"{img.shape[2]}x{img.shape[1]} -> {sr.shape[2]}x{sr.shape[1]}: {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args):
    if args.mutate == "haar":
        wavelet._hh_adjoint_gain = 1.05
    try:
        reports = verify.run_all(n_samples=args.samples, seed=args.seed)
    finally:
        wavelet._hh_adjoint_gain = 1.0
    failed = False
    for rep in reports:
        print(rep.summary())
        failed = failed or not rep.passed()
    if failed:
        raise NumericError("gradient verification failed")
    print("all gradient checks passed")
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "infer": _cmd_infer,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (UsageError, ConfigurationError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
