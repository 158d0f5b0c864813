"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 any other failure.
"""
from __future__ import annotations

import argparse
import sys

from .ablate import ablate
from .config import ConfigError, DataError, load_train_config
from .data.io import read_png
from .data.synthetic import generate_synthetic_dataset, load_generator_spec
from .evaluate import evaluate, occlusion_study, predict_and_overlay
from .geometry import CameraIntrinsics
from .train import train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def cmd_gen_data(args):
    spec = load_generator_spec(args.spec)
    m = generate_synthetic_dataset(spec, args.seed, args.out)
    counts = {s: len(m.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(m)} samples to {args.out} {counts}")


def cmd_train(args):
    cfg = load_train_config(args.config)
    every = max(1, args.log_every)

    def progress(rec):
        if rec["step"] % every == 0:
            print(f"epoch {rec['epoch']} step {rec['step']} lr {rec['lr']:.2e} "
                  f"shape {rec['shape']:.4f} kld {rec['kld']:.4f} pose {rec['pose']:.4f}", flush=True)

    result = train(cfg, resume=args.resume, progress=progress)
    print(f"checkpoint: {result.checkpoint}")


def cmd_eval(args):
    evaluate(args.ckpt, args.data, args.split, args.out, oracle=args.oracle)


def cmd_occlusion(args):
    occlusion_study(args.ckpt, args.data, args.out, split=args.split)


def cmd_ablate(args):
    ablate(load_train_config(args.config), args.axis, args.out)


def cmd_predict(args):
    h, w = read_png(args.image).shape[:2]
    try:
        intr = CameraIntrinsics(args.fx, args.fy, args.cx, args.cy, w, h)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = predict_and_overlay(args.ckpt, args.image, intr, args.out)
    print(f"pose: quat {out['pose'].quat.round(4).tolist()} t {out['pose'].translation.round(4).tolist()}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapepose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--log-every", type=int, default=10)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-category metrics of a checkpoint on one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true", help="score ground truth as the prediction")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("occlusion", help="clean vs block-occluded evaluation")
    o.add_argument("--ckpt", required=True)
    o.add_argument("--data", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--split", default="test")
    o.set_defaults(func=cmd_occlusion)

    a = sub.add_parser("ablate", help="train and evaluate every variant along one axis")
    a.add_argument("--config", required=True)
    a.add_argument("--axis", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("predict", help="zero-code prediction with a projected overlay")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    for k in ("fx", "fy", "cx", "cy"):
        r.add_argument(f"--{k}", type=float, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - every other failure maps to one exit code
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
