"""Command-line entry point: ``adaptive-ivus {train,eval,sweep,render,print-config}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import yaml

from adaptive_ivus import harness
from adaptive_ivus.neural import CheckpointError


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--factor", type=int, help="override the subsampling factor N/K")
    common.add_argument("--out", metavar="DIR", help="override the output directory")
    common.add_argument("--checkpoint", metavar="PATH", help="agent checkpoint (eval, render)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="adaptive-ivus", description="Adaptive element-pair subsampling for circular-array IVUS.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train an agent and write logs plus a checkpoint")
    sub.add_parser("eval", parents=[common], help="compare a checkpoint with the random baseline")
    sweep = sub.add_parser("sweep", parents=[common], help="train and evaluate over factors and seeds")
    sweep.add_argument("--factors", help="comma-separated factors, e.g. 2,4,8")
    sub.add_parser("render", parents=[common], help="write frames and action strips for one episode")
    sub.add_parser("print-config", parents=[common], help="print the effective configuration as YAML")
    return parser


def resolve_config(args) -> harness.RunConfig:
    cfg = harness.load_config(args.config) if args.config else harness.RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.factor is not None:
        overrides["factor"] = args.factor
    if args.out is not None:
        overrides["out_dir"] = args.out
    return replace(cfg, **overrides) if overrides else cfg


def _parse_factors(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ValueError(f"--factors must be comma-separated integers, got {text!r}") from exc


def run(args) -> int:
    cfg = resolve_config(args)
    if args.command == "print-config":
        sys.stdout.write(harness.dump_config(cfg))
    elif args.command == "train":
        result = harness.cmd_train(cfg)
        print(json.dumps(result.summary, indent=2, sort_keys=True))
    elif args.command == "eval":
        table = harness.cmd_eval(cfg, args.checkpoint)
        print("metric,random,learned")
        for m in ("return",) + harness.METRICS:
            print(f"{m},{table['random'][m]:.6g},{table['learned'][m]:.6g}")
    elif args.command == "sweep":
        factors = _parse_factors(args.factors) if args.factors else None
        for row in harness.cmd_sweep(cfg, factors):
            print(f"factor {row['factor']:>3}  {row['strategy']:<8} ssim {row['ssim_mean']:.4f} +- {row['ssim_std']:.4f}")
    elif args.command == "render":
        for path in harness.cmd_render(cfg, args.checkpoint):
            print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except (ValueError, FileNotFoundError, CheckpointError, yaml.YAMLError) as exc:
        print(f"adaptive-ivus {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
