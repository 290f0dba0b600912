"""Command line entry point.

    maa gen-data --config cfg.yaml [--seed N] [--out DIR]
    maa train    --config cfg.yaml ...
    maa attack   --config cfg.yaml [--method maa] ...
    maa eval     --config cfg.yaml [--method maa] ...
    maa ablate   --config cfg.yaml ...
    maa report   --config cfg.yaml ...
    maa rscrop-dump --size 48 --window 32 --grid-step 4 [--scale-x 1.5] ...
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import pipeline
from .config import ConfigError, parse_config
from .rscrop import ScheduleError, build_crop_plan


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the YAML run config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output root directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maa",
                                     description="RScrop/MGSD adversarial attack lab")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, doc in [("gen-data", "render the synthetic retrieval dataset"),
                      ("train", "train the source and target encoders"),
                      ("attack", "run one attack method over the eval subset"),
                      ("eval", "score a finished attack run (white-box + transfer)"),
                      ("ablate", "run the full method x seed ablation suite"),
                      ("report", "aggregate ablation rows into a summary table")]:
        p = sub.add_parser(verb, help=doc)
        _add_common(p)
        if verb in ("attack", "eval"):
            p.add_argument("--method", default="maa",
                           choices=sorted(pipeline.ev.VARIANTS))

    p = sub.add_parser("rscrop-dump", help="dump a crop schedule as JSON for debugging")
    p.add_argument("--size", type=int, required=True, help="input image side")
    p.add_argument("--window", type=int, required=True, help="crop window side")
    p.add_argument("--grid-step", type=int, required=True, help="offset spacing l")
    p.add_argument("--scale-x", type=float, default=1.0)
    p.add_argument("--scale-y", type=float, default=1.0)
    p.add_argument("--beta", type=int, nargs=2, default=None, metavar=("B1", "B2"))
    p.add_argument("--k-max", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, seed=args.seed,
            dataset=dataclasses.replace(cfg.dataset, seed=args.seed),
            train=dataclasses.replace(cfg.train, seed=args.seed),
            attack=dataclasses.replace(cfg.attack, seed=args.seed))
    if args.out is not None:
        from pathlib import Path
        cfg = dataclasses.replace(cfg, output_root=Path(args.out))
    return cfg


def _rscrop_dump(args) -> None:
    beta = tuple(args.beta) if args.beta else (1, args.grid_step - 1)
    rng = np.random.default_rng(args.seed)
    plan = build_crop_plan(args.size, args.scale_x, args.scale_y, args.window,
                           args.grid_step, beta, args.k_max, rng)
    doc = {
        "in_size": plan.in_size,
        "scale": [plan.s_x, plan.s_y],
        "scaled_hw": [plan.scaled_h, plan.scaled_w],
        "window": plan.window,
        "beta": list(beta),
        "k": plan.k,
        "offsets": [list(o) for o in plan.offsets],
        "axis_x": {"grid": plan.sched_x.grid_offsets,
                   "jitter": plan.sched_x.jitter_offsets,
                   "alphas": plan.sched_x.alphas},
        "axis_y": {"grid": plan.sched_y.grid_offsets,
                   "jitter": plan.sched_y.jitter_offsets,
                   "alphas": plan.sched_y.alphas},
    }
    json.dump(doc, sys.stdout, indent=2)
    print()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "rscrop-dump":
            _rscrop_dump(args)
            return 0
        cfg = _load_config(args)
        if args.verb == "gen-data":
            pipeline.run_gen_data(cfg)
        elif args.verb == "train":
            pipeline.run_train(cfg)
        elif args.verb == "attack":
            pipeline.run_attack(cfg, method=args.method)
        elif args.verb == "eval":
            pipeline.run_eval(cfg, method=args.method)
        elif args.verb == "ablate":
            pipeline.run_ablate(cfg)
        elif args.verb == "report":
            pipeline.run_report(cfg)
    except (ConfigError, ScheduleError, pipeline.PipelineError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
