"""Command-line interface: synthetic data generation, training, evaluation,
ablation comparisons, and routing-trace inspection."""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

from .config import TrainConfig, load_config
from .data import SyntheticSpec, generate_dataset, load_dataset
from .interpret import cue_mass_statistic, inspect_example
from .model import GraphCage
from .training import evaluate, train

ABLATION_STRATEGIES = ("capsule", "mean", "attention", "recurrent",
                       "no-caps-construction")


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec.from_json(args.spec) if args.spec else SyntheticSpec()
    paths = generate_dataset(spec, args.seed, args.out)
    _emit({"paths": paths, "seed": args.seed}, None)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, args.out)
    report = {"log_path": result["log_path"],
              "checkpoint_path": result["checkpoint_path"],
              "best_val_loss": result["best_val_loss"],
              "final_epoch": result["history"][-1]}
    _emit(report, None)
    return 0


def cmd_eval(args) -> int:
    model = GraphCage.load(args.ckpt)
    examples = load_dataset(args.data)
    report = evaluate(model, examples).to_dict()
    _emit(report, args.out)
    return 0


def cmd_inspect_routing(args) -> int:
    model = GraphCage.load(args.ckpt)
    examples = load_dataset(args.example)
    if not examples:
        raise SystemExit("no example found in input file")
    result = inspect_example(model, examples[0], args.out,
                             ascii_out=args.ascii_heatmap)
    _emit(result, None)
    return 0


def _apply_strategy(cfg: TrainConfig, strategy: str) -> TrainConfig:
    variant = copy.deepcopy(cfg)
    if strategy == "no-caps-construction":
        variant.model.construction = "direct"
        variant.model.aggregation = "capsule"
    else:
        variant.model.construction = "capsule"
        variant.model.aggregation = strategy
    return variant


def run_ablation(cfg: TrainConfig, strategies: list[str], out_dir: str
                 ) -> dict:
    """Train one model per strategy under identical seed/config and report
    test metrics side by side."""
    if not strategies:
        raise ValueError("strategy list must be non-empty")
    for s in strategies:
        if s not in ABLATION_STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}; choose from "
                             f"{ABLATION_STRATEGIES}")
    rows = {}
    test_examples = load_dataset(cfg.test_path) if cfg.test_path else None
    for strategy in strategies:
        variant = _apply_strategy(cfg, strategy)
        run_dir = os.path.join(out_dir, strategy.replace("-", "_"))
        result = train(variant, run_dir)
        row = {"checkpoint": result["checkpoint_path"]}
        if test_examples is not None:
            row.update(evaluate(result["model"], test_examples).to_dict())
        rows[strategy] = row
    return {"strategies": strategies, "table": rows}


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    report = run_ablation(cfg, strategies, args.out)
    _emit(report, os.path.join(args.out, "ablation.json"))
    _emit(report, None)
    return 0


def cmd_cue_stat(args) -> int:
    model = GraphCage.load(args.ckpt)
    examples = load_dataset(args.data)
    if args.limit:
        examples = examples[:args.limit]
    _emit(cue_mass_statistic(model, examples), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphcage",
        description="Unaligned multimodal sequence modeling via capsule "
                    "graph construction and aggregation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec file (optional)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="flat key=value config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true",
                   help="accepted for compatibility; output is always JSON")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect-routing",
                       help="export routing traces for one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--example", required=True,
                   help="JSON-lines file; the first example is used")
    p.add_argument("--out", required=True, help="trace output directory")
    p.add_argument("--ascii-heatmap", action="store_true")
    p.set_defaults(fn=cmd_inspect_routing)

    p = sub.add_parser("ablate", help="train and compare strategy variants")
    p.add_argument("--config", required=True)
    p.add_argument("--strategies", required=True,
                   help="comma-separated subset of: "
                        + ", ".join(ABLATION_STRATEGIES))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("cue-stat",
                       help="cue-attention statistic over a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_cue_stat)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
