#!/usr/bin/env python3
"""Train and compare aggregation/construction ablations under a shared seed.

By default this uses a reduced-size instance of the synthetic task so the
whole comparison finishes in a few minutes.

Usage:
    python scripts/run_ablations.py --out runs/ablate \
        [--strategies capsule,mean,attention,recurrent,no-caps-construction]
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from graphcage.cli import ABLATION_STRATEGIES, run_ablation
from graphcage.config import ModelConfig, TrainConfig
from graphcage.data import SyntheticSpec, generate_dataset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--strategies",
                    default="capsule,mean,no-caps-construction",
                    help="comma-separated subset of: "
                         + ", ".join(ABLATION_STRATEGIES))
    args = ap.parse_args()

    spec = SyntheticSpec(len_t=(20, 20), len_a=(60, 60), len_v=(80, 80),
                         n_train=600, n_val=100, n_test=100)
    data_dir = os.path.join(args.out, "data")
    print("generating dataset ...")
    generate_dataset(spec, args.seed, data_dir)

    cfg = TrainConfig(model=ModelConfig(max_len_a=60, max_len_v=80),
                      learning_rate=2e-3, epochs=20, seed=args.seed,
                      train_path=os.path.join(data_dir, "train.jsonl"),
                      val_path=os.path.join(data_dir, "val.jsonl"),
                      test_path=os.path.join(data_dir, "test.jsonl"))
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    report = run_ablation(cfg, strategies, args.out)
    path = os.path.join(args.out, "ablation.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(json.dumps(report, indent=2, sort_keys=True))
    print(f"report written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
