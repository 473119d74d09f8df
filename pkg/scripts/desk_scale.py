"""Supervised SAINT with default settings on the local breast-cancer table."""

import argparse
import json

from saint.experiments import breast_cancer_raw, prepared, supervised_run
from saint.model import ModelConfig
from saint.train import TrainConfig

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--seeds", type=int, nargs="+", default=[0])
parser.add_argument("--epochs", type=int, default=100)
parser.add_argument("--variant", default="saint")
args = parser.parse_args()

raw = breast_cancer_raw()
for seed in args.seeds:
    dataset, split = prepared(raw, seed)
    result = supervised_run(dataset, split, ModelConfig.for_variant(args.variant),
                            TrainConfig(epochs=args.epochs, seed=seed))
    print(json.dumps({"seed": seed, "variant": args.variant, **result}), flush=True)
