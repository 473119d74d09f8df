"""Pre-training versus supervised-only with few labels, breast-cancer table."""

import argparse
import json

from saint.experiments import breast_cancer_raw, median, prepared, pretraining_gain
from saint.pretrain import PretrainConfig
from saint.train import TrainConfig

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
parser.add_argument("--labeled", type=int, default=50)
parser.add_argument("--epochs", type=int, default=100)
parser.add_argument("--pretrain-epochs", type=int, default=100)
args = parser.parse_args()

raw = breast_cancer_raw()
gains = []
for seed in args.seeds:
    dataset, split = prepared(raw, seed)
    row = pretraining_gain(dataset, split, seed, args.labeled, train_cfg=TrainConfig(epochs=args.epochs),
                           pre_cfg=PretrainConfig(epochs=args.pretrain_epochs))
    gains.append(row["gain"])
    print(json.dumps(row), flush=True)
print(json.dumps({"labeled": args.labeled, "median_gain": median(gains)}))
