"""Test AUROC as a growing share of training cells is corrupted (smoke table)."""

import argparse
import csv
import json
import sys

from saint.data import fit_transform, load_csv, make_split
from saint.experiments import non_increasing, robustness_curve
from saint.model import ModelConfig
from saint.synthetic import smoke_table, write_smoke
from saint.train import TrainConfig

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--mode", choices=("replace", "missing"), default="replace")
parser.add_argument("--fractions", default="0,0.1,0.3,0.5,0.7,0.9")
parser.add_argument("--variant", default="saint")
parser.add_argument("--epochs", type=int, default=100)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--workdir", default="runs/robustness")
args = parser.parse_args()

data, schema_path = write_smoke(args.workdir)
_, _, schema = smoke_table()
raw = load_csv(data, schema)
split = make_split(raw.n_rows, seed=args.seed)
dataset = fit_transform(raw, split, schema)
fractions = [float(f) for f in args.fractions.split(",")]
rows = robustness_curve(dataset, split, fractions, args.mode, ModelConfig.for_variant(args.variant),
                        TrainConfig(epochs=args.epochs, seed=args.seed))
writer = csv.writer(sys.stdout, lineterminator="\n")
writer.writerow(["fraction", "auroc"])
for r in rows:
    writer.writerow([r["fraction"], r["auroc"]])
print(json.dumps({"non_increasing_within_0.02": non_increasing([r["auroc"] for r in rows], 0.02)}),
      file=sys.stderr)
