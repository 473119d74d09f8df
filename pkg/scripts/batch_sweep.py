"""Evaluation batch size sweep (32..256) for each variant on the smoke table."""

import argparse
import json

from saint.data import fit_transform, load_csv, make_split
from saint.experiments import batch_sweep
from saint.model import ModelConfig, SaintModel
from saint.synthetic import smoke_table, write_smoke
from saint.train import TrainConfig, train_supervised

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--epochs", type=int, default=30)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--workdir", default="runs/batch_sweep")
args = parser.parse_args()

data, _ = write_smoke(args.workdir)
_, _, schema = smoke_table()
raw = load_csv(data, schema)
split = make_split(raw.n_rows, seed=args.seed)
dataset = fit_transform(raw, split, schema)
for variant in ("saint_s", "saint_i", "saint"):
    model = SaintModel(dataset.schema, ModelConfig.for_variant(variant), seed=args.seed)
    train_supervised(model, dataset, split, TrainConfig(epochs=args.epochs, seed=args.seed))
    for row in batch_sweep(model, dataset, split.test):
        print(json.dumps({"variant": variant, **row}), flush=True)
