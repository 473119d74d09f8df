"""Per-feature continuous embeddings versus concatenating raw values at the head."""

import argparse
import json

from saint.experiments import embedding_gap, median

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
parser.add_argument("--rows", type=int, default=800)
parser.add_argument("--kind", choices=("threshold", "product"), default="threshold")
args = parser.parse_args()

gaps = []
for seed in args.seeds:
    row = embedding_gap(seed, m=args.rows, kind=args.kind)
    gaps.append(row["gap"])
    print(json.dumps(row), flush=True)
print(json.dumps({"kind": args.kind, "median_gap": median(gaps)}))
