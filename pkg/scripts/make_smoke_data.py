"""Write the synthetic smoke table (CSV + schema) used by the CLI examples."""

import argparse

from saint.synthetic import write_smoke

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="data")
parser.add_argument("--rows", type=int, default=600)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
data, schema = write_smoke(args.out, args.rows, args.seed)
print(data, schema)
