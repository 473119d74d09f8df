"""Small synthetic tables for smoke runs and directional experiments."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import Dataset, from_arrays


def smoke_table(m: int = 600, seed: int = 0) -> tuple[list[str], list[list[str]], dict]:
    """A mixed-type binary table: 3 categorical and 5 continuous columns, a few missing cells.

    Returns (header, rows, schema dict).
    """
    rng = np.random.default_rng(seed)
    colours = np.array(["red", "green", "blue", "grey"])
    sizes = np.array(["S", "M", "L"])
    shapes = np.array(["round", "square", "flat", "tall", "wide"])
    c1, c2, c3 = rng.integers(0, 4, m), rng.integers(0, 3, m), rng.integers(0, 5, m)
    x = rng.standard_normal((m, 5))
    x[:, 3] = 0.7 * x[:, 0] + 0.3 * x[:, 3]
    x[:, 4] = np.abs(x[:, 4]) * 10.0 + 50.0
    logit = (1.2 * x[:, 0] - 0.8 * x[:, 1] + 0.6 * (c1 == 2) - 0.9 * (c2 == 0)
             + 0.5 * x[:, 2] * (c3 >= 2) + 0.05 * (x[:, 4] - 58.0) + 0.3 * rng.standard_normal(m))
    y = (logit > np.median(logit)).astype(int)
    header = ["colour", "size", "shape", "x0", "x1", "x2", "x3", "weight", "label"]
    rows = []
    for i in range(m):
        cells = [colours[c1[i]], sizes[c2[i]], shapes[c3[i]], *(f"{v:.6f}" for v in x[i]), "yes" if y[i] else "no"]
        if rng.random() < 0.03:
            cells[int(rng.integers(0, 8))] = "NA"
        rows.append(cells)
    schema = {
        "columns": [{"name": n, "kind": "categorical"} for n in header[:3]]
        + [{"name": n, "kind": "continuous"} for n in header[3:8]],
        "target": {"name": "label", "task": "binary"},
        "positional_encoding": False,
    }
    return header, rows, schema


def write_smoke(directory, m: int = 600, seed: int = 0) -> tuple[Path, Path]:
    """Write ``smoke.csv`` and ``smoke.schema.json`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    header, rows, schema = smoke_table(m, seed)
    data, schema_path = out / "smoke.csv", out / "smoke.schema.json"
    with open(data, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    schema_path.write_text(json.dumps(schema, indent=1) + "\n")
    return data, schema_path


def interaction_dataset(m: int = 800, n_pairs: int = 3, seed: int = 0, kind: str = "threshold") -> Dataset:
    """Binary labels driven by categorical x continuous interactions.

    ``threshold``: each categorical column sets the threshold applied to |x| of
    its paired continuous column. ``product``: each categorical column sets the
    sign and scale multiplying its paired continuous column. In both cases no
    single column carries the signal on its own.
    """
    rng = np.random.default_rng(seed)
    card = 4
    cat = rng.integers(1, card + 1, (m, n_pairs))
    cont = rng.standard_normal((m, n_pairs))
    if kind == "threshold":
        thresholds = np.array([0.0, 0.3, 0.7, 1.1, 1.5])
        score = (np.abs(cont) - thresholds[cat]).sum(axis=1)
        y = (score > np.median(score)).astype(np.int64)
    elif kind == "product":
        gain = np.array([0.0, -1.5, -0.5, 0.5, 1.5])
        score = (gain[cat] * cont).sum(axis=1)
        y = (score + 0.2 * rng.standard_normal(m) > 0).astype(np.int64)
    else:
        raise ValueError(f"unknown interaction kind {kind!r}")
    return from_arrays(cat, cont, y, [card + 1] * n_pairs)
