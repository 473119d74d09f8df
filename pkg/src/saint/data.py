"""CSV ingestion, train-only preprocessing, splits and seeded batching.

Categorical columns are label encoded with id 0 reserved per column as the
missing/unseen token. Continuous columns are z-normalised with train-split
statistics (population std), and missing cells become 0 after normalisation
with a per-cell indicator kept for corruption experiments.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np

from .storage import read_arrays, write_arrays

log = logging.getLogger(__name__)

MISSING_MARKERS = frozenset({"", "NA", "?"})
MISSING_ID = 0
DEFAULT_FRACTIONS = (0.65, 0.15, 0.20)


class SchemaError(ValueError):
    pass


class CSVParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


# -- schema --------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: Literal["categorical", "continuous"]
    cardinality: int = 0

    def __post_init__(self):
        if self.kind not in ("categorical", "continuous"):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class TabularSchema:
    columns: tuple[ColumnSpec, ...]
    target: str
    task: Literal["binary", "multiclass", "regression"] = "binary"
    n_classes: int = 2
    positional_encoding: bool = False

    def __post_init__(self):
        if not self.columns:
            raise SchemaError("schema needs at least one feature column")
        if self.target in {c.name for c in self.columns}:
            raise SchemaError(f"target {self.target!r} is also listed as a feature")
        if self.task not in ("binary", "multiclass", "regression"):
            raise SchemaError(f"unknown task {self.task!r}")

    @property
    def categorical(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind == "categorical")

    @property
    def continuous(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.kind == "continuous")

    @property
    def n_features(self) -> int:
        return len(self.columns)

    @property
    def n_outputs(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    def feature_order(self) -> list[ColumnSpec]:
        """Token order used by the model: categorical columns, then continuous."""
        return list(self.categorical) + list(self.continuous)

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind, "cardinality": c.cardinality} for c in self.columns],
            "target": {"name": self.target, "task": self.task, "n_classes": self.n_classes},
            "positional_encoding": self.positional_encoding,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> TabularSchema:
        try:
            cols = tuple(
                ColumnSpec(c["name"], c["kind"], int(c.get("cardinality", 0))) for c in obj["columns"]
            )
            target = obj["target"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc
        task = target.get("task", "binary")
        n_classes = int(target.get("n_classes", target.get("classes", 2 if task == "binary" else 0)))
        return cls(cols, target["name"], task, n_classes, bool(obj.get("positional_encoding", False)))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_schema(path) -> dict:
    """Read a schema file: {columns: [{name, kind}], target: {name, task}, positional_encoding}."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict) or "target" not in obj:
        raise SchemaError(f"{path}: schema must be an object with a 'target' entry")
    return obj


# -- raw table -----------------------------------------------------------------


@dataclass
class RawTable:
    header: list[str]
    cells: dict[str, list[str]]
    missing: dict[str, np.ndarray]
    kinds: dict[str, str]
    target: str
    task: str = "binary"
    positional_encoding: bool = False

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.cells.values()))) if self.cells else 0

    @property
    def features(self) -> list[str]:
        return [h for h in self.header if h != self.target]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, schema: dict | None = None, target: str | None = None) -> RawTable:
    """Read a CSV into string cells with per-cell missing flags.

    A column is categorical iff the schema declares it so or any non-missing
    cell fails to parse as a number.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CSVParseError(path, 1, "empty file") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise CSVParseError(path, reader.line_num,
                                    f"expected {len(header)} fields, found {len(row)}")
            rows.append([c.strip() for c in row])

    declared: dict[str, str] = {}
    task, positional = "binary", False
    if schema is not None:
        target = schema["target"]["name"]
        task = schema["target"].get("task", "binary")
        positional = bool(schema.get("positional_encoding", False))
        for col in schema.get("columns", []):
            declared[col["name"]] = col["kind"]
        unknown = [name for name in declared if name not in header]
        if unknown:
            raise SchemaError(f"schema columns not present in {path}: {unknown}")
    if target is None:
        target = header[-1]
    if target not in header:
        raise SchemaError(f"target column {target!r} not found in {path}")

    cells = {h: [r[i] for r in rows] for i, h in enumerate(header)}
    missing = {h: np.array([v in MISSING_MARKERS for v in cells[h]], dtype=bool) for h in header}
    kinds = {}
    for h in header:
        if h == target:
            continue
        if h in declared:
            kinds[h] = declared[h]
        else:
            numeric = all(_is_number(v) for v, miss in zip(cells[h], missing[h]) if not miss)
            kinds[h] = "continuous" if numeric else "categorical"
    return RawTable(header, cells, missing, kinds, target, task, positional)


# -- splits --------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    labeled: np.ndarray | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        return {"train": self.train, "val": self.val, "test": self.test,
                "labeled": self.labeled if self.labeled is not None else self.train}[name]

    def to_dict(self) -> dict:
        out = {"train": self.train.tolist(), "val": self.val.tolist(), "test": self.test.tolist()}
        if self.labeled is not None:
            out["labeled"] = self.labeled.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> Split:
        arr = lambda k: np.asarray(obj[k], dtype=np.int64)  # noqa: E731
        return cls(arr("train"), arr("val"), arr("test"), arr("labeled") if "labeled" in obj else None)


def split_sizes(m: int, fractions: Sequence[float]) -> list[int]:
    """Floor each share, give empty splits one row when m allows, then hand out
    the remainder by largest fractional part (earlier splits win ties)."""
    if any(f <= 0 for f in fractions):
        raise ValueError(f"split fractions must be positive, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")
    exact = [round(f * m, 9) for f in fractions]
    sizes = [math.floor(e) for e in exact]
    left = m - sum(sizes)
    if m >= len(fractions):
        for i, s in enumerate(sizes):
            if s == 0 and left > 0:
                sizes[i] = 1
                left -= 1
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - math.floor(exact[i])), i))
    for i in order[:left]:
        sizes[i] += 1
    return sizes


def make_split(m: int, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> Split:
    sizes = split_sizes(m, fractions)
    perm = np.random.default_rng(seed).permutation(m)
    a, b = sizes[0], sizes[0] + sizes[1]
    return Split(np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:]))


def choose_labeled(split: Split, labels: np.ndarray, count: int | None, seed: int = 0,
                   stratify: bool = True) -> Split:
    """Pick ``count`` labeled training rows, stratified by class where possible.

    ``count=None`` labels the whole training split.
    """
    train = split.train
    if count is None or count >= len(train):
        if count is not None and count > len(train):
            raise ValueError(f"labeled_count {count} exceeds train size {len(train)}")
        return replace(split, labeled=train.copy())
    if count < 1:
        raise ValueError("labeled_count must be >= 1")
    rng = np.random.default_rng([seed, 7919])
    y = labels[train]
    if stratify and np.issubdtype(y.dtype, np.integer):
        classes, counts = np.unique(y, return_counts=True)
        quota = np.floor(counts / counts.sum() * count).astype(int)
        quota = np.maximum(quota, np.minimum(1, counts))
        while quota.sum() > count:
            quota[np.argmax(quota)] -= 1
        rest = count - quota.sum()
        chosen = []
        for cls, q in zip(classes, quota):
            pool = train[y == cls]
            chosen.append(rng.choice(pool, size=q, replace=False))
        chosen = np.concatenate(chosen)
        if rest:
            pool = np.setdiff1d(train, chosen)
            chosen = np.concatenate([chosen, rng.choice(pool, size=rest, replace=False)])
        if len(np.unique(y[np.isin(train, chosen)])) < 2:
            log.warning("labeled subset of %d rows contains a single class", count)
    else:
        chosen = rng.choice(train, size=count, replace=False)
    return replace(split, labeled=np.sort(chosen))


# -- encoded dataset -----------------------------------------------------------


@dataclass
class Batch:
    cat: np.ndarray
    cont: np.ndarray
    labels: np.ndarray
    rows: np.ndarray
    cont_missing: np.ndarray | None = None

    def __post_init__(self):
        if len(self.rows) < 1:
            raise ValueError("a batch needs at least one row")

    @property
    def size(self) -> int:
        return len(self.rows)

    def take(self, order: np.ndarray) -> Batch:
        return Batch(self.cat[order], self.cont[order], self.labels[order], self.rows[order],
                     None if self.cont_missing is None else self.cont_missing[order])


@dataclass
class Dataset:
    schema: TabularSchema
    cat: np.ndarray
    cont: np.ndarray
    cont_missing: np.ndarray
    labels: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    encoders: dict[str, list[str]] = field(default_factory=dict)
    classes: list[str] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def encode(self, column: str, value: str) -> int:
        cats = self.encoders[column]
        try:
            return cats.index(value) + 1
        except ValueError:
            return MISSING_ID

    def decode(self, column: str, ident: int) -> str | None:
        return None if ident == MISSING_ID else self.encoders[column][ident - 1]

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(self.cat[idx], self.cont[idx], self.labels[idx], idx, self.cont_missing[idx])

    def with_rows(self, indices, batch: Batch) -> Dataset:
        """Copy of the dataset with ``indices`` overwritten by ``batch`` values."""
        cat, cont, miss = self.cat.copy(), self.cont.copy(), self.cont_missing.copy()
        cat[indices], cont[indices] = batch.cat, batch.cont
        if batch.cont_missing is not None:
            miss[indices] = batch.cont_missing
        return replace(self, cat=cat, cont=cont, cont_missing=miss)


def _encode_labels(raw: RawTable) -> tuple[np.ndarray, list[str]]:
    col = raw.cells[raw.target]
    if raw.missing[raw.target].any():
        line = int(np.argmax(raw.missing[raw.target])) + 2
        raise SchemaError(f"target {raw.target!r} is missing on line {line}")
    if raw.task == "regression":
        return np.array([float(v) for v in col]), []
    values = sorted(set(col), key=lambda v: (0, float(v), v) if _is_number(v) else (1, 0.0, v))
    lookup = {v: i for i, v in enumerate(values)}
    return np.array([lookup[v] for v in col], dtype=np.int64), values


def fit_transform(raw: RawTable, split: Split, schema: dict | None = None) -> Dataset:
    """Encode a raw table, fitting encoders and normalisation on ``split.train`` only."""
    train = np.asarray(split.train)
    if len(train) == 0:
        raise ValueError("training split is empty")
    labels, classes = _encode_labels(raw)
    task = raw.task
    n_classes = len(classes) if task != "regression" else 0
    if task == "binary" and n_classes != 2:
        raise SchemaError(f"binary target {raw.target!r} has {n_classes} distinct values")
    if schema is not None:
        n_classes = int(schema["target"].get("n_classes", schema["target"].get("classes", n_classes)))

    m = raw.n_rows
    cat_cols, cont_cols, encoders, dropped = [], [], {}, []
    cat_arrays, cont_arrays, miss_arrays, means, stds = [], [], [], [], []
    for name in raw.features:
        miss = raw.missing[name]
        if miss[train].all():
            raise SchemaError(f"column {name!r} has no values in the training split")
        values = raw.cells[name]
        if raw.kinds[name] == "categorical":
            seen = sorted({values[i] for i in train if not miss[i]})
            lookup = {v: i + 1 for i, v in enumerate(seen)}
            ids = np.array([MISSING_ID if miss[i] else lookup.get(values[i], MISSING_ID) for i in range(m)],
                           dtype=np.int64)
            encoders[name] = seen
            cat_cols.append(ColumnSpec(name, "categorical", len(seen) + 1))
            cat_arrays.append(ids)
        else:
            try:
                x = np.array([np.nan if miss[i] else float(values[i]) for i in range(m)])
            except ValueError as exc:
                raise SchemaError(f"column {name!r} is declared continuous but holds text: {exc}") from exc
            tr = x[train][~miss[train]]
            mu, sd = float(tr.mean()), float(tr.std())
            if sd == 0.0:
                log.warning("dropping zero-variance column %r", name)
                dropped.append(name)
                continue
            z = (x - mu) / sd
            z[miss] = 0.0
            cont_cols.append(ColumnSpec(name, "continuous"))
            cont_arrays.append(z)
            miss_arrays.append(miss.copy())
            means.append(mu)
            stds.append(sd)

    columns = cat_cols + cont_cols
    order = {name: i for i, name in enumerate(raw.features)}
    columns.sort(key=lambda c: order[c.name])
    ts = TabularSchema(tuple(columns), raw.target, task, n_classes, raw.positional_encoding)
    return Dataset(
        schema=ts,
        cat=np.stack(cat_arrays, axis=1) if cat_arrays else np.zeros((m, 0), dtype=np.int64),
        cont=np.stack(cont_arrays, axis=1) if cont_arrays else np.zeros((m, 0)),
        cont_missing=np.stack(miss_arrays, axis=1) if miss_arrays else np.zeros((m, 0), dtype=bool),
        labels=labels,
        mean=np.array(means),
        std=np.array(stds),
        encoders=encoders,
        classes=classes,
        dropped=dropped,
    )


def from_arrays(cat: np.ndarray, cont: np.ndarray, labels: np.ndarray, cardinalities: Sequence[int],
                task: str = "binary", n_classes: int = 2, positional_encoding: bool = False) -> Dataset:
    """Wrap already-encoded arrays (ids with 0 = missing, normalised floats) as a Dataset."""
    cat = np.asarray(cat, dtype=np.int64).reshape(len(labels), -1)
    cont = np.asarray(cont, dtype=np.float64).reshape(len(labels), -1)
    cols = [ColumnSpec(f"cat{j}", "categorical", int(k)) for j, k in enumerate(cardinalities)]
    cols += [ColumnSpec(f"num{j}", "continuous") for j in range(cont.shape[1])]
    schema = TabularSchema(tuple(cols), "target", task, n_classes, positional_encoding)
    return Dataset(schema, cat, cont, np.zeros(cont.shape, dtype=bool), np.asarray(labels),
                   np.zeros(cont.shape[1]), np.ones(cont.shape[1]),
                   {c.name: [str(i) for i in range(1, c.cardinality)] for c in cols if c.kind == "categorical"},
                   [str(i) for i in range(n_classes)])


# -- batching and corruption ---------------------------------------------------


def batches(dataset: Dataset, indices, batch_size: int = 256, shuffle: bool = False,
            seed: int = 0, epoch: int = 0) -> Iterator[Batch]:
    """Yield batches over ``indices``; the final partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("cannot batch an empty index list")
    if shuffle:
        idx = idx[np.random.default_rng([seed, epoch]).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        yield dataset.batch(idx[start:start + batch_size])


def corrupt(batch: Batch, mode: Literal["replace", "missing"], fraction: float,
            rng: np.random.Generator) -> Batch:
    """Replace (CutMix rule, partners within the batch) or blank a share of cells."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"corruption fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return batch
    if mode == "replace":
        from .augment import cutmix

        return cutmix(batch, fraction, rng).batch
    if mode != "missing":
        raise ValueError(f"unknown corruption mode {mode!r}")
    cat_hit = rng.random(batch.cat.shape) < fraction
    cont_hit = rng.random(batch.cont.shape) < fraction
    missing = batch.cont_missing if batch.cont_missing is not None else np.zeros(batch.cont.shape, bool)
    return Batch(np.where(cat_hit, MISSING_ID, batch.cat), np.where(cont_hit, 0.0, batch.cont),
                 batch.labels, batch.rows, missing | cont_hit)


# -- bundles -------------------------------------------------------------------


BUNDLE_MANIFEST = "manifest.json"
SPLIT_FILE = "split.json"


def save_bundle(dataset: Dataset, split: Split, out_dir, extra: dict | None = None) -> Path:
    """Write the encoded dataset as raw little-endian arrays plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "cat": dataset.cat.astype("<i8"),
        "cont": dataset.cont.astype("<f8"),
        "cont_missing": dataset.cont_missing.astype("u1"),
        "labels": dataset.labels.astype("<f8" if dataset.schema.task == "regression" else "<i8"),
    }
    table = write_arrays(out / "arrays.bin", arrays)
    manifest = {
        "format": "saint-bundle/1",
        "schema": dataset.schema.to_dict(),
        "schema_hash": dataset.schema.hash(),
        "n_rows": dataset.n_rows,
        "normalization": {"mean": dataset.mean.tolist(), "std": dataset.std.tolist()},
        "encoders": dataset.encoders,
        "classes": dataset.classes,
        "dropped": dataset.dropped,
        "arrays": table,
        **(extra or {}),
    }
    _dump_json(out / BUNDLE_MANIFEST, manifest)
    _dump_json(out / SPLIT_FILE, split.to_dict())
    return out


def load_bundle(bundle_dir) -> tuple[Dataset, Split]:
    path = Path(bundle_dir)
    with open(path / BUNDLE_MANIFEST) as fh:
        manifest = json.load(fh)
    arrays = read_arrays(path / "arrays.bin", manifest["arrays"])
    schema = TabularSchema.from_dict(manifest["schema"])
    if schema.hash() != manifest["schema_hash"]:
        raise SchemaError(f"{path}: schema hash does not match manifest")
    ds = Dataset(
        schema=schema,
        cat=arrays["cat"],
        cont=arrays["cont"],
        cont_missing=arrays["cont_missing"].astype(bool),
        labels=arrays["labels"],
        mean=np.array(manifest["normalization"]["mean"]),
        std=np.array(manifest["normalization"]["std"]),
        encoders=manifest["encoders"],
        classes=manifest["classes"],
        dropped=manifest.get("dropped", []),
    )
    with open(path / SPLIT_FILE) as fh:
        split = Split.from_dict(json.load(fh))
    return ds, split


def _dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
