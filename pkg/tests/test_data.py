import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saint.data import (MISSING_ID, CSVParseError, SchemaError, batches, choose_labeled, corrupt,
                        fit_transform, load_bundle, load_csv, make_split, save_bundle, split_sizes)


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


TABLE = """colour,size,weight,label
red,1.0,2,yes
blue,NA,4,no
?,3.0,6,yes
green,4.0,,no
red,5.0,8,yes
"""


def test_missing_markers_are_flagged(tmp_path):
    raw = load_csv(write(tmp_path, TABLE))
    assert raw.missing["colour"].tolist() == [False, False, True, False, False]
    assert raw.missing["size"].tolist() == [False, True, False, False, False]
    assert raw.missing["weight"].tolist() == [False, False, False, True, False]
    assert raw.kinds == {"colour": "categorical", "size": "continuous", "weight": "continuous"}
    assert raw.target == "label"


def test_schema_kind_overrides_inference(tmp_path):
    schema = {"columns": [{"name": "weight", "kind": "categorical"}], "target": {"name": "label"}}
    raw = load_csv(write(tmp_path, TABLE), schema)
    assert raw.kinds["weight"] == "categorical"
    assert raw.kinds["size"] == "continuous"


def test_ragged_row_reports_line(tmp_path):
    with pytest.raises(CSVParseError, match=r"t\.csv:3:") as info:
        load_csv(write(tmp_path, "a,b,y\n1,2,0\n3,1\n"))
    assert info.value.line == 3


def test_unknown_schema_column_is_rejected(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, TABLE), {"columns": [{"name": "nope", "kind": "continuous"}],
                                          "target": {"name": "label"}})


def test_fit_transform_encodes_train_only(tmp_path):
    raw = load_csv(write(tmp_path, TABLE))
    from saint.data import Split
    split = Split(np.array([0, 1, 2]), np.array([3]), np.array([4]))
    ds = fit_transform(raw, split)
    # train sees red and blue; green (row 3) is unseen -> 0, ? is missing -> 0
    assert ds.encoders["colour"] == ["blue", "red"]
    assert ds.schema.categorical[0].cardinality == 3
    assert ds.cat[:, 0].tolist() == [2, 1, MISSING_ID, MISSING_ID, 2]
    # weight train values 2, 4, 6
    col = [c.name for c in ds.schema.continuous].index("weight")
    w = ds.cont[:, col]
    ref = (np.array([2.0, 4.0, 6.0]) - 4.0) / np.sqrt(8.0 / 3.0)
    np.testing.assert_allclose(w[:3], ref, atol=1e-4)
    np.testing.assert_allclose(w[:3], [-1.2247, 0.0, 1.2247], atol=1e-4)
    assert w[3] == 0.0 and ds.cont_missing[3, col]


def test_zero_variance_column_is_dropped(tmp_path, caplog):
    raw = load_csv(write(tmp_path, "a,b,y\n1,5,0\n1,6,1\n1,7,0\n2,8,1\n"))
    from saint.data import Split
    ds = fit_transform(raw, Split(np.array([0, 1, 2]), np.array([3]), np.array([], dtype=np.int64)))
    assert ds.dropped == ["a"]
    assert [c.name for c in ds.schema.columns] == ["b"]


def test_all_missing_train_column_raises(tmp_path):
    raw = load_csv(write(tmp_path, "a,b,y\nNA,5,0\nNA,6,1\n3,7,0\n"))
    from saint.data import Split
    with pytest.raises(SchemaError, match="'a'"):
        fit_transform(raw, Split(np.array([0, 1]), np.array([2]), np.array([], dtype=np.int64)))


def test_encode_decode_round_trip(tmp_path):
    raw = load_csv(write(tmp_path, TABLE))
    ds = fit_transform(raw, make_split(5, seed=1))
    for value in ds.encoders["colour"]:
        assert ds.decode("colour", ds.encode("colour", value)) == value
    assert ds.encode("colour", "purple") == MISSING_ID
    assert ds.decode("colour", MISSING_ID) is None


def test_default_split_sizes():
    assert split_sizes(100, (0.65, 0.15, 0.20)) == [65, 15, 20]
    assert split_sizes(3, (0.65, 0.15, 0.20)) == [1, 1, 1]


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 5000), st.integers(0, 2**31 - 1))
def test_split_is_a_partition(m, seed):
    s = make_split(m, seed=seed)
    sizes = [len(s.train), len(s.val), len(s.test)]
    assert sum(sizes) == m and min(sizes) >= 1
    joined = np.concatenate([s.train, s.val, s.test])
    assert np.array_equal(np.sort(joined), np.arange(m))
    for got, share in zip(sizes, (0.65, 0.15, 0.20)):
        assert abs(got - share * m) <= 1.0 + 1e-9 or m < 10


def test_split_is_deterministic():
    a, b = make_split(200, seed=4), make_split(200, seed=4)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert not np.array_equal(make_split(200, seed=5).train, a.train)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_no_leakage_from_held_out_rows(seed):
    rng = np.random.default_rng(seed)
    m = 40
    x = rng.standard_normal(m)
    cats = rng.choice(["a", "b", "c", "d"], size=m)
    split = make_split(m, seed=seed)
    from saint.data import RawTable

    def raw_for(xv, cv):
        cells = {"x": [repr(float(v)) for v in xv], "c": list(cv), "y": [str(i % 2) for i in range(m)]}
        miss = {k: np.zeros(m, bool) for k in cells}
        return RawTable(["x", "c", "y"], cells, miss, {"x": "continuous", "c": "categorical"}, "y")

    base = fit_transform(raw_for(x, cats), split)
    held = np.concatenate([split.val, split.test])
    x2, c2 = x.copy(), cats.copy()
    x2[held] = rng.standard_normal(len(held)) * 100
    c2[held] = "zzz"
    moved = fit_transform(raw_for(x2, c2), split)
    assert base.mean.tolist() == moved.mean.tolist() and base.std.tolist() == moved.std.tolist()
    assert base.encoders == moved.encoders


def test_batches_keep_partial_final_batch():
    from helpers import random_dataset
    ds = random_dataset(m=10)
    sizes = [b.size for b in batches(ds, np.arange(10), 4)]
    assert sizes == [4, 4, 2]
    rows = np.concatenate([b.rows for b in batches(ds, np.arange(10), 4, shuffle=True, seed=3, epoch=1)])
    assert sorted(rows.tolist()) == list(range(10))


def test_shuffle_depends_on_seed_and_epoch():
    from helpers import random_dataset
    ds = random_dataset(m=50)
    order = lambda s, e: np.concatenate([b.rows for b in batches(ds, np.arange(50), 8, True, s, e)])  # noqa: E731
    assert np.array_equal(order(1, 1), order(1, 1))
    assert not np.array_equal(order(1, 1), order(1, 2))


def test_corrupt_zero_is_identity_and_rates_match():
    from helpers import random_dataset
    ds = random_dataset(m=400, n_cat=5, n_cont=5, card=50)
    b = ds.batch(np.arange(400))
    assert corrupt(b, "replace", 0.0, np.random.default_rng(0)) is b
    gone = corrupt(b, "missing", 0.3, np.random.default_rng(0))
    rate = np.mean(np.concatenate([(gone.cat == 0).ravel(), gone.cont_missing.ravel()]))
    assert abs(rate - 0.3) < 0.03
    assert np.all(gone.cont[gone.cont_missing] == 0.0)
    swapped = corrupt(b, "replace", 0.5, np.random.default_rng(1))
    assert abs(np.mean(swapped.cat != b.cat) - 0.5 * (1 - 1 / 50)) < 0.05


def test_choose_labeled_is_stratified_and_deterministic():
    labels = np.array([0] * 80 + [1] * 20)
    split = make_split(100, (0.8, 0.1, 0.1), seed=0)
    a = choose_labeled(split, labels, 10, seed=2)
    b = choose_labeled(split, labels, 10, seed=2)
    assert np.array_equal(a.labeled, b.labeled) and len(a.labeled) == 10
    assert set(a.labeled) <= set(split.train)
    assert len(set(labels[a.labeled])) == 2


def test_bundle_round_trip(tmp_path):
    raw = load_csv(write(tmp_path, TABLE))
    split = make_split(5, seed=0)
    ds = fit_transform(raw, split)
    save_bundle(ds, split, tmp_path / "b")
    ds2, split2 = load_bundle(tmp_path / "b")
    assert ds2.schema == ds.schema
    for name in ("cat", "cont", "cont_missing", "labels"):
        assert np.array_equal(getattr(ds, name), getattr(ds2, name))
    assert split2.to_dict() == split.to_dict()
