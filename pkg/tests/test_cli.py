import csv
import json

import numpy as np
import pytest

from saint.cli import main
from saint.synthetic import write_smoke

FAST = ["--dim", "8", "--set", "model.heads=2", "--epochs", "2", "--batch-size", "64"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert len(lines) == 1, out
    return code, json.loads(lines[0])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, schema = write_smoke(root, m=160, seed=0)
    assert main(["prepare", "--data", str(data), "--schema", str(schema), "--out", str(root / "bundle")]) == 0
    return root, data, schema


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_prepare_default_split_and_repeatability(workspace, tmp_path, capsys):
    root, data, schema = workspace
    code, body = run(capsys, "prepare", "--data", data, "--schema", schema, "--out", tmp_path / "b1")
    assert code == 0 and body["split"] == {"train": 104, "val": 24, "test": 32}
    run(capsys, "prepare", "--data", data, "--schema", schema, "--out", tmp_path / "b2")
    assert (tmp_path / "b1/split.json").read_bytes() == (tmp_path / "b2/split.json").read_bytes()
    assert (tmp_path / "b1/arrays.bin").read_bytes() == (tmp_path / "b2/arrays.bin").read_bytes()


def test_prepare_without_schema_names_the_flag(workspace, tmp_path, capsys):
    _, data, _ = workspace
    code, body = run(capsys, "prepare", "--data", data, "--out", tmp_path / "b")
    assert code == 2 and "--schema" in body["error"]
    code, body = run(capsys, "prepare", "--data", data, "--schema", tmp_path / "nope.json", "--out", tmp_path / "b")
    assert code == 2 and "--schema" in body["error"]


def test_prepare_reports_csv_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,y\n1,2,0\n1,2\n")
    schema = tmp_path / "s.json"
    schema.write_text(json.dumps({"columns": [], "target": {"name": "y"}}))
    code, body = run(capsys, "prepare", "--data", bad, "--schema", schema, "--out", tmp_path / "b")
    assert code == 2 and "bad.csv:3" in body["error"]


def test_train_writes_artifacts_and_is_repeatable(workspace, tmp_path, capsys):
    root, _, _ = workspace
    code, first = run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "a", *FAST)
    assert code == 0 and first["metrics"]["test"]["n"] == 32
    _, second = run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "b", *FAST)
    assert first == second
    assert (tmp_path / "a/metrics.json").read_bytes() == (tmp_path / "b/metrics.json").read_bytes()
    trace = read_csv(tmp_path / "a/trace.csv")
    assert trace[0][0] == "epoch" and len(trace) == 3
    for name in ("best.json", "best.bin", "report.json"):
        assert (tmp_path / "a" / name).exists()


def test_config_file_and_flag_precedence(workspace, tmp_path, capsys):
    root, _, _ = workspace
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 3, "model": {"dim": 8, "heads": 2}, "train": {"epochs": 1, "batch_size": 64}}))
    code, body = run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "o", "--config", cfg,
                     "--epochs", "2", "--labeled", "20")
    assert code == 0 and body["seed"] == 3 and body["labeled_count"] == 20
    report = json.loads((tmp_path / "o/report.json").read_text())
    assert len(report["trace"]) == 2


def test_bad_config_key_is_a_user_error(workspace, tmp_path, capsys):
    root, _, _ = workspace
    code, _ = run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "o", "--set", "model.wings=2")
    assert code == 2
    code, _ = run(capsys, "pretrain", "--bundle", root / "bundle", "--out", tmp_path / "o", "--ablate", "colour=red")
    assert code == 2


def test_pretrain_finetune_eval_pipeline(workspace, tmp_path, capsys):
    root, _, _ = workspace
    bundle = root / "bundle"
    code, pt = run(capsys, "pretrain", "--bundle", bundle, "--out", tmp_path / "pt", *FAST,
                   "--ablate", "proj_mode=shared,loss=both,aug=mixup", "--checkpoint-every", "1")
    assert code == 0 and pt["steps"] == 4 and pt["pretrain_config"]["aug_mode"] == "mixup"
    assert (tmp_path / "pt/epoch_002.json").exists()
    trace = read_csv(tmp_path / "pt/pretrain_trace.csv")
    assert trace[0] == ["epoch", "step", "contrastive", "denoising", "total"] and len(trace) == 5
    code, ft = run(capsys, "finetune", "--bundle", bundle, "--checkpoint", tmp_path / "pt/pretrained",
                   "--out", tmp_path / "ft", "--epochs", "2", "--labeled", "50")
    assert code == 0 and ft["labeled_count"] == 50
    code, ev1 = run(capsys, "eval", "--bundle", bundle, "--checkpoint", tmp_path / "ft/best",
                    "--sweep-batch", "8,16,32", "--out", tmp_path / "sweep.csv")
    _, ev2 = run(capsys, "eval", "--bundle", bundle, "--checkpoint", tmp_path / "ft/best",
                 "--sweep-batch", "8,16,32")
    assert code == 0 and ev1 == ev2
    assert ev1["metrics"]["auroc"] == ft["metrics"]["test"]["auroc"]
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0][0] == "eval_batch_size" and [r[0] for r in rows[1:]] == ["8", "16", "32"]


def test_eval_missing_checkpoint_exits_4(workspace, capsys, tmp_path):
    root, _, _ = workspace
    code, body = run(capsys, "eval", "--bundle", root / "bundle", "--checkpoint", tmp_path / "missing")
    assert code == 4 and body["status"] == "error"


def test_eval_schema_mismatch_exits_4(workspace, tmp_path, capsys):
    root, _, _ = workspace
    run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "t", *FAST)
    data, schema = write_smoke(tmp_path / "other", m=60, seed=1)
    obj = json.loads(schema.read_text())
    obj["columns"] = obj["columns"][:-1]
    obj["columns"].append({"name": "weight", "kind": "categorical"})
    schema.write_text(json.dumps(obj))
    run(capsys, "prepare", "--data", data, "--schema", schema, "--out", tmp_path / "ob")
    code, _ = run(capsys, "eval", "--bundle", tmp_path / "ob", "--checkpoint", tmp_path / "t/best")
    assert code == 4


def test_divergence_exits_3(workspace, tmp_path, capsys):
    root, _, _ = workspace
    code, body = run(capsys, "train", "--bundle", root / "bundle", "--out", tmp_path / "d", *FAST[:4],
                     "--epochs", "3", "--lr", "1e30")
    assert code == 3 and isinstance(body["step"], int)


def test_robustness_rows_and_baseline(workspace, tmp_path, capsys):
    root, _, _ = workspace
    bundle = root / "bundle"
    code, body = run(capsys, "robustness", "--bundle", bundle, "--out", tmp_path / "r", *FAST,
                     "--fractions", "0,0.5", "--mode", "missing")
    assert code == 0 and len(body["rows"]) == 2
    rows = read_csv(tmp_path / "r/robustness.csv")
    assert rows[0] == ["fraction", "auroc"] and len(rows) == 3
    _, base = run(capsys, "train", "--bundle", bundle, "--out", tmp_path / "t", *FAST)
    assert body["rows"][0]["auroc"] == base["metrics"]["test"]["auroc"]
    code, _ = run(capsys, "robustness", "--bundle", bundle, "--out", tmp_path / "r2", "--fractions", "1.5")
    assert code == 2


def test_export_attention(workspace, tmp_path, capsys):
    root, _, _ = workspace
    bundle = root / "bundle"
    run(capsys, "train", "--bundle", bundle, "--out", tmp_path / "t", *FAST)
    code, body = run(capsys, "export-attention", "--bundle", bundle, "--checkpoint", tmp_path / "t/best",
                     "--out", tmp_path / "attn", "--per-class", "10")
    assert code == 0 and len(body["rows"]) == 20
    inter = read_csv(tmp_path / "attn/intersample_stage0.csv")
    weights = np.array([[float(v) for v in r[2:]] for r in inter[1:]])
    assert weights.shape == (2 * 20, 20)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-5)
    values = read_csv(tmp_path / "attn/intersample_values_stage0.csv")
    assert values[0][:2] == ["row", "label"] and len(values) == 21
    selfw = read_csv(tmp_path / "attn/self_attention_stage0.csv")
    assert selfw[0][:3] == ["row", "head", "query"] and selfw[0][3] == "[CLS]"
    np.testing.assert_allclose([sum(float(v) for v in r[3:]) for r in selfw[1:]], 1.0, atol=1e-5)
    code, _ = run(capsys, "export-attention", "--bundle", bundle, "--checkpoint", tmp_path / "nope",
                  "--out", tmp_path / "x")
    assert code == 4
