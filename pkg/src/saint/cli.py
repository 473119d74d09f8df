"""Command line entry point: ``python -m saint <command> ...``.

Every command prints exactly one JSON line on stdout; logs go to stderr.
Exit codes: 0 success, 2 user/config error, 3 numeric failure, 4 artifact
incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint, save_checkpoint
from .data import (DEFAULT_FRACTIONS, CSVParseError, SchemaError, choose_labeled, corrupt, fit_transform,
                   load_bundle, load_csv, load_schema, make_split, save_bundle)
from .model import ModelConfig, SaintModel
from .pretrain import PretrainConfig, pretrain, write_trace_csv
from .storage import ArrayFileError
from .train import TrainConfig, evaluate, finetune, train_supervised

log = logging.getLogger("saint")

EXIT_OK, EXIT_USER, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4
DEFAULT_FRACTIONS_ROBUST = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_SWEEP = (32, 64, 128, 256)

# --ablate keys -> (config section, field)
ABLATIONS = {
    "proj_mode": ("pretrain", "proj_mode"),
    "loss": ("pretrain", "loss_mode"),
    "aug": ("pretrain", "aug_mode"),
    "proj_input": ("pretrain", "proj_input"),
    "cont_embedding": ("model", "cont_embedding"),
}


class UsageError(Exception):
    """Bad flags, configs or paths; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -------------------------------------------------------------------


def _existing(path: str | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: {path} does not exist")
    return p


def _floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _ints(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return {"true": True, "false": False, "none": None}.get(value.lower(), value)


def _config_kwargs(cls, values: dict, section: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise UsageError(f"unknown {section} config keys: {unknown}")
    return dict(values)


def build_configs(args) -> tuple[ModelConfig, TrainConfig, PretrainConfig]:
    """Merge the JSON config file with command-line overrides."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(_existing(args.config, "--config").read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config {args.config}:{exc.lineno}: {exc.msg}") from None
    sections = {k: dict(raw.get(k, {})) for k in ("model", "train", "pretrain")}
    seed = args.seed if args.seed is not None else raw.get("seed", 0)

    for item in (getattr(args, "ablate", None) or "").split(","):
        if not item.strip():
            continue
        key, _, value = item.partition("=")
        if key.strip() not in ABLATIONS or not value:
            raise UsageError(f"--ablate: unknown axis {item!r}; expected one of {sorted(ABLATIONS)}")
        section, name = ABLATIONS[key.strip()]
        sections[section][name] = value.strip()

    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        section, _, name = key.partition(".")
        if section not in sections or not name or not value:
            raise UsageError(f"--set expects section.field=value, got {item!r}")
        sections[section][name] = _coerce(value)

    model_kw = sections["model"]
    if getattr(args, "variant", None):
        model_kw["variant"] = args.variant
    if getattr(args, "dim", None):
        model_kw["dim"] = args.dim
    train_kw, pre_kw = sections["train"], sections["pretrain"]
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
                      ("clip_norm", "clip_norm")):
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[key] = value
            pre_kw[key] = value
    if getattr(args, "eval_batch_size", None) is not None:
        train_kw["eval_batch_size"] = args.eval_batch_size
    labeled = getattr(args, "labeled", None)
    if labeled is not None:
        train_kw["labeled_count"] = None if labeled == "all" else int(labeled)
    train_kw["seed"] = pre_kw["seed"] = seed

    try:
        variant = model_kw.pop("variant", "saint")
        model = ModelConfig.for_variant(variant, **_config_kwargs(ModelConfig, model_kw, "model"))
        train = TrainConfig(**_config_kwargs(TrainConfig, train_kw, "train"))
        pre = PretrainConfig(**_config_kwargs(PretrainConfig, pre_kw, "pretrain"))
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    return model, train, pre


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_bundle(args):
    return load_bundle(_existing(args.bundle, "--bundle"))


def _load_ckpt(args, dataset=None):
    expected = dataset.schema.hash() if dataset is not None else None
    return load_checkpoint(args.checkpoint, expected_schema_hash=expected)


def _train_trace_rows(report):
    keys = sorted({k for row in report.trace for k in row} - {"epoch"})
    return ["epoch", *keys], [[row["epoch"], *(row.get(k, "") for k in keys)] for row in report.trace]


def _save_training_outputs(out: Path, model: SaintModel, report, meta: dict) -> None:
    save_checkpoint(out / "best", model, meta=meta)
    _write_json(out / "report.json", report.to_dict())
    _write_json(out / "metrics.json", report.summary())
    header, rows = _train_trace_rows(report)
    _write_csv(out / "trace.csv", header, rows)


# -- commands ------------------------------------------------------------------


def cmd_prepare(args) -> dict:
    schema_path = _existing(args.schema, "--schema")
    data_path = _existing(args.data, "--data")
    fractions = _floats(args.split, "--split") if args.split else DEFAULT_FRACTIONS
    if len(fractions) != 3:
        raise UsageError("--split needs three fractions (train,val,test)")
    schema = load_schema(schema_path)
    raw = load_csv(data_path, schema)
    try:
        split = make_split(raw.n_rows, fractions, args.seed)
    except ValueError as exc:
        raise UsageError(f"--split: {exc}") from None
    dataset = fit_transform(raw, split, schema)
    out = save_bundle(dataset, split, args.out, extra={"seed": args.seed, "fractions": list(fractions)})
    return {"bundle": str(out), "rows": dataset.n_rows, "schema_hash": dataset.schema.hash(),
            "split": {k: int(len(split[k])) for k in ("train", "val", "test")},
            "dropped": dataset.dropped}


def cmd_train(args) -> dict:
    dataset, split = _load_bundle(args)
    model_cfg, train_cfg, _ = build_configs(args)
    model = SaintModel(dataset.schema, model_cfg, seed=train_cfg.seed)
    _, report = train_supervised(model, dataset, split, train_cfg)
    out = Path(args.out)
    _save_training_outputs(out, model, report, {"command": "train", "train_config": train_cfg.__dict__})
    return report.summary()


def cmd_pretrain(args) -> dict:
    dataset, split = _load_bundle(args)
    model_cfg, _, pre_cfg = build_configs(args)
    model = SaintModel(dataset.schema, model_cfg, seed=pre_cfg.seed)
    out = Path(args.out)
    every = args.checkpoint_every

    def on_epoch(epoch, m, heads):
        if every and epoch % every == 0:
            save_checkpoint(out / f"epoch_{epoch:03d}", m, extra=_head_arrays(heads), meta={"epoch": epoch})

    result = pretrain(model, dataset, split.train, pre_cfg, on_epoch)
    save_checkpoint(out / "pretrained", model, extra=_head_arrays(result.heads),
                    meta={"command": "pretrain", "pretrain_config": pre_cfg.to_dict(), "epochs": pre_cfg.epochs})
    write_trace_csv(out / "pretrain_trace.csv", result.trace)
    last = result.trace[-1]
    summary = {"steps": len(result.trace), "epochs": pre_cfg.epochs, "seed": pre_cfg.seed,
               "final": {k: last[k] for k in ("contrastive", "denoising", "total")},
               "pretrain_config": pre_cfg.to_dict()}
    _write_json(out / "metrics.json", summary)
    return summary


def _head_arrays(heads) -> dict:
    return {f"heads.{k}": v for k, v in heads.state_dict().items()}


def cmd_finetune(args) -> dict:
    dataset, split = _load_bundle(args)
    ckpt = _load_ckpt(args, dataset)
    _, train_cfg, _ = build_configs(args)
    if args.variant and ckpt.config.variant != ModelConfig.for_variant(args.variant).variant:
        raise UsageError(f"--variant {args.variant} disagrees with checkpoint variant {ckpt.config.variant}")
    model, _, report = finetune(ckpt, dataset, split, train_cfg)
    _save_training_outputs(Path(args.out), model, report, {"command": "finetune"})
    return report.summary()


def cmd_eval(args) -> dict:
    dataset, split = _load_bundle(args)
    ckpt = _load_ckpt(args, dataset)
    model = model_from_checkpoint(ckpt)
    idx = split[args.split]
    if len(idx) == 0:
        raise UsageError(f"--split {args.split} is empty")
    result = {"split": args.split, "metrics": evaluate(model, dataset, idx, args.eval_batch_size)}
    if args.sweep_batch:
        sizes = _ints(args.sweep_batch, "--sweep-batch")
        if any(s < 1 for s in sizes):
            raise UsageError("--sweep-batch sizes must be >= 1")
        rows = [{"eval_batch_size": s, **evaluate(model, dataset, idx, s)} for s in sizes]
        result["sweep"] = rows
        if args.out:
            keys = [k for k in rows[0] if k != "n"]
            _write_csv(Path(args.out), keys, ([r.get(k) for k in keys] for r in rows))
    return result


def cmd_robustness(args) -> dict:
    dataset, split = _load_bundle(args)
    fractions = _floats(args.fractions, "--fractions") if args.fractions else DEFAULT_FRACTIONS_ROBUST
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise UsageError(f"--fractions must lie in [0, 1], got {fractions}")
    model_cfg, train_cfg, _ = build_configs(args)
    if args.checkpoint:
        model_cfg = _load_ckpt(args, dataset).config
    if split.labeled is None:
        split = choose_labeled(split, dataset.labels, train_cfg.labeled_count, train_cfg.seed)
    rows = []
    for i, fraction in enumerate(fractions):
        rng = np.random.default_rng([train_cfg.seed, 11, i])
        train_rows = split.train
        noisy = corrupt(dataset.batch(train_rows), args.mode, fraction, rng)
        corrupted = dataset.with_rows(train_rows, noisy)
        model = SaintModel(dataset.schema, model_cfg, seed=train_cfg.seed)
        _, report = train_supervised(model, corrupted, split, train_cfg, split_eval=("test",))
        test = report.metrics["test"]
        rows.append({"fraction": fraction, "auroc": test.get("auroc"), "accuracy": test["accuracy"]})
        log.info("%s fraction %.2f: test auroc %s", args.mode, fraction, test.get("auroc"))
    if args.out:
        _write_csv(Path(args.out), ["fraction", "auroc"], ([r["fraction"], r["auroc"]] for r in rows))
    return {"mode": args.mode, "rows": rows}


def _pick_rows(dataset, split, args) -> np.ndarray:
    if args.rows:
        rows = np.array(_ints(args.rows, "--rows"), dtype=np.int64)
        if rows.min() < 0 or rows.max() >= dataset.n_rows:
            raise UsageError(f"--rows must lie in [0, {dataset.n_rows})")
        return rows
    # default: up to `per_class` test rows from every class
    pool = split.test
    picks = [pool[dataset.labels[pool] == c][:args.per_class] for c in np.unique(dataset.labels[pool])]
    return np.sort(np.concatenate(picks))


def cmd_export_attention(args) -> dict:
    dataset, split = _load_bundle(args)
    model = model_from_checkpoint(_load_ckpt(args, dataset))
    model.eval()
    rows = _pick_rows(dataset, split, args)
    with ad.no_grad():
        _, record = model.forward(dataset.batch(rows), capture=True)
    out = Path(args.out)
    tokens = model.token_columns()
    files = []
    for s, w in enumerate(record.self_attention):
        _check_rows(w)
        path = out / f"self_attention_stage{s}.csv"
        _write_csv(path, ["row", "head", "query", *tokens],
                   ([int(rows[i]), h, tokens[q], *w[i, h, q]] for i in range(w.shape[0])
                    for h in range(w.shape[1]) for q in range(w.shape[2])))
        files.append(path.name)
    for s, w in enumerate(record.intersample):
        _check_rows(w)
        path = out / f"intersample_stage{s}.csv"
        _write_csv(path, ["head", "query_row", *(f"row_{int(r)}" for r in rows)],
                   ([h, int(rows[q]), *w[h, q]] for h in range(w.shape[0]) for q in range(w.shape[1])))
        files.append(path.name)
    for s, v in enumerate(record.intersample_values):
        path = out / f"intersample_values_stage{s}.csv"
        _write_csv(path, ["row", "label", *(f"v{k}" for k in range(v.shape[1]))],
                   ([int(rows[i]), int(dataset.labels[rows[i]]), *v[i]] for i in range(v.shape[0])))
        files.append(path.name)
    return {"rows": rows.tolist(), "files": files, "out": str(out)}


def _check_rows(w: np.ndarray) -> None:
    if not np.allclose(w.sum(axis=-1), 1.0, atol=1e-5):
        raise ad.NumericError("attention rows do not sum to 1")


# -- parser --------------------------------------------------------------------


def _add_run_flags(p, with_model: bool = True):
    p.add_argument("--bundle", required=True, help="prepared dataset directory")
    p.add_argument("--config", help="JSON file with model/train/pretrain sections and seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", help="saint, saint-s or saint-i")
    p.add_argument("--labeled", help="labeled training rows: an integer or 'all'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                   help="override one config field, e.g. model.dim=8 (repeatable)")
    if with_model:
        p.add_argument("--dim", type=int)
        p.add_argument("--ablate", help="comma list of axis=value, e.g. proj_mode=none,loss=cosine,aug=mixup")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="encode a CSV into a dataset bundle")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", help="train,val,test fractions (default 0.65,0.15,0.20)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="supervised training from scratch")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="self-supervised pre-training on the training rows")
    _add_run_flags(p)
    p.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N epochs")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train a fresh head on a pre-trained backbone")
    _add_run_flags(p, with_model=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_finetune, ablate=None, dim=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "labeled"))
    p.add_argument("--eval-batch-size", type=int, default=256)
    p.add_argument("--sweep-batch", help="comma list of evaluation batch sizes, e.g. 32,64,128,256")
    p.add_argument("--out", help="CSV path for the sweep rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("robustness", help="retrain on corrupted training data at several fractions")
    _add_run_flags(p)
    p.add_argument("--checkpoint", help="take the model config from this checkpoint")
    p.add_argument("--mode", choices=("replace", "missing"), default="replace")
    p.add_argument("--fractions", help="comma list in [0, 1] (default 0.1,0.3,0.5,0.7,0.9)")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("export-attention", help="write attention maps and intersample values as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--rows", help="comma list of dataset row indices")
    p.add_argument("--per-class", type=int, default=2, help="test rows per class when --rows is absent")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)
    return parser


def _deterministic():
    if os.environ.get("SAINT_DETERMINISTIC") == "1":
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    return nullcontext()


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        logging.getLogger().setLevel(logging.WARNING - 10 * min(args.verbose, 2))
        if command == "robustness" and args.out and Path(args.out).suffix != ".csv":
            args.out = str(Path(args.out) / "robustness.csv")
        with _deterministic():
            payload = args.func(args)
        code, body = EXIT_OK, {"status": "ok", **payload}
    except (UsageError, SchemaError, CSVParseError, ValueError) as exc:
        code, body = EXIT_USER, {"status": "error", "error": str(exc)}
    except ad.NumericError as exc:
        code, body = EXIT_NUMERIC, {"status": "error", "error": str(exc), "step": getattr(exc, "step", None)}
    except (CheckpointError, ArrayFileError) as exc:
        code, body = EXIT_ARTIFACT, {"status": "error", "error": str(exc)}
    if code:
        log.error("%s", body["error"])
    body = {"command": command, "exit_code": code, **body}
    sys.stdout.write(json.dumps(body, sort_keys=True, default=_jsonable) + "\n")
    sys.stdout.flush()
    return code


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


if __name__ == "__main__":
    sys.exit(main())
