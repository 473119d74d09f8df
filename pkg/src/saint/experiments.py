"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite.

Each function returns plain dicts so callers can print or assert on them.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import replace

import numpy as np

from .data import Dataset, RawTable, Split, choose_labeled, corrupt, fit_transform, make_split
from .model import ModelConfig, SaintModel
from .pretrain import PretrainConfig, pretrain
from .synthetic import interaction_dataset
from .train import TrainConfig, evaluate, train_supervised

log = logging.getLogger(__name__)


def breast_cancer_raw() -> RawTable:
    """sklearn's bundled Wisconsin breast-cancer table (569 x 30, all continuous)."""
    from sklearn.datasets import load_breast_cancer

    x, y = load_breast_cancer(return_X_y=True)
    names = [f"f{j:02d}" for j in range(x.shape[1])]
    cells = {n: [repr(float(v)) for v in x[:, j]] for j, n in enumerate(names)}
    cells["target"] = [str(int(v)) for v in y]
    missing = {k: np.zeros(len(y), dtype=bool) for k in cells}
    return RawTable(names + ["target"], cells, missing, {n: "continuous" for n in names}, "target")


def prepared(raw: RawTable, seed: int) -> tuple[Dataset, Split]:
    split = make_split(raw.n_rows, seed=seed)
    return fit_transform(raw, split), split


def supervised_run(dataset: Dataset, split: Split, model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    model = SaintModel(dataset.schema, model_cfg, seed=train_cfg.seed)
    _, report = train_supervised(model, dataset, split, train_cfg)
    return {"test_auroc": report.metrics["test"]["auroc"], "best_epoch": report.best_epoch,
            "wall_time": report.wall_time}


def pretraining_gain(dataset: Dataset, split: Split, seed: int, labeled_count: int = 50,
                     model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
                     pre_cfg: PretrainConfig | None = None) -> dict:
    """Finetuned-after-pretraining AUROC minus supervised-only AUROC on the same labeled rows."""
    model_cfg = model_cfg or ModelConfig.for_variant("saint")
    train_cfg = replace(train_cfg or TrainConfig(), seed=seed, labeled_count=labeled_count)
    pre_cfg = replace(pre_cfg or PretrainConfig(), seed=seed)
    split = choose_labeled(split, dataset.labels, labeled_count, seed)

    base = SaintModel(dataset.schema, model_cfg, seed=seed)
    _, sup = train_supervised(base, dataset, split, train_cfg)

    backbone = SaintModel(dataset.schema, model_cfg, seed=seed)
    pretrain(backbone, dataset, split.train, pre_cfg)
    backbone.reset_head(seed)
    _, ft = train_supervised(backbone, dataset, split, train_cfg)

    a, b = sup.metrics["test"]["auroc"], ft.metrics["test"]["auroc"]
    return {"seed": seed, "supervised": a, "pretrained": b, "gain": b - a}


# both arms share this budget; at lr 1e-4 / batch 256 neither learns the interaction task in 100 epochs
INTERACTION_TRAIN = TrainConfig(lr=1e-3, batch_size=64, epochs=100)


def embedding_gap(seed: int, m: int = 800, kind: str = "threshold", model_cfg: ModelConfig | None = None,
                  train_cfg: TrainConfig | None = None) -> dict:
    """Test AUROC of per-feature continuous embeddings minus the concat-at-head ablation."""
    dataset = interaction_dataset(m=m, seed=seed, kind=kind)
    split = make_split(m, seed=seed)
    model_cfg = model_cfg or ModelConfig.for_variant("saint")
    train_cfg = replace(train_cfg or INTERACTION_TRAIN, seed=seed)
    full = supervised_run(dataset, split, model_cfg, train_cfg)["test_auroc"]
    concat = supervised_run(dataset, split, replace(model_cfg, cont_embedding="concat"), train_cfg)["test_auroc"]
    return {"seed": seed, "full": full, "concat": concat, "gap": full - concat}


def robustness_curve(dataset: Dataset, split: Split, fractions, mode: str, model_cfg: ModelConfig,
                     train_cfg: TrainConfig) -> list[dict]:
    """Retrain on training rows corrupted at each fraction; report test AUROC (same rule as the CLI)."""
    if split.labeled is None:
        split = choose_labeled(split, dataset.labels, train_cfg.labeled_count, train_cfg.seed)
    rows = []
    for i, fraction in enumerate(fractions):
        rng = np.random.default_rng([train_cfg.seed, 11, i])
        noisy = corrupt(dataset.batch(split.train), mode, fraction, rng)
        model = SaintModel(dataset.schema, model_cfg, seed=train_cfg.seed)
        _, report = train_supervised(model, dataset.with_rows(split.train, noisy), split, train_cfg,
                                     split_eval=("test",))
        rows.append({"fraction": float(fraction), "auroc": report.metrics["test"]["auroc"]})
    return rows


def non_increasing(values, band: float) -> bool:
    return all(b <= a + band for a, b in zip(values, values[1:]))


def batch_sweep(model: SaintModel, dataset: Dataset, indices, sizes=(32, 64, 128, 256)) -> list[dict]:
    return [{"eval_batch_size": s, "auroc": evaluate(model, dataset, indices, s).get("auroc")} for s in sizes]


def median(values) -> float:
    return float(statistics.median(values))
