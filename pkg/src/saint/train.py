"""Supervised training, finetuning, and evaluation metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .checkpoint import Checkpoint, CheckpointError, model_from_checkpoint
from .data import Dataset, Split, batches, choose_labeled
from .model import SaintModel
from .optim import AdamW, clip_grad_norm
from .pretrain import DivergenceError  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)


class UndefinedMetricError(ValueError):
    pass


# -- metrics -------------------------------------------------------------------


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic with average ranks."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(logits, labels) -> float:
    """Argmax match rate; ties go to the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels).reshape(-1)
    if len(labels) == 0:
        return float("nan")
    return float((np.argmax(logits, axis=1) == labels).mean())


# -- configuration and reports -------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    labeled_count: int | None = None
    eval_batch_size: int = 256
    selection_metric: Literal["auroc", "accuracy", "neg_mse"] | None = None
    clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class EvalReport:
    metrics: dict[str, dict] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    selection_metric: str = ""
    eval_batch_size: int = 256
    seed: int = 0
    labeled_count: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> dict:
        """Metric-only view; stable across reruns (no timing)."""
        return {"metrics": self.metrics, "best_epoch": self.best_epoch,
                "selection_metric": self.selection_metric, "eval_batch_size": self.eval_batch_size,
                "seed": self.seed, "labeled_count": self.labeled_count}


# -- evaluation ----------------------------------------------------------------


def predict_outputs(model: SaintModel, dataset: Dataset, indices, eval_batch_size: int = 256) -> np.ndarray:
    """Raw model outputs over contiguous evaluation batches, dropout off."""
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        raise ad.ContractError("cannot evaluate on an empty index list")
    was_training = model.training
    model.eval()
    try:
        with ad.no_grad():
            outs = [model(b).data for b in batches(dataset, idx, eval_batch_size, shuffle=False)]
    finally:
        model.train(was_training)
    return np.concatenate(outs, axis=0).astype(np.float64)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: SaintModel, dataset: Dataset, indices, eval_batch_size: int = 256) -> dict:
    idx = np.asarray(indices, dtype=np.int64)
    out = predict_outputs(model, dataset, idx, eval_batch_size)
    y = dataset.labels[idx]
    result: dict = {"n": int(len(idx)), "eval_batch_size": int(eval_batch_size)}
    if dataset.schema.task == "regression":
        err = out[:, 0] - y
        result["mse"] = float((err * err).mean())
        return result
    probs = _softmax(out)
    result["accuracy"] = accuracy(out, y)
    result["loss"] = float(-np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None)).mean())
    if dataset.schema.task == "binary":
        try:
            result["auroc"] = auroc(probs[:, 1], y)
        except UndefinedMetricError:
            result["auroc"] = None
    return result


def default_selection_metric(dataset: Dataset) -> str:
    return {"binary": "auroc", "multiclass": "accuracy", "regression": "neg_mse"}[dataset.schema.task]


def _score(metrics: dict, name: str) -> float | None:
    if name == "neg_mse":
        return -metrics["mse"]
    value = metrics.get(name)
    if value is None and name == "auroc":
        return metrics.get("accuracy")
    return value


# -- training ------------------------------------------------------------------


def supervised_loss(model: SaintModel, batch, task: str) -> ad.Tensor:
    out = model(batch)
    if task == "regression":
        return ad.mse(out[:, 0], batch.labels.astype(np.float64))
    return ad.cross_entropy(out, batch.labels)


def train_supervised(model: SaintModel, dataset: Dataset, split: Split, cfg: TrainConfig,
                     split_eval: tuple[str, ...] = ("val", "test")) -> tuple[dict[str, np.ndarray], EvalReport]:
    """Train on the labeled subset and keep the weights of the best validation epoch.

    The model is left holding the best weights; the same weights are returned as a
    state dict alongside the report.
    """
    start = time.perf_counter()
    if split.labeled is None:
        split = choose_labeled(split, dataset.labels, cfg.labeled_count, cfg.seed)
    labeled = split.labeled
    selection = cfg.selection_metric or default_selection_metric(dataset)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    task = dataset.schema.task

    report = EvalReport(selection_metric=selection, eval_batch_size=cfg.eval_batch_size, seed=cfg.seed,
                        labeled_count=int(len(labeled)))
    best_score, best_state = -np.inf, model.state_dict()
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses = []
        for batch in batches(dataset, labeled, cfg.batch_size, shuffle=True, seed=cfg.seed, epoch=epoch):
            step += 1
            opt.zero_grad()
            try:
                loss = supervised_loss(model, batch, task)
            except ad.NumericError as exc:
                raise DivergenceError(step, str(exc)) from exc
            loss.backward()
            if cfg.clip_norm:
                clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            losses.append(loss.item())
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if len(split.val):
            try:
                val = evaluate(model, dataset, split.val, cfg.eval_batch_size)
            except ad.NumericError as exc:
                raise DivergenceError(step, f"validation after epoch {epoch}: {exc}") from exc
            score = _score(val, selection)
            row.update({f"val_{k}": v for k, v in val.items() if k not in ("n", "eval_batch_size")})
        else:
            score = -row["train_loss"]
        report.trace.append(row)
        if score is not None and score > best_score:
            best_score, best_state = score, model.state_dict()
            report.best_epoch = epoch
        log.debug("epoch %d loss %.5f score %s", epoch, row["train_loss"], score)

    if report.best_epoch == 0:
        report.best_epoch = cfg.epochs
        best_state = model.state_dict()
    model.load_state_dict(best_state)
    for name in split_eval:
        idx = split[name]
        if len(idx):
            report.metrics[name] = evaluate(model, dataset, idx, cfg.eval_batch_size)
    report.wall_time = time.perf_counter() - start
    return best_state, report


def finetune(ckpt: Checkpoint, dataset: Dataset, split: Split, cfg: TrainConfig,
             split_eval: tuple[str, ...] = ("val", "test")) -> tuple[SaintModel, dict[str, np.ndarray], EvalReport]:
    """Load a (pre-trained) backbone, re-initialise the prediction head, then train supervised."""
    if ckpt.schema_hash != dataset.schema.hash():
        raise CheckpointError("checkpoint schema does not match the dataset schema")
    model = model_from_checkpoint(ckpt)
    model.reset_head(cfg.seed)
    state, report = train_supervised(model, dataset, split, cfg, split_eval)
    return model, state, report
