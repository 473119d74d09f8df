"""Self-supervised pre-training: contrastive + denoising objectives over augmented views."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from . import autodiff as ad
from .augment import augment_pair
from .autodiff import Tensor
from .data import Batch, Dataset, batches
from .model import SaintModel
from .nn import MLP, Module, ModuleList
from .optim import AdamW, clip_grad_norm

log = logging.getLogger(__name__)

TRACE_FIELDS = ("epoch", "step", "contrastive", "denoising", "total")


@dataclass
class PretrainConfig:
    lambda_pt: float = 10.0
    tau: float = 0.7
    p_cutmix: float = 0.3
    alpha: float = 0.2
    proj_mode: Literal["distinct", "shared", "none"] = "distinct"
    loss_mode: Literal["contrastive", "denoising", "both", "cosine"] = "both"
    aug_mode: Literal["cutmix", "mixup", "both"] = "both"
    # "flatten": heads read the whole (n+1)*d representation; "cls": only the CLS token
    proj_input: Literal["flatten", "cls"] = "flatten"
    d_proj: int | None = None
    proj_hidden: int | None = None
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    clip_norm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lambda_pt < 0:
            raise ValueError("lambda_pt must be >= 0")
        for name, allowed in (("proj_mode", ("distinct", "shared", "none")),
                              ("loss_mode", ("contrastive", "denoising", "both", "cosine")),
                              ("aug_mode", ("cutmix", "mixup", "both")),
                              ("proj_input", ("flatten", "cls"))):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# -- heads ---------------------------------------------------------------------


class ProjectionHead(Module):
    """One-hidden-layer ReLU MLP, or the identity when ``mlp`` is None."""

    def __init__(self, mlp: MLP | None):
        super().__init__()
        self.mlp = mlp

    def __call__(self, x: Tensor) -> Tensor:
        return x if self.mlp is None else self.mlp(x)


class PretrainHeads(Module):
    """Projection heads g1/g2 and one denoising MLP per feature column."""

    def __init__(self, model: SaintModel, cfg: PretrainConfig, seed: int = 0):
        super().__init__()
        if model.config.cont_embedding != "mlp":
            raise ValueError("pre-training needs every feature embedded as a token")
        rng = np.random.default_rng([seed, 5])
        d = model.config.dim
        width = model.n_tokens * d if cfg.proj_input == "flatten" else d
        hidden, out = cfg.proj_hidden or d, cfg.d_proj or d
        self.proj_input = cfg.proj_input
        if cfg.proj_mode == "none":
            self.g1 = self.g2 = ProjectionHead(None)
        elif cfg.proj_mode == "shared":
            self.g1 = ProjectionHead(MLP(width, hidden, out, rng))
            self.g2 = self.g1
        else:
            self.g1 = ProjectionHead(MLP(width, hidden, out, rng))
            self.g2 = ProjectionHead(MLP(width, hidden, out, rng))
        schema = model.schema
        self.kinds = [c.kind for c in schema.feature_order()]
        self.denoise = ModuleList(
            MLP(d, d, c.cardinality if c.kind == "categorical" else 1, rng) for c in schema.feature_order()
        )

    def named_parameters(self, prefix: str = ""):
        # shared heads must not be listed twice
        seen = set()
        for name, p in super().named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def head_input(self, r: Tensor) -> Tensor:
        if self.proj_input == "cls":
            return r[:, 0, :]
        b, t, d = r.shape
        return r.reshape(b, t * d)


# -- losses --------------------------------------------------------------------


def contrastive_loss(z: Tensor, z_aug: Tensor, tau: float) -> Tensor:
    """InfoNCE summed over the batch: -sum_i log softmax_k(z_i . z'_k / tau)[i]."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    b = z.shape[0]
    if b < 2:
        log.warning("contrastive loss on a single row has no negatives; returning 0")
        return Tensor(0.0, dtype=z.dtype)
    logits = (z @ ad.transpose(z_aug, (1, 0))) * (1.0 / tau)
    return ad.cross_entropy(logits, np.arange(b), reduction="sum")


def cosine_alignment_loss(z: Tensor, z_aug: Tensor) -> Tensor:
    """Mean over rows of 1 - cos(z_i, z'_i); zero-norm rows count as cos = 0."""
    dot = (z * z_aug).sum(axis=1)
    sq1, sq2 = (z * z).sum(axis=1), (z_aug * z_aug).sum(axis=1)
    ok = ((sq1.data > 0) & (sq2.data > 0)).astype(z.dtype)
    if not ok.all():
        log.warning("cosine loss: %d zero-norm rows treated as cos = 0", int((ok == 0).sum()))
    denom = ad.sqrt(sq1 * ok + (1.0 - ok)) * ad.sqrt(sq2 * ok + (1.0 - ok))
    cos = dot * ok / denom
    return (1.0 - cos).mean()


def denoising_loss(heads: PretrainHeads, r_aug: Tensor, batch: Batch) -> Tensor:
    """Sum over rows and features of per-feature reconstruction losses.

    Head j reads token j+1 of ``r_aug`` (token 0 is CLS). Categorical targets use
    cross-entropy against the original id, continuous targets squared error
    against the original normalised value.
    """
    n_cat = batch.cat.shape[1]
    total = None
    for j, (kind, head) in enumerate(zip(heads.kinds, heads.denoise)):
        pred = head(r_aug[:, j + 1, :])
        if kind == "categorical":
            term = ad.cross_entropy(pred, batch.cat[:, j], reduction="sum")
        else:
            term = ad.mse(pred[:, 0], batch.cont[:, j - n_cat], reduction="sum")
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


# -- training ------------------------------------------------------------------


def pretrain_losses(model: SaintModel, heads: PretrainHeads, batch: Batch, cfg: PretrainConfig,
                    rng: np.random.Generator) -> dict[str, Tensor | None]:
    pair = augment_pair(model, batch, cfg.p_cutmix, cfg.alpha, rng, cfg.aug_mode)
    r_aug = model.encode(pair.augmented)
    contrast = denoise = None
    if cfg.loss_mode in ("contrastive", "both", "cosine"):
        r = model.encode(pair.clean)
        z = heads.g1(heads.head_input(r))
        z_aug = heads.g2(heads.head_input(r_aug))
        if cfg.loss_mode == "cosine":
            contrast = cosine_alignment_loss(z, z_aug)
        else:
            contrast = contrastive_loss(z, z_aug, cfg.tau)
    if cfg.loss_mode in ("denoising", "both"):
        denoise = denoising_loss(heads, r_aug, batch)
    if cfg.loss_mode == "both":
        total = contrast + denoise * cfg.lambda_pt
    else:
        total = contrast if contrast is not None else denoise
    return {"contrastive": contrast, "denoising": denoise, "total": total}


class DivergenceError(ad.NumericError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class Pretrainer:
    """Holds the heads and optimiser state across pretrain steps."""

    def __init__(self, model: SaintModel, cfg: PretrainConfig, heads: PretrainHeads | None = None):
        self.model, self.cfg = model, cfg
        self.heads = heads or PretrainHeads(model, cfg, cfg.seed)
        self.params = list(model.backbone_parameters().values()) + self.heads.parameters()
        self.opt = AdamW(self.params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                         weight_decay=cfg.weight_decay)
        self.rng = np.random.default_rng([cfg.seed, 6])

    def step(self, batch: Batch) -> dict[str, float]:
        return pretrain_step(self.model, self.heads, batch, self.cfg, self.rng, self.opt)


def pretrain_step(model: SaintModel, heads: PretrainHeads, batch: Batch, cfg: PretrainConfig,
                  rng: np.random.Generator, opt: AdamW) -> dict[str, float]:
    """One optimisation step on the combined objective; returns the loss components."""
    model.train()
    opt.zero_grad()
    losses = pretrain_losses(model, heads, batch, cfg, rng)
    losses["total"].backward()
    if cfg.clip_norm:
        clip_grad_norm(opt.params, cfg.clip_norm)
    opt.step()
    return {k: (v.item() if v is not None else 0.0) for k, v in losses.items()}


@dataclass
class PretrainResult:
    heads: PretrainHeads
    trace: list[dict] = field(default_factory=list)


def pretrain(model: SaintModel, dataset: Dataset, indices, cfg: PretrainConfig,
             on_epoch: Callable[[int, SaintModel, PretrainHeads], None] | None = None) -> PretrainResult:
    """Run ``cfg.epochs`` passes over ``indices`` (labels unused); the model is updated in place."""
    trainer = Pretrainer(model, cfg)
    trace = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for batch in batches(dataset, indices, cfg.batch_size, shuffle=True, seed=cfg.seed, epoch=epoch):
            step += 1
            try:
                losses = trainer.step(batch)
            except ad.NumericError as exc:
                raise DivergenceError(step, str(exc)) from exc
            trace.append({"epoch": epoch, "step": step, **losses})
        if on_epoch is not None:
            on_epoch(epoch, model, trainer.heads)
        log.debug("pretrain epoch %d total %.4f", epoch, trace[-1]["total"])
    return PretrainResult(trainer.heads, trace)


def write_trace_csv(path, rows: list[dict], fields=TRACE_FIELDS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return path
