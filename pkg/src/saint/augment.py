"""CutMix in raw input space and mixup in embedding space."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch

log = logging.getLogger(__name__)

AugMode = Literal["cutmix", "mixup", "both"]


def draw_partners(b: int, rng: np.random.Generator) -> np.ndarray:
    """For every row pick a uniformly random different row (itself only when b == 1)."""
    if b == 1:
        return np.zeros(1, dtype=np.int64)
    pick = rng.integers(0, b - 1, size=b)
    return pick + (pick >= np.arange(b))


@dataclass
class CutMixResult:
    batch: Batch
    keep: np.ndarray  # [b, n_cat + n_cont]; True keeps the row's own value
    partners: np.ndarray


def cutmix(batch: Batch, p_cutmix: float, rng: np.random.Generator) -> CutMixResult:
    """x' = x * m + x_partner * (1 - m), each feature replaced with probability ``p_cutmix``.

    Feature columns are ordered categorical first, then continuous.
    """
    if not 0.0 <= p_cutmix <= 1.0:
        raise ValueError(f"p_cutmix must lie in [0, 1], got {p_cutmix}")
    b = batch.size
    n_cat, n_cont = batch.cat.shape[1], batch.cont.shape[1]
    if b == 1:
        log.warning("cutmix on a single-row batch has no partner; returning the batch unchanged")
        return CutMixResult(batch, np.ones((1, n_cat + n_cont), dtype=bool), np.zeros(1, dtype=np.int64))
    partners = draw_partners(b, rng)
    keep = rng.random((b, n_cat + n_cont)) >= p_cutmix
    kc, kx = keep[:, :n_cat], keep[:, n_cat:]
    missing = batch.cont_missing
    mixed = Batch(
        cat=np.where(kc, batch.cat, batch.cat[partners]),
        cont=np.where(kx, batch.cont, batch.cont[partners]),
        labels=batch.labels,
        rows=batch.rows,
        cont_missing=None if missing is None else np.where(kx, missing, missing[partners]),
    )
    return CutMixResult(mixed, keep, partners)


def mixup_embeddings(emb: Tensor, alpha: float, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """alpha * e_i + (1 - alpha) * e_partner on the feature tokens; the CLS token is left alone."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mixup alpha must lie in [0, 1], got {alpha}")
    partners = draw_partners(emb.shape[0], rng)
    if alpha == 1.0 or emb.shape[1] == 1:
        return emb, partners
    feats = emb[:, 1:, :]
    mixed = feats * alpha + ad.take(feats, partners, axis=0) * (1.0 - alpha)
    return ad.concat([emb[:, :1, :], mixed], axis=1), partners


@dataclass
class AugmentedPair:
    clean: Tensor
    augmented: Tensor
    keep: np.ndarray | None
    cutmix_partners: np.ndarray | None
    mixup_partners: np.ndarray | None
    p_cutmix: float
    alpha: float


def augment_pair(model, batch: Batch, p_cutmix: float, alpha: float, rng: np.random.Generator,
                 mode: AugMode = "both") -> AugmentedPair:
    """Embed a batch twice: once clean, once through CutMix and/or mixup."""
    if mode not in ("cutmix", "mixup", "both"):
        raise ValueError(f"unknown augmentation mode {mode!r}")
    clean = model.embed(batch)
    keep = cm_partners = mu_partners = None
    if mode in ("cutmix", "both"):
        cm = cutmix(batch, p_cutmix, rng)
        keep, cm_partners = cm.keep, cm.partners
        augmented = model.embed(cm.batch)
    else:
        augmented = clean
    if mode in ("mixup", "both"):
        augmented, mu_partners = mixup_embeddings(augmented, alpha, rng)
    return AugmentedPair(clean, augmented, keep, cm_partners, mu_partners, p_cutmix, alpha)
