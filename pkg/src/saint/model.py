"""The SAINT network: feature embedding, attention stages and the CLS head.

Each stage applies, per variant, a self-attention block over the n+1 tokens of
a row and/or an intersample block that attends across the rows of the batch.
Both blocks follow the post-sublayer layer-norm wiring

    z1 = LN(Attn(x)) + x
    z2 = LN(FF(z1)) + z1

with the norm inside the residual branch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Batch, TabularSchema
from .nn import MLP, LayerNorm, Linear, Module, ModuleList, parameter, trunc_normal

Variant = Literal["saint", "saint_s", "saint_i"]

VARIANT_DEFAULTS = {
    "saint_s": {"stages": 6, "heads": 8},
    "saint_i": {"stages": 1, "heads": 8},
    "saint": {"stages": 1, "heads": 8},
}


def normalize_variant(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in VARIANT_DEFAULTS:
        raise ValueError(f"unknown variant {name!r}; expected saint, saint-s or saint-i")
    return key


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = "saint"
    stages: int = 1
    heads: int = 8
    dim: int = 32
    # None means dim // heads
    d_head_self: int | None = 16
    d_head_inter: int | None = 64
    inter_heads: int | None = None
    ff_hidden: int | None = None
    dropout_attn: float = 0.1
    dropout_ff: float | None = None
    head_hidden: int | None = None
    positional_encoding: bool = False
    # "mlp": every continuous feature gets its own linear+ReLU token;
    # "concat": continuous values skip attention and join the CLS vector at the head
    cont_embedding: Literal["mlp", "concat"] = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if (self.d_head_self is None or self.d_head_inter is None) and self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        for p in (self.dropout_attn, self.ff_dropout):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout must lie in [0, 1), got {p}")
        if self.cont_embedding not in ("mlp", "concat"):
            raise ValueError(f"unknown cont_embedding {self.cont_embedding!r}")

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> ModelConfig:
        variant = normalize_variant(variant)
        return cls(variant=variant, **{**VARIANT_DEFAULTS[variant], **overrides})

    @property
    def self_head_dim(self) -> int:
        return self.d_head_self or self.dim // self.heads

    @property
    def inter_head_dim(self) -> int:
        return self.d_head_inter or self.dim // self.heads

    @property
    def n_inter_heads(self) -> int:
        return self.inter_heads or self.heads

    @property
    def ff_width(self) -> int:
        return self.ff_hidden or 4 * self.dim

    @property
    def ff_dropout(self) -> float:
        if self.dropout_ff is not None:
            return self.dropout_ff
        return 0.1 if self.variant == "saint_s" else 0.8

    @property
    def head_width(self) -> int:
        return self.head_hidden or self.dim

    @property
    def uses_self(self) -> bool:
        return self.variant in ("saint", "saint_s")

    @property
    def uses_intersample(self) -> bool:
        return self.variant in ("saint", "saint_i")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> ModelConfig:
        return cls(**obj)

    def without_dropout(self) -> ModelConfig:
        return replace(self, dropout_attn=0.0, dropout_ff=0.0)


@dataclass
class AttentionRecord:
    """Softmax weights captured during a forward pass, one entry per stage."""

    self_attention: list[np.ndarray | None] = field(default_factory=list)   # [b, h, n+1, n+1]
    intersample: list[np.ndarray | None] = field(default_factory=list)      # [h_i, b, b]
    intersample_values: list[np.ndarray | None] = field(default_factory=list)  # [b, h_i * d_head]


class MultiHeadAttention(Module):
    """Scaled dot-product attention over axis -2 of a [B, T, width] input."""

    def __init__(self, width: int, heads: int, head_dim: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.heads, self.head_dim, self.dropout = heads, head_dim, dropout
        inner = heads * head_dim
        self.query = Linear(width, inner, rng, bias=False)
        self.key = Linear(width, inner, rng, bias=False)
        self.value = Linear(width, inner, rng, bias=False)
        self.out = Linear(inner, width, rng)

    def split_heads(self, t: Tensor) -> Tensor:
        B, T, _ = t.shape
        return t.reshape(B, T, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, rng=None, sink: dict | None = None) -> Tensor:
        B, T, _ = x.shape
        v_flat = self.value(x)
        q, k, v = self.split_heads(self.query(x)), self.split_heads(self.key(x)), self.split_heads(v_flat)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        weights = ad.softmax(scores, axis=-1)
        if sink is not None:
            sink["weights"] = weights.data.copy()
            sink["values"] = v_flat.data.copy()
        weights = ad.dropout(weights, self.dropout, self.training, rng)
        mixed = (weights @ v).transpose(0, 2, 1, 3).reshape(B, T, self.heads * self.head_dim)
        return self.out(mixed)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        h = ad.dropout(ad.gelu(self.fc1(x)), self.dropout, self.training, rng)
        return self.fc2(h)


class SelfAttentionBlock(Module):
    """z1 = LN(MSA(x)) + x ; z2 = LN(FF(z1)) + z1 over the tokens of each row."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, cfg.self_head_dim, cfg.dropout_attn, rng)
        self.norm1 = LayerNorm(cfg.dim)
        self.ff = FeedForward(cfg.dim, cfg.ff_width, cfg.ff_dropout, rng)
        self.norm2 = LayerNorm(cfg.dim)

    def __call__(self, x: Tensor, rng=None, sink: dict | None = None) -> Tensor:
        z1 = self.norm1(self.attn(x, rng, sink)) + x
        return self.norm2(self.ff(z1, rng)) + z1


class IntersampleAttention(Module):
    """Attention across the rows of a batch, each row flattened to (n+1)*d."""

    def __init__(self, n_tokens: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.attn = MultiHeadAttention(n_tokens * cfg.dim, cfg.n_inter_heads, cfg.inter_head_dim,
                                       cfg.dropout_attn, rng)

    def __call__(self, x: Tensor, rng=None, sink: dict | None = None) -> Tensor:
        b, t, d = x.shape
        out = self.attn(x.reshape(1, b, t * d), rng, sink)
        if sink is not None:
            sink["weights"] = sink["weights"][0]
            sink["values"] = sink["values"][0]
        return out.reshape(b, t, d)


class IntersampleBlock(Module):
    """z3 = LN(MISA(z2)) + z2 ; r = LN(FF(z3)) + z3."""

    def __init__(self, n_tokens: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.attn = IntersampleAttention(n_tokens, cfg, rng)
        self.norm1 = LayerNorm(cfg.dim)
        self.ff = FeedForward(cfg.dim, cfg.ff_width, cfg.ff_dropout, rng)
        self.norm2 = LayerNorm(cfg.dim)

    def __call__(self, x: Tensor, rng=None, sink: dict | None = None) -> Tensor:
        z3 = self.norm1(self.attn(x, rng, sink)) + x
        return self.norm2(self.ff(z3, rng)) + z3


class Stage(Module):
    def __init__(self, n_tokens: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.self_block = SelfAttentionBlock(cfg, rng) if cfg.uses_self else None
        self.inter_block = IntersampleBlock(n_tokens, cfg, rng) if cfg.uses_intersample else None

    def __call__(self, x: Tensor, rng=None, record: AttentionRecord | None = None) -> Tensor:
        sinks = ({}, {}) if record is not None else (None, None)
        if self.self_block is not None:
            x = self.self_block(x, rng, sinks[0])
        if self.inter_block is not None:
            x = self.inter_block(x, rng, sinks[1])
        if record is not None:
            record.self_attention.append(sinks[0].get("weights"))
            record.intersample.append(sinks[1].get("weights"))
            record.intersample_values.append(sinks[1].get("values"))
        return x


class Embedding(Module):
    """CLS token, one table per categorical column, one linear+ReLU per continuous column."""

    def __init__(self, schema: TabularSchema, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        d = cfg.dim
        self.cat_names = [c.name for c in schema.categorical]
        self.cardinalities = np.array([c.cardinality for c in schema.categorical], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(np.int64)
        self.embed_cont = cfg.cont_embedding == "mlp"
        n_cont = len(schema.continuous)
        self.cls = parameter(trunc_normal(rng, (1, d)))
        if len(self.cat_names):
            self.cat_table = parameter(trunc_normal(rng, (int(self.cardinalities.sum()), d)))
        if self.embed_cont and n_cont:
            self.cont_weight = parameter(trunc_normal(rng, (n_cont, d)))
            self.cont_bias = parameter(np.zeros((n_cont, d)))
        self.n_tokens = 1 + len(self.cat_names) + (n_cont if self.embed_cont else 0)
        if cfg.positional_encoding:
            self.position = parameter(trunc_normal(rng, (self.n_tokens, d)))
        else:
            self.position = None

    def check_ids(self, cat: np.ndarray) -> None:
        if cat.shape[1] != len(self.cat_names):
            raise ad.ContractError(f"batch has {cat.shape[1]} categorical columns, model expects "
                                   f"{len(self.cat_names)}")
        for j, name in enumerate(self.cat_names):
            col = cat[:, j]
            bad = (col < 0) | (col >= self.cardinalities[j])
            if bad.any():
                raise IndexError(f"column {name!r}: id {int(col[bad][0])} out of range "
                                 f"[0, {self.cardinalities[j]})")

    def __call__(self, cat: np.ndarray, cont: np.ndarray) -> Tensor:
        b = cat.shape[0]
        d = self.cls.shape[1]
        parts = [ad.reshape(self.cls, (1, 1, d)) + Tensor(np.zeros((b, 1, d)))]
        if len(self.cat_names):
            self.check_ids(cat)
            parts.append(ad.embedding_lookup(self.cat_table, cat + self.offsets))
        if self.embed_cont and cont.shape[1]:
            x = Tensor(cont[:, :, None])
            parts.append(ad.relu(x * self.cont_weight + self.cont_bias))
        tokens = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        if self.position is not None:
            tokens = tokens + self.position
        return tokens


class SaintModel(Module):
    def __init__(self, schema: TabularSchema, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.schema, self.config, self.seed = schema, config, seed
        init = np.random.default_rng([seed, 1])
        self.embedding = Embedding(schema, config, init)
        n_tokens = self.embedding.n_tokens
        self.stages = ModuleList(Stage(n_tokens, config, init) for _ in range(config.stages))
        self.n_cont_concat = 0 if config.cont_embedding == "mlp" else len(schema.continuous)
        self.head = MLP(config.dim + self.n_cont_concat, config.head_width, schema.n_outputs,
                        np.random.default_rng([seed, 3]))
        self.dropout_rng = np.random.default_rng([seed, 2])

    @property
    def n_tokens(self) -> int:
        return self.embedding.n_tokens

    def token_columns(self) -> list[str]:
        """Column name at each token position (position 0 is CLS)."""
        cols = [c.name for c in self.schema.categorical]
        if self.config.cont_embedding == "mlp":
            cols += [c.name for c in self.schema.continuous]
        return ["[CLS]"] + cols

    def reset_head(self, seed: int) -> None:
        """Fresh prediction head drawn from a stream distinct from construction."""
        rng = np.random.default_rng([seed, 4])
        self.head = MLP(self.config.dim + self.n_cont_concat, self.config.head_width,
                        self.schema.n_outputs, rng)

    def embed(self, batch: Batch) -> Tensor:
        if batch.cont.shape[1] != len(self.schema.continuous):
            raise ad.ContractError(f"batch has {batch.cont.shape[1]} continuous columns, model expects "
                                   f"{len(self.schema.continuous)}")
        return self.embedding(batch.cat, batch.cont)

    def encode(self, tokens: Tensor, record: AttentionRecord | None = None, rng=None) -> Tensor:
        rng = rng or self.dropout_rng
        x = tokens
        for stage in self.stages:
            x = stage(x, rng, record)
        return x

    def forward(self, batch: Batch, capture: bool = False, rng=None) -> tuple[Tensor, AttentionRecord | None]:
        record = AttentionRecord() if capture else None
        return self.encode(self.embed(batch), record, rng), record

    def predict(self, r: Tensor, cont: np.ndarray | None = None) -> Tensor:
        """Logits from the CLS position of ``r`` (plus raw continuous values in concat mode)."""
        cls = r[:, 0, :]
        if self.n_cont_concat:
            cls = ad.concat([cls, Tensor(cont)], axis=1)
        return self.head(cls)

    def __call__(self, batch: Batch) -> Tensor:
        r, _ = self.forward(batch)
        return self.predict(r, batch.cont)

    def backbone_parameters(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.named_parameters() if not n.startswith("head.")}
