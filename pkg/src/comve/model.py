"""Shared bidirectional encoder, task-specific heads, and causal decoder.

Both networks are post-norm transformers over summed token/segment/position
embeddings (the decoder has no segment table). The encoder feeds a
tanh-activated pooling layer on position 0 whose output the per-task
affine heads classify; the decoder predicts token i+1 at position i
through a final vocabulary projection.

Parameter counts are a pure function of the configuration; see
``count_parameters`` for the closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import tensor as T
from .data import EncodedBatch, SequenceLengthError
from .tensor import Tensor


class ConfigurationError(ValueError):
    """Unknown task head or inconsistent model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    d_model: int
    d_ff: int
    vocab_size: int
    max_len: int  # context window: longest sequence either network accepts
    n_segments: int = 2
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "vocab_size",
                     "max_len", "n_segments"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")


def _linear_init(rng, n_in, n_out, name):
    w = Tensor(rng.normal(0.0, 0.02, size=(n_in, n_out)),
               requires_grad=True, name=name + ".w")
    b = Tensor(np.zeros(n_out), requires_grad=True, name=name + ".b")
    return w, b


def _layer_init(rng, d, f, name):
    layer = {}
    for part in ("q", "k", "v", "o"):
        layer[part + "_w"], layer[part + "_b"] = _linear_init(rng, d, d, f"{name}.{part}")
    layer["ln1_g"] = Tensor(np.ones(d), requires_grad=True, name=f"{name}.ln1.g")
    layer["ln1_b"] = Tensor(np.zeros(d), requires_grad=True, name=f"{name}.ln1.b")
    layer["ff1_w"], layer["ff1_b"] = _linear_init(rng, d, f, f"{name}.ff1")
    layer["ff2_w"], layer["ff2_b"] = _linear_init(rng, f, d, f"{name}.ff2")
    layer["ln2_g"] = Tensor(np.ones(d), requires_grad=True, name=f"{name}.ln2.g")
    layer["ln2_b"] = Tensor(np.zeros(d), requires_grad=True, name=f"{name}.ln2.b")
    return layer


def _layer_forward(x: Tensor, layer: dict, mask_add: Tensor, cfg: ModelConfig,
                   train_mode: bool, rng) -> Tensor:
    b, l, d = x.shape
    heads, dh = cfg.n_heads, cfg.d_model // cfg.n_heads

    def split(t):  # (B,L,d) -> (B,H,L,dh)
        return T.transpose(T.reshape(t, (b, l, heads, dh)), (0, 2, 1, 3))

    q = split(T.matmul(x, layer["q_w"]) + layer["q_b"])
    k = split(T.matmul(x, layer["k_w"]) + layer["k_b"])
    v = split(T.matmul(x, layer["v_w"]) + layer["v_b"])
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    probs = T.softmax(scores + mask_add, axis=-1)
    if train_mode:
        probs = T.dropout(probs, cfg.dropout_rate, rng)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (b, l, d))
    att = T.matmul(ctx, layer["o_w"]) + layer["o_b"]
    if train_mode:
        att = T.dropout(att, cfg.dropout_rate, rng)
    x = T.layer_norm(x + att, layer["ln1_g"], layer["ln1_b"])
    ff = T.matmul(T.gelu(T.matmul(x, layer["ff1_w"]) + layer["ff1_b"]),
                  layer["ff2_w"]) + layer["ff2_b"]
    if train_mode:
        ff = T.dropout(ff, cfg.dropout_rate, rng)
    return T.layer_norm(x + ff, layer["ln2_g"], layer["ln2_b"])


def _check_train_args(train_mode, rng, cfg):
    if train_mode and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng stream")


def _layer_params(layer: dict, prefix: str):
    order = ("q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "o_w", "o_b",
             "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
             "ln2_g", "ln2_b")
    return [(f"{prefix}.{k}", layer[k]) for k in order]


class ClassifierModel:
    """Bidirectional encoder with one affine classification head per task."""

    kind = "classifier"

    def __init__(self, config: ModelConfig, task_arities: dict, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        if not task_arities:
            raise ConfigurationError("at least one task head is required")
        self.config = config
        d = config.d_model
        self.tok_emb = Tensor(rng.normal(0, 0.02, (config.vocab_size, d)),
                              requires_grad=True, name="tok_emb")
        self.seg_emb = Tensor(rng.normal(0, 0.02, (config.n_segments, d)),
                              requires_grad=True, name="seg_emb")
        self.pos_emb = Tensor(rng.normal(0, 0.02, (config.max_len, d)),
                              requires_grad=True, name="pos_emb")
        self.emb_ln_g = Tensor(np.ones(d), requires_grad=True, name="emb_ln.g")
        self.emb_ln_b = Tensor(np.zeros(d), requires_grad=True, name="emb_ln.b")
        self.layers = [_layer_init(rng, d, config.d_ff, f"enc{i}")
                       for i in range(config.n_layers)]
        self.pooler_w, self.pooler_b = _linear_init(rng, d, d, "pooler")
        self.task_arities = dict(sorted(task_arities.items()))
        self.heads = {}
        for task_id, k in self.task_arities.items():
            if k < 2:
                raise ConfigurationError(
                    f"task {task_id!r} arity must be >= 2, got {k}")
            self.heads[task_id] = _linear_init(rng, d, k, f"head.{task_id}")

    # -- forward pieces --------------------------------------------------

    def _check_len(self, length):
        if length > self.config.max_len:
            raise SequenceLengthError(
                f"sequence length {length} exceeds max_len {self.config.max_len}")

    def embedding_sum(self, batch: EncodedBatch) -> Tensor:
        """Token + segment + position embedding sum, before layer norm."""
        b, l = batch.token_ids.shape
        self._check_len(l)
        positions = np.broadcast_to(np.arange(l), (b, l))
        return (T.embedding(self.tok_emb, batch.token_ids)
                + T.embedding(self.seg_emb, batch.segment_ids)
                + T.embedding(self.pos_emb, positions))

    def embed(self, batch: EncodedBatch) -> Tensor:
        return T.layer_norm(self.embedding_sum(batch), self.emb_ln_g, self.emb_ln_b)

    def encoder_forward(self, batch: EncodedBatch, train_mode: bool = False,
                        rng=None) -> tuple:
        """Returns (hidden [B,L,d], pooled [B,d]). Padding is excluded from
        attention by an additive mask; pooled is the tanh-transformed
        position-0 state."""
        _check_train_args(train_mode, rng, self.config)
        x = self.embed(batch)
        # mask 1 -> additive 0, mask 0 -> additive MASK_VALUE
        mask_add = T.constant(
            (1.0 - batch.attention_mask[:, None, None, :]) * T.MASK_VALUE)
        for layer in self.layers:
            x = _layer_forward(x, layer, mask_add, self.config, train_mode, rng)
        pooled = T.tanh(T.matmul(T.take_position(x, 0, axis=1), self.pooler_w)
                        + self.pooler_b)
        return x, pooled

    def classify_head(self, pooled: Tensor, task_id: str,
                      train_mode: bool = False, rng=None) -> Tensor:
        if task_id not in self.heads:
            raise ConfigurationError(
                f"unknown task {task_id!r}; registered: {sorted(self.heads)}")
        _check_train_args(train_mode, rng, self.config)
        if train_mode:
            pooled = T.dropout(pooled, self.config.dropout_rate, rng)
        w, b = self.heads[task_id]
        return T.matmul(pooled, w) + b

    def forward(self, batch: EncodedBatch, task_id: str,
                train_mode: bool = False, rng=None) -> Tensor:
        _, pooled = self.encoder_forward(batch, train_mode, rng)
        return self.classify_head(pooled, task_id, train_mode, rng)

    def predict_proba(self, batch: EncodedBatch, task_id: str) -> np.ndarray:
        """Eval-mode class probabilities, shape [B, K_task]."""
        return T.softmax(self.forward(batch, task_id), axis=-1).data

    def n_classes(self, task_id: str) -> int:
        if task_id not in self.task_arities:
            raise ConfigurationError(f"unknown task {task_id!r}")
        return self.task_arities[task_id]

    def parameters(self):
        params = [("tok_emb", self.tok_emb), ("seg_emb", self.seg_emb),
                  ("pos_emb", self.pos_emb), ("emb_ln.g", self.emb_ln_g),
                  ("emb_ln.b", self.emb_ln_b)]
        for i, layer in enumerate(self.layers):
            params.extend(_layer_params(layer, f"enc{i}"))
        params.extend([("pooler.w", self.pooler_w), ("pooler.b", self.pooler_b)])
        for task_id in self.task_arities:
            w, b = self.heads[task_id]
            params.extend([(f"head.{task_id}.w", w), (f"head.{task_id}.b", b)])
        return params

    def checkpoint_meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config),
                "task_arities": self.task_arities}


class GeneratorModel:
    """Causal decoder: position i attends only to positions <= i."""

    kind = "generator"

    def __init__(self, config: ModelConfig, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        d = config.d_model
        self.tok_emb = Tensor(rng.normal(0, 0.02, (config.vocab_size, d)),
                              requires_grad=True, name="tok_emb")
        self.pos_emb = Tensor(rng.normal(0, 0.02, (config.max_len, d)),
                              requires_grad=True, name="pos_emb")
        self.emb_ln_g = Tensor(np.ones(d), requires_grad=True, name="emb_ln.g")
        self.emb_ln_b = Tensor(np.zeros(d), requires_grad=True, name="emb_ln.b")
        self.layers = [_layer_init(rng, d, config.d_ff, f"dec{i}")
                       for i in range(config.n_layers)]
        self.lm_w, self.lm_b = _linear_init(rng, d, config.vocab_size, "lm")

    def decoder_forward(self, token_ids: np.ndarray, train_mode: bool = False,
                        rng=None) -> Tensor:
        """Logits [B, L, vocab]; position i carries the prediction for
        token i+1."""
        _check_train_args(train_mode, rng, self.config)
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise ValueError(f"token_ids must be [B, L], got {token_ids.shape}")
        b, l = token_ids.shape
        if l > self.config.max_len:
            raise SequenceLengthError(
                f"sequence length {l} exceeds max_len {self.config.max_len}")
        positions = np.broadcast_to(np.arange(l), (b, l))
        x = T.layer_norm(T.embedding(self.tok_emb, token_ids)
                         + T.embedding(self.pos_emb, positions),
                         self.emb_ln_g, self.emb_ln_b)
        causal = np.triu(np.full((l, l), T.MASK_VALUE), k=1)[None, None, :, :]
        mask_add = T.constant(causal)
        for layer in self.layers:
            x = _layer_forward(x, layer, mask_add, self.config, train_mode, rng)
        return T.matmul(x, self.lm_w) + self.lm_b

    def parameters(self):
        params = [("tok_emb", self.tok_emb), ("pos_emb", self.pos_emb),
                  ("emb_ln.g", self.emb_ln_g), ("emb_ln.b", self.emb_ln_b)]
        for i, layer in enumerate(self.layers):
            params.extend(_layer_params(layer, f"dec{i}"))
        params.extend([("lm.w", self.lm_w), ("lm.b", self.lm_b)])
        return params

    def checkpoint_meta(self) -> dict:
        return {"kind": self.kind, "config": asdict(self.config)}


def count_parameters(config: ModelConfig, task_arities: Optional[dict] = None,
                     kind: str = "classifier") -> int:
    """Closed-form parameter count.

    Per transformer layer: 4*(d^2+d) attention linears, 2*d*f + f + d
    feed-forward, 4*d layer norms. Classifier adds token/segment/position
    tables, the embedding layer norm (2*d), a pooler (d^2+d), and one
    (d*K + K) head per task. Generator swaps segment table and heads for a
    (d*V + V) output projection.
    """
    d, f = config.d_model, config.d_ff
    layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    total = config.n_layers * layer + 2 * d  # layers + embedding layer norm
    total += config.vocab_size * d + config.max_len * d
    if kind == "classifier":
        total += config.n_segments * d
        total += d * d + d  # pooler
        for k in (task_arities or {}).values():
            total += d * k + k
    elif kind == "generator":
        total += d * config.vocab_size + config.vocab_size
    else:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    return total
