"""Conditional language-model loss and explanation decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from . import tokenizer as tok
from .data import GenerationExample, SequenceLengthError, assemble_task_c
from .model import GeneratorModel
from .tensor import Tensor
from .tokenizer import Vocab


@dataclass
class DecodeConfig:
    strategy: str = "greedy"          # "greedy" | "top_k"
    k: int = 1
    max_new_tokens: int = 32
    stop_tokens: tuple = (tok.EXP_TOKEN, tok.EOS_TOKEN)
    seed: int = 13

    def __post_init__(self):
        if self.strategy not in ("greedy", "top_k"):
            raise ValueError(f"unknown decode strategy {self.strategy!r}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.strategy == "top_k" and self.k < 1:
            raise ValueError("top_k decoding needs k >= 1")


def lm_loss(logits: Tensor, targets: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Mean of -log softmax(logits)[target] over positions with mask 1.

    Positions with mask 0 contribute nothing, in value or gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=np.float64)
    if logits.ndim != 3:
        raise T.ShapeError(f"lm_loss expects [B, L, V] logits, got {logits.shape}")
    if targets.shape != logits.shape[:2] or mask.shape != logits.shape[:2]:
        raise T.ShapeError(
            f"targets {targets.shape} / mask {mask.shape} do not match "
            f"logits {logits.shape}")
    n = mask.sum()
    if n == 0:
        raise ValueError("loss mask selects no positions")
    safe_targets = np.where(mask > 0, targets, 0)  # ignored positions may pad
    picked = T.gather_last(T.log_softmax(logits, axis=-1), safe_targets)
    return T.mul(T.tensor_sum(picked * T.constant(mask)), -1.0 / n)


def generate_explanation(model: GeneratorModel, false_sent: str, vocab: Vocab,
                         cfg: DecodeConfig,
                         rng: Optional[np.random.Generator] = None) -> str:
    """Decode from the ``[BOS] s CUZ`` prompt until a stop token or the
    budget runs out; returns detokenized text without the prompt and with
    any special tokens dropped."""
    prompt, _ = assemble_task_c(
        GenerationExample(id="", false_sent=false_sent,
                          references=["-", "-", "-"]),
        mode="test", vocab=vocab)
    if len(prompt) + cfg.max_new_tokens > model.config.max_len:
        raise SequenceLengthError(
            f"prompt of {len(prompt)} + {cfg.max_new_tokens} new tokens "
            f"exceeds max_len {model.config.max_len}")
    stop_ids = {vocab.token_to_id[t] for t in cfg.stop_tokens}
    if cfg.strategy == "top_k" and rng is None:
        rng = np.random.default_rng(cfg.seed)

    ids = list(prompt)
    generated: list[int] = []
    for _ in range(cfg.max_new_tokens):
        logits = model.decoder_forward(np.asarray([ids]))
        last = logits.data[0, -1]
        if cfg.strategy == "greedy":
            next_id = int(np.argmax(last))
        else:
            top = np.argpartition(last, -cfg.k)[-cfg.k:]
            shifted = last[top] - last[top].max()
            probs = np.exp(shifted) / np.exp(shifted).sum()
            next_id = int(rng.choice(top, p=probs))
        if next_id in stop_ids:
            break
        ids.append(next_id)
        generated.append(next_id)

    kept = [i for i in generated if vocab.id_to_token[i] not in tok.SPECIAL_TOKENS]
    return tok.decode(kept, vocab)
