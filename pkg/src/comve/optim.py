"""Adamax optimizer, global-norm gradient clipping, warmup/decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamaxState:
    """Per-parameter moment buffers plus shared step counter.

    ``inf_norm`` entries are the running max of the decayed history and the
    current gradient magnitude, so they never go negative.
    """

    step_count: int = 0
    first_moment: list = field(default_factory=list)
    inf_norm: list = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adamax(params: Sequence[Tensor], beta1: float = 0.9,
                beta2: float = 0.999, epsilon: float = 1e-8) -> AdamaxState:
    return AdamaxState(
        step_count=0,
        first_moment=[np.zeros_like(p.data) for p in params],
        inf_norm=[np.zeros_like(p.data) for p in params],
        beta1=beta1, beta2=beta2, epsilon=epsilon)


def adamax_step(params: Sequence[Tensor], state: AdamaxState, lr: float) -> None:
    """One Adamax update, reading gradients from ``p.grad``.

    m <- b1*m + (1-b1)*g ; u <- max(b2*u, |g|) ;
    p <- p - (lr / (1 - b1^t)) * m / (u + eps).
    Bias correction applies to the first moment only. Parameters with no
    gradient are treated as g = 0 (state still decays/advances).
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if len(state.first_moment) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step_count += 1
    correction = 1.0 - state.beta1 ** state.step_count
    for p, m, u in zip(params, state.first_moment, state.inf_norm):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name or ''} shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        p.data -= (lr / correction) * m / (u + state.epsilon)


class Adamax:
    """Stateful wrapper binding a parameter list to its AdamaxState."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.state = init_adamax(self.params, beta1, beta2, epsilon)

    def step(self, lr: float) -> None:
        adamax_step(self.params, self.state, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the applied factor (1.0 when nothing was clipped, including
    the all-zero-gradient case).
    """
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for g in grads:
        g *= factor
    return factor


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup to ``base_lr`` then linear decay to zero."""

    base_lr: float
    warmup_fraction: float
    total_steps: int

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError(
                f"warmup_fraction must be in (0, 1), got {self.warmup_fraction}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if self.warmup_fraction * self.total_steps < 1.0:
            raise ValueError(
                f"warmup covers {self.warmup_fraction * self.total_steps:.3f} "
                "steps; need at least 1 (raise warmup_fraction or total_steps)")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate at ``step``: 0 at 0, base_lr at the warmup boundary,
    0 again at total_steps, linear in between."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(
            f"step {step} outside schedule range [0, {cfg.total_steps}]")
    warmup = cfg.warmup_fraction * cfg.total_steps
    if step <= warmup:
        return cfg.base_lr * (step / warmup)
    return cfg.base_lr * ((cfg.total_steps - step) / (cfg.total_steps - warmup))
