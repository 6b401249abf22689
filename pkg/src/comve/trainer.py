"""Joint multi-task training: mixture-ratio scheduling, the epoch loop,
accuracy evaluation, and probability-averaging ensembles.

Every epoch visits each main-task example exactly once; each auxiliary
dataset contributes a fresh uniform subsample whose size is
ceil(mixture_ratio * |main| * |aux_i| / sum|aux|), capped at the dataset
size. Batches are task-homogeneous and interleaved in shuffled order.
Task scheduling, explanation injection, and dropout each own an RNG
stream spawned from the run seed, so runs are bit-for-bit reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import data as D
from . import tensor as T
from . import tokenizer as tok
from .generation import lm_loss
from .model import ClassifierModel, ConfigurationError, GeneratorModel
from .optim import Adamax, ScheduleConfig, clip_grad_norm, lr_at
from .tokenizer import Vocab

CLASSIFICATION_KINDS = ("validation", "choice", "aux")


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 4
    epochs: int = 10
    warmup_fraction: float = 0.1
    clip_norm: float = 1.0
    mixture_ratio: float = 0.4
    inject_probability: float = 0.3
    dropout_rates: tuple = (0.1, 0.2, 0.3)
    seed: int = 13
    main_task: str = "B"
    auxiliary_tasks: tuple = ()

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.mixture_ratio < 0:
            raise ValueError("mixture_ratio must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout rates must be in [0, 1)")
        if not 0.0 <= self.inject_probability <= 1.0:
            raise ValueError("inject_probability must be in [0, 1]")


@dataclass
class TrainTask:
    """One dataset wired to a head (or to the generator)."""
    task_id: str
    kind: str  # "validation" | "choice" | "generation" | "aux"
    examples: list
    n_classes: Optional[int] = None

    def __post_init__(self):
        if self.kind not in CLASSIFICATION_KINDS + ("generation",):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "validation":
            self.n_classes = 2
        elif self.kind == "choice":
            self.n_classes = 3
        elif self.kind == "aux" and (self.n_classes is None or self.n_classes < 2):
            raise ValueError("aux tasks need a declared arity >= 2")


@dataclass
class EpochSchedule:
    """Interleaved (task_id, batch index) order over per-task batches of
    example indices."""
    order: list
    batches: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.order)


def expected_batch_counts(datasets: dict, cfg: TrainConfig) -> dict:
    """Deterministic per-task batch counts for one epoch."""
    n_main = len(datasets[cfg.main_task])
    counts = {cfg.main_task: math.ceil(n_main / cfg.batch_size)}
    aux_sizes = {t: len(datasets[t]) for t in cfg.auxiliary_tasks}
    total_aux = sum(aux_sizes.values())
    for t, size in aux_sizes.items():
        quota = math.ceil(cfg.mixture_ratio * n_main * size / total_aux)
        counts[t] = math.ceil(min(quota, size) / cfg.batch_size)
    return counts


def build_epoch_schedule(datasets: dict, cfg: TrainConfig,
                         rng: np.random.Generator) -> EpochSchedule:
    """All main batches plus per-auxiliary subsamples, shuffled together."""
    if cfg.main_task not in datasets or not datasets[cfg.main_task]:
        raise ValueError(f"main task {cfg.main_task!r} has no examples")
    bs = cfg.batch_size
    batches: dict = {}
    perm = rng.permutation(len(datasets[cfg.main_task]))
    batches[cfg.main_task] = [perm[i:i + bs].tolist()
                              for i in range(0, len(perm), bs)]
    aux_sizes = {t: len(datasets[t]) for t in cfg.auxiliary_tasks}
    total_aux = sum(aux_sizes.values())
    for t in cfg.auxiliary_tasks:
        size = aux_sizes[t]
        if size == 0:
            batches[t] = []
            continue
        quota = min(math.ceil(cfg.mixture_ratio * len(datasets[cfg.main_task])
                              * size / total_aux), size)
        picks = rng.choice(size, size=quota, replace=False)
        batches[t] = [picks[i:i + bs].tolist() for i in range(0, quota, bs)]
    order = [(t, i) for t, chunks in batches.items() for i in range(len(chunks))]
    order = [order[i] for i in rng.permutation(len(order))]
    return EpochSchedule(order=order, batches=batches)


class Trainer:
    """Owns the optimizer state, RNG streams, and the epoch loop for one
    classifier and/or one generator."""

    def __init__(self, tasks: dict, cfg: TrainConfig, vocab: Vocab,
                 classifier: Optional[ClassifierModel] = None,
                 generator: Optional[GeneratorModel] = None):
        self.tasks = tasks
        self.cfg = cfg
        self.vocab = vocab
        self.classifier = classifier
        self.generator = generator
        for name in (cfg.main_task,) + tuple(cfg.auxiliary_tasks):
            if name not in tasks:
                raise ConfigurationError(f"no TrainTask registered for {name!r}")
        for task in tasks.values():
            if task.kind in CLASSIFICATION_KINDS:
                if classifier is None:
                    raise ConfigurationError(
                        f"task {task.task_id!r} needs a classifier model")
                if classifier.n_classes(task.task_id) != task.n_classes:
                    raise ConfigurationError(
                        f"head for {task.task_id!r} has arity "
                        f"{classifier.n_classes(task.task_id)}, task declares "
                        f"{task.n_classes}")
            elif generator is None:
                raise ConfigurationError(
                    f"task {task.task_id!r} needs a generator model")

        datasets = {t: task.examples for t, task in tasks.items()}
        per_epoch = sum(expected_batch_counts(datasets, cfg).values())
        self.schedule_cfg = ScheduleConfig(
            base_lr=cfg.learning_rate, warmup_fraction=cfg.warmup_fraction,
            total_steps=cfg.epochs * per_epoch)
        self.inject_policy = D.InjectionPolicy(
            inject_probability=cfg.inject_probability)
        seeds = np.random.SeedSequence(cfg.seed).spawn(3)
        self.schedule_rng = np.random.default_rng(seeds[0])
        self.inject_rng = np.random.default_rng(seeds[1])
        self.dropout_rng = np.random.default_rng(seeds[2])
        self.opt_classifier = (Adamax([p for _, p in classifier.parameters()])
                               if classifier is not None else None)
        self.opt_generator = (Adamax([p for _, p in generator.parameters()])
                              if generator is not None else None)
        self.global_step = 0
        self.last_lr = 0.0

    # -- batch assembly ----------------------------------------------------

    def _classification_rows(self, task: TrainTask, indices, train: bool):
        rows = []
        max_len = self.classifier.config.max_len
        for i in indices:
            ex = task.examples[i]
            if task.kind == "validation":
                row, _ = D.assemble_task_a(ex, self.vocab, max_len)
            elif task.kind == "choice":
                injected = []
                if train and len(ex.explanations) == 3:
                    injected = D.sample_injection(ex, self.inject_policy,
                                                  self.inject_rng)
                row, _ = D.assemble_task_b(ex, injected, self.vocab, max_len)
            else:
                row, _ = D.assemble_aux(ex, self.vocab, max_len)
            rows.append(row)
        return rows

    def _generation_arrays(self, task: TrainTask, indices):
        seqs = [D.assemble_task_c(task.examples[i], "train", self.vocab,
                                  self.generator.config.max_len)
                for i in indices]
        width = max(len(ids) for ids, _ in seqs)
        n = len(seqs)
        full = np.full((n, width), tok.PAD_ID, dtype=np.int64)
        mask = np.zeros((n, width), dtype=np.float64)
        for r, (ids, lm) in enumerate(seqs):
            full[r, :len(ids)] = ids
            mask[r, :len(ids)] = lm
        return full[:, :-1], full[:, 1:], mask[:, 1:]

    # -- epoch loop ----------------------------------------------------------

    def train_epoch(self, schedule: EpochSchedule, epoch: int = 0) -> dict:
        """Runs every scheduled batch; returns per-task mean loss."""
        sums: dict = {}
        counts: dict = {}
        for task_id, batch_index in schedule.order:
            task = self.tasks[task_id]
            indices = schedule.batches[task_id][batch_index]
            lr = lr_at(self.global_step, self.schedule_cfg)
            if task.kind in CLASSIFICATION_KINDS:
                rows = self._classification_rows(task, indices, train=True)
                batch = D.pad_batch(rows, task_tag=task_id)
                logits = self.classifier.forward(batch, task_id, train_mode=True,
                                                 rng=self.dropout_rng)
                loss = T.cross_entropy(logits, D.batch_labels(rows))
                params = [p for _, p in self.classifier.parameters()]
                opt = self.opt_classifier
            else:
                inputs, targets, mask = self._generation_arrays(task, indices)
                logits = self.generator.decoder_forward(inputs, train_mode=True,
                                                        rng=self.dropout_rng)
                loss = lm_loss(logits, targets, mask)
                params = [p for _, p in self.generator.parameters()]
                opt = self.opt_generator
            value = loss.item()
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} (epoch {epoch}, task {task_id}, "
                    f"batch {batch_index})")
            loss.backward()
            clip_grad_norm(params, self.cfg.clip_norm)
            opt.step(lr)
            opt.zero_grad()
            self.global_step += 1
            self.last_lr = lr
            sums[task_id] = sums.get(task_id, 0.0) + value
            counts[task_id] = counts.get(task_id, 0) + 1
        return {t: sums[t] / counts[t] for t in sums}

    def train(self, metrics_path=None,
              on_epoch_end: Optional[Callable] = None) -> list:
        """Full run; returns (and optionally appends to ``metrics_path``)
        one record per task per epoch."""
        datasets = {t: task.examples for t, task in self.tasks.items()}
        records = []
        sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
        try:
            for epoch in range(1, self.cfg.epochs + 1):
                schedule = build_epoch_schedule(datasets, self.cfg,
                                                self.schedule_rng)
                mean_losses = self.train_epoch(schedule, epoch)
                for task_id in sorted(mean_losses):
                    task = self.tasks[task_id]
                    acc = None
                    if task.kind in CLASSIFICATION_KINDS:
                        acc = evaluate_accuracy(self.classifier, task, self.vocab)
                    record = {"epoch": epoch, "task": task_id,
                              "mean_loss": mean_losses[task_id],
                              "accuracy": acc, "lr_last": self.last_lr}
                    records.append(record)
                    if sink:
                        sink.write(json.dumps(record) + "\n")
                if sink:
                    sink.flush()
                if on_epoch_end:
                    on_epoch_end(epoch, self)
        finally:
            if sink:
                sink.close()
        return records


def predict_labels(model: ClassifierModel, task: TrainTask, vocab: Vocab,
                   injected_map: Optional[dict] = None,
                   batch_size: int = 32) -> list:
    """Eval-mode argmax class per example (ties resolve to the lowest
    index). ``injected_map`` optionally supplies explanation texts per
    example id for choice tasks."""
    preds = []
    max_len = model.config.max_len
    for start in range(0, len(task.examples), batch_size):
        rows = []
        for ex in task.examples[start:start + batch_size]:
            if task.kind == "validation":
                row, _ = D.assemble_task_a(ex, vocab, max_len)
            elif task.kind == "choice":
                injected = injected_map.get(ex.id, []) if injected_map else []
                if isinstance(injected, str):
                    injected = [injected]
                row, _ = D.assemble_task_b(ex, injected, vocab, max_len)
            elif task.kind == "aux":
                row, _ = D.assemble_aux(ex, vocab, max_len)
            else:
                raise ConfigurationError(
                    f"cannot classify generation task {task.task_id!r}")
            rows.append(row)
        batch = D.pad_batch(rows, task_tag=task.task_id)
        probs = model.predict_proba(batch, task.task_id)
        preds.extend(int(i) for i in probs.argmax(axis=-1))
    return preds


def evaluate_accuracy(model: ClassifierModel, task: TrainTask, vocab: Vocab,
                      injected_map: Optional[dict] = None,
                      batch_size: int = 32) -> float:
    """Fraction of examples whose argmax matches gold."""
    if not task.examples:
        raise ValueError("cannot evaluate on an empty example list")
    preds = predict_labels(model, task, vocab, injected_map, batch_size)
    gold = [gold_class(ex, task.kind) for ex in task.examples]
    return sum(p == g for p, g in zip(preds, gold)) / len(gold)


def gold_class(ex, kind: str) -> int:
    if kind == "validation":
        return ex.label - 1
    if kind == "choice":
        return ex.class_index
    if kind == "aux":
        return ex.label
    raise ValueError(f"no gold class for kind {kind!r}")


def ensemble_predict(models: Sequence[ClassifierModel], batch: D.EncodedBatch,
                     task_id: str) -> np.ndarray:
    """Average the members' softmax probabilities, then argmax (ties to
    the lowest class index)."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    total = None
    for m in models:
        probs = m.predict_proba(batch, task_id)
        if total is None:
            total = np.zeros_like(probs)
        elif probs.shape != total.shape:
            raise ConfigurationError(
                f"ensemble members disagree on arity for {task_id!r}: "
                f"{probs.shape} vs {total.shape}")
        total += probs
    return (total / len(models)).argmax(axis=-1)
