"""Command-line entry points: train, generate, eval, pipeline, convert.

Configuration lives in a JSON file of flat dotted keys (see DEFAULTS);
command-line flags override file values, and every command that takes an
output directory echoes the merged configuration there as
``run_config.json``. Exit codes: 0 success, 1 runtime failure, 2
configuration or validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import tokenizer as tok
from .bleu import bleu
from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint
from .data import ParseError
from .generation import DecodeConfig, generate_explanation
from .model import ClassifierModel, ConfigurationError, GeneratorModel, ModelConfig
from .tokenizer import Vocab, build_vocab
from .trainer import TrainConfig, TrainTask, Trainer, evaluate_accuracy, predict_labels


class ConfigError(ValueError):
    """Bad flags, config keys, paths, or schema mismatches. Exit code 2."""


DEFAULTS = {
    "seed": 13,
    "model.n_layers": 2,
    "model.n_heads": 2,
    "model.d_model": 32,
    "model.d_ff": 64,
    "model.max_len": 128,
    "model.n_segments": 2,
    "model.dropout_rate": 0.1,
    "model.vocab_target_size": 2000,
    "train.learning_rate": 5e-5,
    "train.batch_size": 4,
    "train.epochs": 10,
    "train.warmup_fraction": 0.1,
    "train.clip_norm": 1.0,
    "train.mixture_ratio": 0.4,
    "train.inject_probability": 0.3,
    "data.path": None,
    "data.task": "A",
    "data.aux": [],
    "data.answers": None,
    "data.references": None,
    "paths.vocab": None,
    "paths.checkpoint": None,
    "paths.generator_checkpoint": None,
    "paths.out": None,
    "paths.predictions": None,
    "decode.strategy": "greedy",
    "decode.k": 5,
    "decode.max_new_tokens": 24,
    "pipeline.use_gold_explanations": False,
}

_FLAG_KEYS = {
    "data": "data.path",
    "task": "data.task",
    "answers": "data.answers",
    "references": "data.references",
    "checkpoint": "paths.checkpoint",
    "generator_checkpoint": "paths.generator_checkpoint",
    "vocab": "paths.vocab",
    "out": "paths.out",
    "predictions": "paths.predictions",
    "seed": "seed",
    "inject_probability": "train.inject_probability",
    "mixture_ratio": "train.mixture_ratio",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "learning_rate": "train.learning_rate",
    "warmup_fraction": "train.warmup_fraction",
    "max_new_tokens": "decode.max_new_tokens",
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as f:
            try:
                loaded = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        for key, value in loaded.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = value
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "use_gold_explanations", False):
        cfg["pipeline.use_gold_explanations"] = True
    if getattr(args, "aux", None):
        cfg["data.aux"] = list(cfg["data.aux"]) + [
            _parse_aux_spec(s) for s in args.aux]
    return cfg


def _parse_aux_spec(spec: str) -> dict:
    # TASKID=KIND:PATH[:CLASSES], KIND in {A, B, aux}
    try:
        task_id, rest = spec.split("=", 1)
        parts = rest.split(":")
        kind = parts[0]
        path = parts[1]
        n_classes = int(parts[2]) if len(parts) > 2 else None
    except (ValueError, IndexError) as exc:
        raise ConfigError(
            f"bad --aux spec {spec!r}; expected TASKID=KIND:PATH[:CLASSES]") from exc
    if kind not in ("A", "B", "aux"):
        raise ConfigError(f"aux kind must be A, B or aux, got {kind!r}")
    return {"task_id": task_id, "kind": kind, "path": path, "n_classes": n_classes}


def _require_path(cfg: dict, key: str, what: str) -> str:
    path = cfg.get(key)
    if not path:
        raise ConfigError(f"{what} is required (set {key} or the matching flag)")
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _out_dir(cfg: dict) -> str:
    out = cfg.get("paths.out")
    if not out:
        raise ConfigError("an output directory is required (--out)")
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: str) -> None:
    with open(os.path.join(out, "run_config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        n_layers=cfg["model.n_layers"], n_heads=cfg["model.n_heads"],
        d_model=cfg["model.d_model"], d_ff=cfg["model.d_ff"],
        vocab_size=vocab_size, max_len=cfg["model.max_len"],
        n_segments=cfg["model.n_segments"],
        dropout_rate=cfg["model.dropout_rate"])


def _corpus_lines(task: str, examples) -> list:
    lines = []
    for ex in examples:
        if task == "A":
            lines += [ex.s1, ex.s2]
        elif task == "B":
            lines += [ex.false_sent] + list(ex.options) + list(ex.explanations)
        elif task == "C":
            lines += [ex.false_sent] + list(ex.references)
        else:
            lines.append(ex.text)
    return lines


def _load_task(task_letter: str, path: str, task_id=None, n_classes=None) -> TrainTask:
    kinds = {"A": "validation", "B": "choice", "C": "generation"}
    if task_letter in kinds:
        examples = D.load_dataset(path, task_letter)
        return TrainTask(task_id=task_id or task_letter,
                         kind=kinds[task_letter], examples=examples)
    if n_classes is None:
        raise ConfigError(
            f"auxiliary dataset {task_id!r} needs :CLASSES in its spec")
    examples = D.load_aux_dataset(path, n_classes)
    return TrainTask(task_id=task_id, kind="aux", examples=examples,
                     n_classes=n_classes)


def _load_vocab_or_build(cfg: dict, tasks: dict, out: str) -> Vocab:
    if cfg.get("paths.vocab"):
        return Vocab.load(_require_path(cfg, "paths.vocab", "vocabulary file"))
    lines = []
    for task in tasks.values():
        letter = {"validation": "A", "choice": "B", "generation": "C"}.get(task.kind, "aux")
        lines += _corpus_lines(letter, task.examples)
    vocab = build_vocab(lines, cfg["model.vocab_target_size"])
    vocab.save(os.path.join(out, "vocab.txt"))
    return vocab


def _load_model(path: str, vocab: Vocab, expect_kind: str):
    meta, stored = load_checkpoint(path)
    if meta.get("kind") != expect_kind:
        raise ConfigError(
            f"{path}: checkpoint is a {meta.get('kind')!r} model, "
            f"expected {expect_kind!r}")
    config = ModelConfig(**meta["config"])
    if config.vocab_size != len(vocab):
        raise ConfigError(
            f"{path}: checkpoint vocabulary size {config.vocab_size} does not "
            f"match vocabulary of {len(vocab)} tokens")
    if expect_kind == "classifier":
        model = ClassifierModel(config, meta["task_arities"])
    else:
        model = GeneratorModel(config)
    restore_params(model.parameters(), stored, path)
    return model


# -- commands -----------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    data_path = _require_path(cfg, "data.path", "training data")
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    main_letter = cfg["data.task"]
    if main_letter not in ("A", "B", "C"):
        raise ConfigError(f"--task must be A, B or C, got {main_letter!r}")

    tasks = {main_letter: _load_task(main_letter, data_path)}
    aux_ids = []
    for spec in cfg["data.aux"]:
        task = _load_task(spec["kind"], _require_path(
            {"p": spec["path"]}, "p", f"auxiliary data for {spec['task_id']}"),
            task_id=spec["task_id"], n_classes=spec.get("n_classes"))
        if task.kind == "generation" and main_letter != "C":
            raise ConfigError("generation data cannot be auxiliary to a classifier")
        tasks[spec["task_id"]] = task
        aux_ids.append(spec["task_id"])

    vocab = _load_vocab_or_build(cfg, tasks, out)
    train_cfg = TrainConfig(
        learning_rate=cfg["train.learning_rate"],
        batch_size=cfg["train.batch_size"], epochs=cfg["train.epochs"],
        warmup_fraction=cfg["train.warmup_fraction"],
        clip_norm=cfg["train.clip_norm"],
        mixture_ratio=cfg["train.mixture_ratio"],
        inject_probability=cfg["train.inject_probability"],
        seed=cfg["seed"], main_task=main_letter, auxiliary_tasks=tuple(aux_ids))

    model_cfg = _model_config(cfg, len(vocab))
    init_rng = np.random.default_rng(cfg["seed"])
    classifier = generator = None
    arities = {t.task_id: t.n_classes for t in tasks.values()
               if t.kind != "generation"}
    if arities:
        classifier = ClassifierModel(model_cfg, arities, init_rng)
    if any(t.kind == "generation" for t in tasks.values()):
        generator = GeneratorModel(model_cfg, init_rng)

    trainer = Trainer(tasks, train_cfg, vocab, classifier=classifier,
                      generator=generator)
    model = classifier if classifier is not None else generator

    def save_epoch(epoch, _trainer):
        save_checkpoint(os.path.join(out, f"checkpoint-epoch{epoch}.ckpt"),
                        model.parameters(), model.checkpoint_meta())

    records = trainer.train(metrics_path=os.path.join(out, "metrics.jsonl"),
                            on_epoch_end=save_epoch)
    save_checkpoint(os.path.join(out, "checkpoint-final.ckpt"),
                    model.parameters(), model.checkpoint_meta())
    last = [r for r in records if r["epoch"] == train_cfg.epochs]
    for r in last:
        acc = "" if r["accuracy"] is None else f" accuracy={r['accuracy']:.3f}"
        print(f"task {r['task']}: mean_loss={r['mean_loss']:.4f}{acc}")
    print(f"wrote {train_cfg.epochs + 1} checkpoints to {out}")
    return 0


def _generation_inputs(cfg: dict, data_path: str) -> list:
    task = cfg["data.task"]
    if task == "A":
        raise ConfigError("generation needs task B or C data (false sentences)")
    if task == "B":
        return [(ex.id, ex.false_sent) for ex in D.load_dataset(data_path, "B")]
    return [(ex.id, ex.false_sent) for ex in D.load_dataset(data_path, "C")]


def _write_explanations(model: GeneratorModel, inputs, vocab: Vocab,
                        cfg: dict, path: str) -> None:
    decode_cfg = DecodeConfig(strategy=cfg["decode.strategy"], k=cfg["decode.k"],
                              max_new_tokens=cfg["decode.max_new_tokens"],
                              seed=cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    with open(path, "w", encoding="utf-8") as f:
        for ex_id, false_sent in inputs:
            text = generate_explanation(model, false_sent, vocab, decode_cfg, rng)
            f.write(json.dumps({"id": ex_id, "false_sent": false_sent,
                                "explanation": text}, ensure_ascii=False) + "\n")


def cmd_generate(cfg: dict) -> int:
    data_path = _require_path(cfg, "data.path", "input data")
    ckpt = _require_path(cfg, "paths.checkpoint", "generator checkpoint")
    vocab = Vocab.load(_require_path(cfg, "paths.vocab", "vocabulary file"))
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    model = _load_model(ckpt, vocab, "generator")
    inputs = _generation_inputs(cfg, data_path)
    out_path = os.path.join(out, "explanations.jsonl")
    _write_explanations(model, inputs, vocab, cfg, out_path)
    print(f"wrote {len(inputs)} explanations to {out_path}")
    return 0


def cmd_eval(cfg: dict) -> int:
    data_path = _require_path(cfg, "data.path", "gold data")
    task = cfg["data.task"]
    if task not in ("A", "B", "C"):
        raise ConfigError(f"--task must be A, B or C, got {task!r}")
    report: dict = {"task": task}

    if task == "C":
        pred_path = _require_path(cfg, "paths.predictions",
                                  "explanations file (task C eval)")
        refs = {ex.id: ex.references for ex in D.load_dataset(data_path, "C")}
        explanations = D.load_generated_explanations(pred_path)
        missing = sorted(set(refs) - set(explanations))
        if missing:
            raise ConfigError(f"no explanation for ids {missing[:5]}")
        ordered_ids = sorted(refs)
        result = bleu([explanations[i] for i in ordered_ids],
                      [refs[i] for i in ordered_ids])
        report.update({
            "bleu": result.corpus_bleu,
            "brevity_penalty": result.brevity_penalty,
            "precisions": [p if p is None else round(p, 6)
                           for p in result.precisions],
            "count": len(ordered_ids)})
    else:
        examples = D.load_dataset(data_path, task)
        kind = "validation" if task == "A" else "choice"
        if cfg.get("paths.predictions"):
            preds = _load_prediction_file(cfg["paths.predictions"], task)
            gold = {ex.id: ex for ex in examples}
            missing = sorted(set(gold) - set(preds))
            if missing:
                raise ConfigError(f"no prediction for ids {missing[:5]}")
            correct = 0
            for ex_id, ex in gold.items():
                correct += preds[ex_id] == ex.label
            report["accuracy"] = correct / len(gold)
            report["count"] = len(gold)
        else:
            ckpt = _require_path(cfg, "paths.checkpoint", "classifier checkpoint")
            vocab = Vocab.load(_require_path(cfg, "paths.vocab", "vocabulary file"))
            model = _load_model(ckpt, vocab, "classifier")
            injected = None
            if task == "B" and cfg["pipeline.use_gold_explanations"]:
                injected = {ex.id: list(ex.explanations) for ex in examples}
            train_task = TrainTask(task_id=task, kind=kind, examples=examples)
            report["accuracy"] = evaluate_accuracy(model, train_task, vocab,
                                                   injected_map=injected)
            report["count"] = len(examples)

    print(json.dumps(report, sort_keys=True))
    if cfg.get("paths.out"):
        out = _out_dir(cfg)
        _echo_config(cfg, out)
        with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def _load_prediction_file(path, task: str) -> dict:
    preds = {}
    valid = (1, 2) if task == "A" else D.B_LABELS
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if "id" not in obj or "label" not in obj:
                raise ParseError(f"line {line_no}: predictions need id and label")
            if obj["label"] not in valid:
                raise ParseError(
                    f"line {line_no}: label {obj['label']!r} not in {valid}")
            preds[str(obj["id"])] = obj["label"]
    return preds


def cmd_pipeline(cfg: dict) -> int:
    data_path = _require_path(cfg, "data.path", "choice-task data")
    ckpt = _require_path(cfg, "paths.checkpoint", "classifier checkpoint")
    vocab = Vocab.load(_require_path(cfg, "paths.vocab", "vocabulary file"))
    use_gold = cfg["pipeline.use_gold_explanations"]
    out = _out_dir(cfg)
    _echo_config(cfg, out)
    examples = D.load_dataset(data_path, "B")
    classifier = _load_model(ckpt, vocab, "classifier")

    if use_gold:
        injected_map = {ex.id: list(ex.explanations) for ex in examples}
    else:
        gen_ckpt = _require_path(cfg, "paths.generator_checkpoint",
                                 "generator checkpoint")
        generator = _load_model(gen_ckpt, vocab, "generator")
        exp_path = os.path.join(out, "explanations.jsonl")
        try:
            _write_explanations(generator,
                                [(ex.id, ex.false_sent) for ex in examples],
                                vocab, cfg, exp_path)
        except Exception as exc:
            raise RuntimeError(f"pipeline stage 'generate' failed: {exc}") from exc
        injected_map = {i: [e] for i, e in
                        D.load_generated_explanations(exp_path).items()}

    try:
        task = TrainTask(task_id="B", kind="choice", examples=examples)
        preds = predict_labels(classifier, task, vocab, injected_map=injected_map)
    except Exception as exc:
        raise RuntimeError(f"pipeline stage 'classify' failed: {exc}") from exc

    pred_path = os.path.join(out, "predictions.jsonl")
    with open(pred_path, "w", encoding="utf-8") as f:
        for ex, pred in zip(examples, preds):
            f.write(json.dumps({"id": ex.id, "label": D.B_LABELS[pred]}) + "\n")
    print(f"wrote {len(preds)} predictions to {pred_path}")
    return 0


def cmd_convert(cfg: dict) -> int:
    data_path = _require_path(cfg, "data.path", "input CSV")
    task = cfg["data.task"]
    out = cfg.get("paths.out")
    if not out:
        raise ConfigError("an output location is required (--out)")
    if out.endswith(".jsonl"):
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        out_file = out
    else:
        os.makedirs(out, exist_ok=True)
        out_file = os.path.join(out, f"task{task}.jsonl")
    answers = cfg.get("data.answers")
    references = cfg.get("data.references")
    if answers is not None and not os.path.exists(answers):
        raise ConfigError(f"answers CSV not found: {answers}")
    if references is not None and not os.path.exists(references):
        raise ConfigError(f"references CSV not found: {references}")
    n = D.convert_csv(task, data_path, out_file, answers_csv=answers,
                      references_csv=references)
    print(f"wrote {n} examples to {out_file}")
    return 0


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comve",
        description="Commonsense validation and explanation workflows")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file of flat dotted keys")
        p.add_argument("--data", help="dataset path")
        p.add_argument("--task", choices=["A", "B", "C"], help="subtask")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="run seed (default 13)")

    p = sub.add_parser("train", help="train a classifier or generator")
    common(p)
    p.add_argument("--vocab", help="existing vocabulary file (else built)")
    p.add_argument("--aux", action="append",
                   help="auxiliary dataset TASKID=KIND:PATH[:CLASSES]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--warmup-fraction", dest="warmup_fraction", type=float)
    p.add_argument("--mixture-ratio", dest="mixture_ratio", type=float)
    p.add_argument("--inject-probability", dest="inject_probability", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode explanations for false sentences")
    common(p)
    p.add_argument("--checkpoint", help="generator checkpoint")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="accuracy for A/B, BLEU for C")
    common(p)
    p.add_argument("--checkpoint", help="classifier checkpoint")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--predictions", help="prediction/explanation JSONL to score")
    p.add_argument("--use-gold-explanations", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="generate explanations, then classify")
    common(p)
    p.add_argument("--checkpoint", help="classifier checkpoint")
    p.add_argument("--generator-checkpoint", dest="generator_checkpoint",
                   help="generator checkpoint (unless using gold explanations)")
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--use-gold-explanations", action="store_true",
                   help="inject gold explanations and skip generation")
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("convert", help="competition CSVs to JSONL")
    common(p)
    p.add_argument("--answers", help="answers CSV (tasks A and B)")
    p.add_argument("--references", help="references CSV (tasks B and C)")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(cfg)
    except (ConfigError, ParseError, CheckpointError, ConfigurationError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
