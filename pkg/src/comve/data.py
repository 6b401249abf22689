"""Dataset ingestion and input assembly for the three commonsense subtasks.

Native format is JSONL (UTF-8, one object per line):

* validation (A):  {"id", "s1", "s2", "label": 1|2}  -- label marks the
  against-common-sense statement;
* explanation choice (B): {"id", "false_sent", "options": [3 texts],
  "label": "A"|"B"|"C", "explanations": [0..3 texts]};
* explanation generation (C): {"id", "false_sent", "references": [3 texts]};
* generic auxiliary classification: {"id", "text", "label": int}.

``convert_csv`` turns the competition-style CSV column layouts into these
schemas (see its docstring).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tokenizer as tok
from .tokenizer import Vocab


class ParseError(ValueError):
    """A dataset line violates its schema; carries line number and field."""


class SequenceLengthError(ValueError):
    """An assembled sequence cannot fit the model's context window."""


B_LABELS = ("A", "B", "C")


@dataclass
class ValidationExample:
    id: str
    s1: str
    s2: str
    label: int  # 1 or 2: which statement is against common sense

    def __post_init__(self):
        if self.label not in (1, 2):
            raise ValueError(f"label must be 1 or 2, got {self.label!r}")
        if not self.s1 or not self.s2:
            raise ValueError("both sentences must be non-empty")


@dataclass
class ExplanationChoiceExample:
    id: str
    false_sent: str
    options: list
    label: str  # "A" | "B" | "C"
    explanations: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.options) != 3 or any(not o for o in self.options):
            raise ValueError("exactly three non-empty options required")
        if self.label not in B_LABELS:
            raise ValueError(f"label must be one of {B_LABELS}, got {self.label!r}")
        if not 0 <= len(self.explanations) <= 3:
            raise ValueError("explanations must hold 0 to 3 texts")

    @property
    def class_index(self) -> int:
        return B_LABELS.index(self.label)


@dataclass
class GenerationExample:
    id: str
    false_sent: str
    references: list

    def __post_init__(self):
        if len(self.references) != 3 or any(not r for r in self.references):
            raise ValueError("exactly three non-empty references required")


@dataclass
class AuxExample:
    """Generic single-text classification row for auxiliary corpora."""
    id: str
    text: str
    label: int

    def __post_init__(self):
        if not self.text:
            raise ValueError("text must be non-empty")
        if self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")


@dataclass
class InjectionPolicy:
    """How often (and how many) ground-truth explanations join a training row.

    ``inject_probability`` 0.3 reproduces a 7:3 regime, 0.5 a 5:5 regime.
    ``count_probs`` is the distribution over injecting 1, 2 or 3 texts.
    """

    inject_probability: float = 0.3
    count_probs: tuple = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        if not 0.0 <= self.inject_probability <= 1.0:
            raise ValueError("inject_probability must be in [0, 1]")
        if len(self.count_probs) != 3 or abs(sum(self.count_probs) - 1.0) > 1e-9:
            raise ValueError("count_probs must be three probabilities summing to 1")


@dataclass
class AssembledSequence:
    """One encoder-ready row: ids, segment ids, mask, optional class label."""
    token_ids: list
    segment_ids: list
    attention_mask: list
    label: Optional[int] = None


@dataclass
class EncodedBatch:
    """Padded batch of assembled rows. Mask is 1 on real tokens, 0 on pad."""
    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    task_tag: str = ""


# -- loading --------------------------------------------------------------


def _require(obj: dict, key: str, line_no: int):
    if key not in obj:
        raise ParseError(f"line {line_no}: missing field {key!r}")
    return obj[key]


def _parse_line(obj: dict, subtask: str, line_no: int):
    try:
        if subtask == "A":
            return ValidationExample(
                id=str(_require(obj, "id", line_no)),
                s1=_require(obj, "s1", line_no),
                s2=_require(obj, "s2", line_no),
                label=_require(obj, "label", line_no))
        if subtask == "B":
            return ExplanationChoiceExample(
                id=str(_require(obj, "id", line_no)),
                false_sent=_require(obj, "false_sent", line_no),
                options=_require(obj, "options", line_no),
                label=_require(obj, "label", line_no),
                explanations=obj.get("explanations", []))
        if subtask == "C":
            return GenerationExample(
                id=str(_require(obj, "id", line_no)),
                false_sent=_require(obj, "false_sent", line_no),
                references=_require(obj, "references", line_no))
    except ParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {line_no}: {exc}") from exc
    raise ValueError(f"unknown subtask {subtask!r} (expected A, B or C)")


def load_dataset(path, subtask: str) -> list:
    """Read one of the subtask JSONL files, validating every line."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            examples.append(_parse_line(obj, subtask, line_no))
    return examples


def load_aux_dataset(path, n_classes: int) -> list:
    """Generic classification JSONL {id, text, label} with declared arity."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            try:
                ex = AuxExample(id=str(_require(obj, "id", line_no)),
                                text=_require(obj, "text", line_no),
                                label=int(_require(obj, "label", line_no)))
            except ParseError:
                raise
            except (TypeError, ValueError) as exc:
                raise ParseError(f"line {line_no}: {exc}") from exc
            if ex.label >= n_classes:
                raise ParseError(
                    f"line {line_no}: label {ex.label} outside declared "
                    f"arity {n_classes}")
            examples.append(ex)
    return examples


def load_generated_explanations(path) -> dict:
    """Read a generated-explanation JSONL {id, false_sent, explanation}."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            out[str(_require(obj, "id", line_no))] = _require(obj, "explanation", line_no)
    return out


# -- assembly --------------------------------------------------------------


def assemble_task_a(ex: ValidationExample, vocab: Vocab,
                    max_len: Optional[int] = None) -> tuple:
    """[CLS] s1 [SEP] s2 [SEP]; segment 0 through the first [SEP], 1 after.

    Returns (AssembledSequence, class index). When over-length, tokens are
    trimmed from the end of whichever sentence is currently longer until
    the row fits; if the skeleton alone cannot fit, raises.
    """
    ids1 = tok.encode(ex.s1, vocab)
    ids2 = tok.encode(ex.s2, vocab)
    if max_len is not None:
        if max_len < 3 + 2:  # CLS + two SEPs + one token per sentence
            raise SequenceLengthError(
                f"max_len {max_len} cannot hold a sentence pair")
        while len(ids1) + len(ids2) + 3 > max_len:
            if len(ids1) >= len(ids2) and len(ids1) > 1:
                ids1.pop()
            elif len(ids2) > 1:
                ids2.pop()
            else:
                raise SequenceLengthError(
                    f"sentence pair cannot fit in max_len {max_len}")
    token_ids = [tok.CLS_ID] + ids1 + [tok.SEP_ID] + ids2 + [tok.SEP_ID]
    seg_flip = 2 + len(ids1)  # positions after the first [SEP]
    segment_ids = [0] * seg_flip + [1] * (len(token_ids) - seg_flip)
    row = AssembledSequence(token_ids=token_ids, segment_ids=segment_ids,
                            attention_mask=[1] * len(token_ids),
                            label=ex.label - 1)
    return row, ex.label - 1


def assemble_task_b(ex: ExplanationChoiceExample, injected: Sequence[str],
                    vocab: Vocab, max_len: Optional[int] = None) -> tuple:
    """[CLS] s_f [OPTION] o1 [OPTION] o2 [OPTION] o3 {[EXP] e}* [SEP].

    Segment 0 covers [CLS] and the false sentence, segment 1 the rest.
    Over-length rows lose explanation tokens first (from the tail, markers
    removed once empty), then option tokens from the tail of the options
    region; if still over-length, raises.
    """
    stem = tok.encode(ex.false_sent, vocab)
    options = [tok.encode(o, vocab) for o in ex.options]
    exps = [tok.encode(e, vocab) for e in injected]

    def total():
        n = 1 + len(stem) + sum(1 + len(o) for o in options) + 1
        n += sum(1 + len(e) for e in exps)
        return n

    if max_len is not None:
        while total() > max_len and exps:
            if exps[-1]:
                exps[-1].pop()
            else:
                exps.pop()
        # trim option contents from the tail, keeping all three markers
        while total() > max_len and any(options):
            for opt in reversed(options):
                if opt:
                    opt.pop()
                    break
        if total() > max_len:
            raise SequenceLengthError(
                f"false sentence and option markers alone exceed max_len {max_len}")

    token_ids = [tok.CLS_ID] + stem
    seg_flip = len(token_ids)
    for opt in options:
        token_ids += [tok.OPTION_ID] + opt
    for e in exps:
        token_ids += [tok.EXP_ID] + e
    token_ids.append(tok.SEP_ID)
    segment_ids = [0] * seg_flip + [1] * (len(token_ids) - seg_flip)
    row = AssembledSequence(token_ids=token_ids, segment_ids=segment_ids,
                            attention_mask=[1] * len(token_ids),
                            label=ex.class_index)
    return row, ex.class_index


def sample_injection(ex: ExplanationChoiceExample, policy: InjectionPolicy,
                     rng: np.random.Generator) -> list:
    """With probability ``inject_probability``, pick 1-3 distinct
    ground-truth explanations uniformly without replacement (order as
    sampled); otherwise return []."""
    if len(ex.explanations) != 3:
        raise ValueError(
            f"example {ex.id} needs 3 ground-truth explanations to sample from")
    if rng.random() >= policy.inject_probability:
        return []
    n = int(rng.choice([1, 2, 3], p=policy.count_probs))
    picks = rng.choice(3, size=n, replace=False)
    return [ex.explanations[i] for i in picks]


def assemble_task_c(ex: GenerationExample, mode: str, vocab: Vocab,
                    max_len: Optional[int] = None) -> tuple:
    """Decoder sequence for explanation generation.

    train: [BOS] s CUZ r1 [EXP] r2 [EXP] r3 [EOS], loss mask 1 strictly
    after CUZ. test: [BOS] s CUZ (the generation prompt), all-zero mask.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    ids = [tok.BOS_ID] + tok.encode(ex.false_sent, vocab) + [tok.CUZ_ID]
    cuz_pos = len(ids) - 1
    if mode == "train":
        refs = [tok.encode(r, vocab) for r in ex.references]
        ids += refs[0] + [tok.EXP_ID] + refs[1] + [tok.EXP_ID] + refs[2] + [tok.EOS_ID]
    if max_len is not None and len(ids) > max_len:
        raise SequenceLengthError(
            f"assembled sequence of {len(ids)} tokens exceeds max_len {max_len}")
    loss_mask = [1 if i > cuz_pos else 0 for i in range(len(ids))]
    return ids, loss_mask


def assemble_aux(ex: AuxExample, vocab: Vocab,
                 max_len: Optional[int] = None) -> tuple:
    """[CLS] text [SEP], all segment 0."""
    ids = tok.encode(ex.text, vocab)
    if max_len is not None and len(ids) + 2 > max_len:
        ids = ids[:max_len - 2]
    token_ids = [tok.CLS_ID] + ids + [tok.SEP_ID]
    row = AssembledSequence(token_ids=token_ids,
                            segment_ids=[0] * len(token_ids),
                            attention_mask=[1] * len(token_ids),
                            label=ex.label)
    return row, ex.label


def pad_batch(rows: Sequence[AssembledSequence], task_tag: str = "") -> EncodedBatch:
    """Right-pad rows to a common length with PAD id / mask 0. Padding
    repeats the final segment id so segments stay non-decreasing."""
    if not rows:
        raise ValueError("cannot batch zero rows")
    width = max(len(r.token_ids) for r in rows)
    n = len(rows)
    token_ids = np.full((n, width), tok.PAD_ID, dtype=np.int64)
    segment_ids = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=np.int64)
    for i, r in enumerate(rows):
        k = len(r.token_ids)
        token_ids[i, :k] = r.token_ids
        segment_ids[i, :k] = r.segment_ids
        segment_ids[i, k:] = r.segment_ids[-1]
        mask[i, :k] = 1
    return EncodedBatch(token_ids=token_ids, segment_ids=segment_ids,
                        attention_mask=mask, task_tag=task_tag)


def batch_labels(rows: Sequence[AssembledSequence]) -> np.ndarray:
    labels = [r.label for r in rows]
    if any(l is None for l in labels):
        raise ValueError("all rows must carry a class label")
    return np.asarray(labels, dtype=np.int64)


# -- CSV conversion ---------------------------------------------------------


_HEADER_HINTS = {"id", "sent0", "sent1", "falsesent", "optiona", "optionb",
                 "optionc", "answer", "reference1", "reference2", "reference3"}


def _read_csv_rows(path, expected_cols: int) -> list:
    with open(path, encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if row and any(c.strip() for c in row)]
    if not rows:
        return []
    first = [c.strip().lower() for c in rows[0]]
    if any(c in _HEADER_HINTS for c in first):
        rows = rows[1:]
    for i, row in enumerate(rows, start=1):
        if len(row) < expected_cols:
            raise ParseError(
                f"row {i}: expected {expected_cols} columns, got {len(row)}")
    return rows


def convert_csv(task: str, data_csv, out_path, answers_csv=None,
                references_csv=None) -> int:
    """Convert the competition CSV column layouts to the JSONL schemas.

    Accepted layouts (header row optional, matched case-insensitively):

    * task A data ``id,sent0,sent1`` plus answers ``id,answer`` where
      answer 0|1 names the against-common-sense sentence (0-based; the
      JSONL label is answer+1);
    * task B data ``id,FalseSent,OptionA,OptionB,OptionC`` plus answers
      ``id,answer`` with answer A|B|C; an optional references CSV
      ``id,reference1,reference2,reference3`` supplies the three
      ground-truth explanations;
    * task C data ``id,FalseSent`` plus references
      ``id,reference1,reference2,reference3``.

    Returns the number of JSONL lines written.
    """
    if task not in ("A", "B", "C"):
        raise ValueError(f"unknown task {task!r}")
    answers = {}
    if answers_csv is not None:
        for row in _read_csv_rows(answers_csv, 2):
            answers[row[0].strip()] = row[1].strip()
    references = {}
    if references_csv is not None:
        for row in _read_csv_rows(references_csv, 4):
            references[row[0].strip()] = [c.strip() for c in row[1:4]]

    count = 0
    with open(out_path, "w", encoding="utf-8") as out:
        if task == "A":
            if answers_csv is None:
                raise ParseError("task A conversion requires an answers CSV")
            for row in _read_csv_rows(data_csv, 3):
                ex_id = row[0].strip()
                if ex_id not in answers:
                    raise ParseError(f"no answer for id {ex_id!r}")
                ans = answers[ex_id]
                if ans not in ("0", "1"):
                    raise ParseError(f"id {ex_id!r}: answer must be 0 or 1, got {ans!r}")
                obj = {"id": ex_id, "s1": row[1].strip(), "s2": row[2].strip(),
                       "label": int(ans) + 1}
                ValidationExample(**obj)
                out.write(json.dumps(obj, ensure_ascii=False) + "\n")
                count += 1
        elif task == "B":
            if answers_csv is None:
                raise ParseError("task B conversion requires an answers CSV")
            for row in _read_csv_rows(data_csv, 5):
                ex_id = row[0].strip()
                if ex_id not in answers:
                    raise ParseError(f"no answer for id {ex_id!r}")
                ans = answers[ex_id].upper()
                if ans not in B_LABELS:
                    raise ParseError(f"id {ex_id!r}: answer must be A, B or C, got {ans!r}")
                obj = {"id": ex_id, "false_sent": row[1].strip(),
                       "options": [c.strip() for c in row[2:5]], "label": ans,
                       "explanations": references.get(ex_id, [])}
                ExplanationChoiceExample(**obj)
                out.write(json.dumps(obj, ensure_ascii=False) + "\n")
                count += 1
        else:
            if references_csv is None:
                raise ParseError("task C conversion requires a references CSV")
            for row in _read_csv_rows(data_csv, 2):
                ex_id = row[0].strip()
                if ex_id not in references:
                    raise ParseError(f"no references for id {ex_id!r}")
                obj = {"id": ex_id, "false_sent": row[1].strip(),
                       "references": references[ex_id]}
                GenerationExample(**obj)
                out.write(json.dumps(obj, ensure_ascii=False) + "\n")
                count += 1
    return count
