"""Corpus BLEU against up to three references per candidate.

Text is split by the module's own tokenizer: lowercase, words and
punctuation marks as separate tokens. Scoring uses modified (clipped)
n-gram precision up to 4-grams, a brevity penalty against the closest
reference length (ties go to the shorter reference), and NO smoothing:
orders longer than the shortest scored candidate are excluded from the
geometric mean, and any zero precision among the included orders zeroes
the score. Empty candidates score 0 per-sentence and are left out of the
corpus pools so the corpus computation still proceeds.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

MAX_ORDER = 4

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def bleu_tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class BleuReport:
    corpus_bleu: float                 # 0..100
    per_sentence: list                 # one 0..100 score per candidate
    precisions: tuple                  # p1..p4; None where no n-grams exist
    brevity_penalty: float


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(cand: Sequence[str], refs: Sequence[Sequence[str]], n: int) -> int:
    cand_counts = _ngrams(cand, n)
    if not cand_counts:
        return 0
    best = Counter()
    for ref in refs:
        for gram, count in _ngrams(ref, n).items():
            if count > best[gram]:
                best[gram] = count
    return sum(min(count, best[gram]) for gram, count in cand_counts.items())


def _closest_ref_len(cand_len: int, refs: Sequence[Sequence[str]]) -> int:
    return min((len(r) for r in refs),
               key=lambda rl: (abs(rl - cand_len), rl))


def _combine(numerators, denominators, orders, cand_len, ref_len) -> tuple:
    """(score 0..100, brevity penalty) from pooled counts."""
    bp = 1.0 if cand_len >= ref_len else (
        math.exp(1.0 - ref_len / cand_len) if cand_len > 0 else 0.0)
    if not orders:
        return 0.0, bp
    logs = []
    for n in orders:
        if numerators[n] == 0:
            return 0.0, bp
        logs.append(math.log(numerators[n] / denominators[n]))
    return bp * math.exp(sum(logs) / len(logs)) * 100.0, bp


def sentence_bleu(candidate: str, references: Sequence[str]) -> float:
    cand = bleu_tokenize(candidate)
    refs = [bleu_tokenize(r) for r in references]
    if not cand:
        return 0.0
    orders = [n for n in range(1, MAX_ORDER + 1) if n <= len(cand)]
    nums = {n: _clipped_matches(cand, refs, n) for n in orders}
    dens = {n: len(cand) - n + 1 for n in orders}
    score, _ = _combine(nums, dens, orders, len(cand), _closest_ref_len(len(cand), refs))
    return score


def bleu(candidates: Sequence[str], references: Sequence[Sequence[str]]) -> BleuReport:
    """Corpus BLEU; ``references[i]`` holds the reference texts (1 to 3)
    for ``candidates[i]``."""
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates but {len(references)} reference groups")
    for i, refs in enumerate(references):
        if not refs:
            raise ValueError(f"candidate {i} has no references")

    per_sentence = [sentence_bleu(c, r) for c, r in zip(candidates, references)]

    nums = {n: 0 for n in range(1, MAX_ORDER + 1)}
    dens = {n: 0 for n in range(1, MAX_ORDER + 1)}
    cand_total = 0
    ref_total = 0
    min_len: Optional[int] = None
    for candidate, refs in zip(candidates, references):
        cand = bleu_tokenize(candidate)
        if not cand:
            continue
        tok_refs = [bleu_tokenize(r) for r in refs]
        min_len = len(cand) if min_len is None else min(min_len, len(cand))
        cand_total += len(cand)
        ref_total += _closest_ref_len(len(cand), tok_refs)
        for n in range(1, MAX_ORDER + 1):
            if n <= len(cand):
                nums[n] += _clipped_matches(cand, tok_refs, n)
                dens[n] += len(cand) - n + 1

    precisions = tuple(nums[n] / dens[n] if dens[n] > 0 else None
                       for n in range(1, MAX_ORDER + 1))
    if min_len is None:  # every candidate empty
        return BleuReport(0.0, per_sentence, precisions, 0.0)
    orders = [n for n in range(1, MAX_ORDER + 1) if n <= min_len]
    score, bp = _combine(nums, dens, orders, cand_total, ref_total)
    return BleuReport(score, per_sentence, precisions, bp)
