"""Vocabulary construction and greedy longest-match subword tokenization.

Specials occupy the lowest ids in a fixed order and are matched verbatim
(case-sensitively) before any lowercasing, so ordinary text can never
produce them: subword pieces are built from lowercased words, while every
special string contains either brackets or uppercase letters.
"""

from __future__ import annotations

import collections
from typing import Iterable, Sequence

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
OPTION_TOKEN = "[OPTION]"
EXP_TOKEN = "[EXP]"
BOS_TOKEN = "[BOS]"
EOS_TOKEN = "[EOS]"
CUZ_TOKEN = "CUZ"  # reasoning marker between a false statement and its explanation

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, OPTION_TOKEN,
                  EXP_TOKEN, BOS_TOKEN, EOS_TOKEN, CUZ_TOKEN)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, OPTION_ID, EXP_ID, BOS_ID, EOS_ID, CUZ_ID = range(9)

CONTINUATION_PREFIX = "##"


class Vocab:
    """Token <-> id mapping; ids are dense 0..len-1 with specials first."""

    specials = SPECIAL_TOKENS
    continuation_prefix = CONTINUATION_PREFIX

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the fixed special tokens")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            dupes = [t for t, n in collections.Counter(self.id_to_token).items() if n > 1]
            raise ValueError(f"duplicate tokens in vocabulary: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path) -> None:
        """One token per line; line number = id. UTF-8."""
        with open(path, "w", encoding="utf-8") as f:
            for token in self.id_to_token:
                f.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocab(corpus: Iterable[str], target_size: int) -> Vocab:
    """Deterministic vocabulary from raw text lines.

    Layout: specials, then every single character seen (plain form, by
    frequency, ties lexicographic), then the character continuation forms,
    then multi-character pieces (whole words and their substrings, ranked
    by occurrence-weighted frequency, ties lexicographic) up to
    ``target_size``.
    """
    word_counts: collections.Counter = collections.Counter()
    for line in corpus:
        for raw in line.split():
            if raw in SPECIAL_TOKENS:
                continue
            word_counts[raw.lower()] += 1
    if not word_counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    char_counts: collections.Counter = collections.Counter()
    cont_char_counts: collections.Counter = collections.Counter()
    piece_counts: collections.Counter = collections.Counter()
    for word, freq in word_counts.items():
        for ch in word:
            char_counts[ch] += freq
        for ch in word[1:]:
            cont_char_counts[ch] += freq
        n = len(word)
        for i in range(n):
            for j in range(i + 2, n + 1):  # multi-char pieces only
                piece = word[i:j] if i == 0 else CONTINUATION_PREFIX + word[i:j]
                piece_counts[piece] += freq

    minimum = len(SPECIAL_TOKENS) + len(char_counts)
    if target_size <= minimum:
        raise ValueError(
            f"target_size {target_size} too small: need more than "
            f"{minimum} (specials plus distinct characters)")

    tokens = list(SPECIAL_TOKENS)
    tokens.extend(sorted(char_counts, key=lambda c: (-char_counts[c], c)))
    ranked_cont = sorted(char_counts, key=lambda c: (-cont_char_counts[c], c))
    candidates = [CONTINUATION_PREFIX + c for c in ranked_cont]
    candidates.extend(sorted(piece_counts, key=lambda p: (-piece_counts[p], p)))

    present = set(tokens)
    for cand in candidates:
        if len(tokens) >= target_size:
            break
        if cand not in present:
            tokens.append(cand)
            present.add(cand)
    return Vocab(tokens)


def encode(text: str, vocab: Vocab) -> list[int]:
    """Lowercase, whitespace-split, then greedy longest-match subwords.

    Literal special-token strings pass through to their ids; a character
    with no matching piece becomes UNK and scanning continues.
    """
    ids: list[int] = []
    lookup = vocab.token_to_id
    for raw in text.split():
        if raw in lookup and raw in SPECIAL_TOKENS:
            ids.append(lookup[raw])
            continue
        word = raw.lower()
        i = 0
        n = len(word)
        while i < n:
            match = None
            for j in range(n, i, -1):
                piece = word[i:j] if i == 0 else CONTINUATION_PREFIX + word[i:j]
                if piece in lookup:
                    match = (lookup[piece], j)
                    break
            if match is None:
                ids.append(UNK_ID)
                i += 1
            else:
                ids.append(match[0])
                i = match[1]
    return ids


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    """Inverse of encode: merge continuation pieces, render specials verbatim."""
    words: list[str] = []
    prev_special = True
    for i in ids:
        if not 0 <= i < len(vocab):
            raise IndexError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        token = vocab.id_to_token[i]
        if token in SPECIAL_TOKENS:
            words.append(token)
            prev_special = True
        elif token.startswith(CONTINUATION_PREFIX) and words and not prev_special:
            words[-1] += token[len(CONTINUATION_PREFIX):]
        else:
            words.append(token[len(CONTINUATION_PREFIX):]
                         if token.startswith(CONTINUATION_PREFIX) else token)
            prev_special = False
    return " ".join(words)
