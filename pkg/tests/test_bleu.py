import math
import random

import pytest

from comve.bleu import BleuReport, bleu, bleu_tokenize, sentence_bleu


# -- independent oracle -------------------------------------------------------
# Re-implements corpus BLEU with plain list scans (no Counter clipping code
# shared with the module): same documented rules, different mechanics.

def _oracle_tokens(text):
    out = []
    word = ""
    for ch in text.lower():
        if ch.isalnum() or ch == "_":
            word += ch
        else:
            if word:
                out.append(word)
                word = ""
            if not ch.isspace():
                out.append(ch)
    if word:
        out.append(word)
    return out


def _oracle_clip(cand, refs, n):
    grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    matched = 0
    for gram in set(grams):
        cand_count = grams.count(gram)
        best = 0
        for ref in refs:
            ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
            best = max(best, ref_grams.count(gram))
        matched += min(cand_count, best)
    return matched


def oracle_corpus_bleu(candidates, references):
    nums = [0] * 5
    dens = [0] * 5
    cand_total = ref_total = 0
    min_len = None
    for cand_text, ref_texts in zip(candidates, references):
        cand = _oracle_tokens(cand_text)
        if not cand:
            continue
        refs = [_oracle_tokens(r) for r in ref_texts]
        min_len = len(cand) if min_len is None else min(min_len, len(cand))
        cand_total += len(cand)
        ref_total += min((len(r) for r in refs),
                         key=lambda rl: (abs(rl - len(cand)), rl))
        for n in range(1, 5):
            if n <= len(cand):
                nums[n] += _oracle_clip(cand, refs, n)
                dens[n] += len(cand) - n + 1
    if min_len is None:
        return 0.0
    bp = 1.0 if cand_total >= ref_total else math.exp(1.0 - ref_total / cand_total)
    logs = []
    for n in range(1, 5):
        if n > min_len:
            continue
        if nums[n] == 0:
            return 0.0
        logs.append(math.log(nums[n] / dens[n]))
    if not logs:
        return 0.0
    return bp * math.exp(sum(logs) / len(logs)) * 100.0


# -- tests ---------------------------------------------------------------------

REFS = ["basketballs are not edible .",
        "a basketball cannot be eaten",
        "you cannot eat a basketball"]


class TestSentenceCases:
    def test_identical_to_reference_scores_100(self):
        report = bleu([REFS[0]], [REFS])
        assert report.corpus_bleu == pytest.approx(100.0)
        assert report.brevity_penalty == 1.0

    def test_zero_overlap_scores_0(self):
        report = bleu(["quantum flux oscillates"], [REFS])
        assert report.corpus_bleu == 0.0

    def test_hand_case_71_65(self):
        # p1..p3 = 1, 4th order excluded, BP = exp(1 - 4/3)
        report = bleu(["the cat sat"], [["the cat sat down"] * 3])
        assert report.corpus_bleu == pytest.approx(
            math.exp(1.0 - 4.0 / 3.0) * 100.0, abs=1e-9)
        assert report.corpus_bleu == pytest.approx(71.65, abs=0.01)
        assert report.precisions[:3] == (1.0, 1.0, 1.0)
        assert report.brevity_penalty == pytest.approx(math.exp(-1 / 3))

    def test_empty_candidate_scores_0_corpus_proceeds(self):
        report = bleu(["", REFS[0]], [REFS, REFS])
        assert report.per_sentence[0] == 0.0
        assert report.per_sentence[1] == pytest.approx(100.0)
        assert report.corpus_bleu == pytest.approx(100.0)

    def test_all_empty(self):
        report = bleu(["", ""], [REFS, REFS])
        assert report.corpus_bleu == 0.0

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            bleu(["a"], [REFS, REFS])

    def test_no_references(self):
        with pytest.raises(ValueError):
            bleu(["a"], [[]])


class TestReportInvariants:
    def test_reference_order_invariance(self):
        cand = "a basketball is not food"
        scores = {bleu([cand], [list(perm)]).corpus_bleu
                  for perm in [(REFS[0], REFS[1], REFS[2]),
                               (REFS[2], REFS[0], REFS[1]),
                               (REFS[1], REFS[2], REFS[0])]}
        assert len(scores) == 1

    def test_self_match_on_random_corpus_lines(self):
        rng = random.Random(5)
        words = "the a cat dog sat ran fast slow red blue".split()
        for _ in range(50):
            line = " ".join(rng.choices(words, k=rng.randint(1, 9)))
            assert sentence_bleu(line, [line, "unrelated words here",
                                        "another distractor"]) == pytest.approx(100.0)

    def test_combination_identity(self):
        cands = ["the cat sat on the mat", "dogs run fast", "red is a color"]
        refs = [["the cat sat on a mat", "a cat sat on the mat", "cats sit"],
                ["dogs run very fast", "a dog runs", "the dog is quick"],
                ["red is one color", "red is a colour", "colors include red"]]
        report = bleu(cands, refs)
        available = [p for n, p in enumerate(report.precisions, start=1)
                     if n <= min(len(bleu_tokenize(c)) for c in cands)]
        expected = report.brevity_penalty * math.exp(
            sum(math.log(p) for p in available) / len(available)) * 100.0
        assert report.corpus_bleu == pytest.approx(expected, rel=1e-12)

    def test_tokenizer_splits_punctuation(self):
        assert bleu_tokenize("Don't stop, now!") == \
            ["don", "'", "t", "stop", ",", "now", "!"]


class TestOracleEquivalence:
    def test_matches_brute_force_on_random_sets(self):
        rng = random.Random(20)
        words = "sun moon star sky cloud rain snow wind warm cold not is".split()

        def sentence():
            return " ".join(rng.choices(words, k=rng.randint(1, 7)))

        for trial in range(20):
            n = rng.randint(1, 4)
            cands = [sentence() for _ in range(n)]
            refs = [[sentence() for _ in range(3)] for _ in range(n)]
            if trial % 5 == 0:  # force some exact overlap
                cands[0] = refs[0][0]
            assert bleu(cands, refs).corpus_bleu == oracle_corpus_bleu(cands, refs)

    def test_matches_brute_force_hand_case(self):
        cands = ["the cat sat"]
        refs = [["the cat sat down"] * 3]
        assert bleu(cands, refs).corpus_bleu == oracle_corpus_bleu(cands, refs)


def test_report_is_dataclass_with_fields():
    report = bleu(["the cat"], [["the cat", "a cat", "cat"]])
    assert isinstance(report, BleuReport)
    assert 0.0 <= report.corpus_bleu <= 100.0
    assert len(report.per_sentence) == 1
    assert len(report.precisions) == 4
    assert report.precisions[2] is None  # no 3-grams in a 2-token candidate
