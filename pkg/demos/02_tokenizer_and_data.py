"""Vocabulary, subword encoding, and the three task input formats.

Shows how raw sentences become model-ready id sequences: greedy
longest-match subwords, the special markers each task layout uses, and
the stochastic explanation injection used for choice-task training.
"""

import numpy as np

from comve import tokenizer as tok
from comve.data import (ExplanationChoiceExample, GenerationExample,
                        InjectionPolicy, ValidationExample, assemble_task_a,
                        assemble_task_b, assemble_task_c, sample_injection)

corpus = [
    "the boy ate a basketball", "the boy ate a donut",
    "basketballs are not edible", "a basketball cannot be eaten",
    "people cannot eat basketballs", "the boy was hungry",
    "donuts taste sweet", "unable unhappy unkind",
]
vocab = tok.build_vocab(corpus, 250)
print(f"vocabulary of {len(vocab)} tokens; first 12: {vocab.id_to_token[:12]}")

print("\n== encode / decode ==")
for text in ("The boy ate a basketball", "unable", "basketballs [SEP] donuts"):
    ids = tok.encode(text, vocab)
    pieces = [vocab.id_to_token[i] for i in ids]
    print(f"  {text!r} -> {pieces} -> {tok.decode(ids, vocab)!r}")

print("\n== validation pair (subtask A layout) ==")
ex_a = ValidationExample(id="1", s1="The boy ate a basketball",
                         s2="The boy ate a donut", label=1)
row, cls = assemble_task_a(ex_a, vocab)
print("  tokens:  ", [vocab.id_to_token[i] for i in row.token_ids])
print("  segments:", row.segment_ids)
print("  class:   ", cls, "(0 means the first sentence is the nonsensical one)")

print("\n== choice task with injected explanations (subtask B layout) ==")
ex_b = ExplanationChoiceExample(
    id="2", false_sent="The boy ate a basketball",
    options=["basketballs are not edible", "the boy was hungry",
             "donuts taste sweet"],
    label="A",
    explanations=["basketballs are not edible", "a basketball cannot be eaten",
                  "people cannot eat basketballs"])
rng = np.random.default_rng(4)
policy = InjectionPolicy(inject_probability=0.5)
for trial in range(4):
    injected = sample_injection(ex_b, policy, rng)
    row, _ = assemble_task_b(ex_b, injected, vocab)
    n_exp = row.token_ids.count(tok.EXP_ID)
    print(f"  draw {trial}: injected {len(injected)} explanation(s), "
          f"{n_exp} [EXP] markers, {len(row.token_ids)} tokens")

print("\n== generation sequences (subtask C layout) ==")
ex_c = GenerationExample(id="3", false_sent="The boy ate a basketball",
                         references=["basketballs are not edible",
                                     "a basketball cannot be eaten",
                                     "people cannot eat basketballs"])
train_ids, train_mask = assemble_task_c(ex_c, "train", vocab)
test_ids, _ = assemble_task_c(ex_c, "test", vocab)
print("  train tokens:", [vocab.id_to_token[i] for i in train_ids])
print("  loss mask:   ", train_mask)
print("  test prompt: ", [vocab.id_to_token[i] for i in test_ids])
