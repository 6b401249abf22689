"""Fine-tune the causal decoder to explain false sentences, then score it.

Trains on the bundled generation fixtures (false sentence + three
reference explanations each), decodes greedily from the `[BOS] s CUZ`
prompt, and reports multi-reference corpus BLEU of the outputs.
"""

import os

import numpy as np

from comve import tokenizer as tok
from comve.bleu import bleu
from comve.data import load_dataset
from comve.generation import DecodeConfig, generate_explanation
from comve.model import GeneratorModel, ModelConfig
from comve.trainer import TrainConfig, TrainTask, Trainer

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "tests", "fixtures")

examples = load_dataset(os.path.join(FIXTURES, "taskC.jsonl"), "C")
print(f"{len(examples)} generation examples; first false sentence:",
      examples[0].false_sent)

corpus = []
for ex in examples:
    corpus += [ex.false_sent] + ex.references
vocab = tok.build_vocab(corpus, 600)

config = ModelConfig(n_layers=2, n_heads=2, d_model=48, d_ff=96,
                     vocab_size=len(vocab), max_len=80, dropout_rate=0.0)
model = GeneratorModel(config, np.random.default_rng(3))
train_cfg = TrainConfig(learning_rate=2e-3, batch_size=4, epochs=120,
                        warmup_fraction=0.1, seed=7, main_task="C")
task = TrainTask(task_id="C", kind="generation", examples=examples)
trainer = Trainer({"C": task}, train_cfg, vocab, generator=model)
records = trainer.train()
for r in records:
    if r["epoch"] % 30 == 0 or r["epoch"] == 1:
        print(f"epoch {r['epoch']:3d}  lm loss {r['mean_loss']:.4f}")

print("\n== greedy decoding ==")
decode_cfg = DecodeConfig(max_new_tokens=16)
candidates, references = [], []
for ex in examples:
    text = generate_explanation(model, ex.false_sent, vocab, decode_cfg)
    candidates.append(text)
    references.append(ex.references)
    print(f"  {ex.false_sent!r}\n    -> {text!r}")

report = bleu(candidates, references)
print(f"\ncorpus BLEU {report.corpus_bleu:.2f} "
      f"(brevity penalty {report.brevity_penalty:.3f}, "
      f"precisions {[None if p is None else round(p, 3) for p in report.precisions]})")
