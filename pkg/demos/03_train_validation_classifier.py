"""Train the encoder classifier until it memorizes a tiny validation set.

Synthetic sentence pairs where the against-common-sense sentence contains
a marker word; the encoder has to locate the marker and report which
segment holds it. A minute-scale run reaches 100% training accuracy.
"""

import numpy as np

from comve import tokenizer as tok
from comve.data import ValidationExample
from comve.model import ClassifierModel, ModelConfig, count_parameters
from comve.trainer import TrainConfig, TrainTask, Trainer, evaluate_accuracy

WORDS = ["the", "a", "cat", "dog", "eats", "sees", "red", "blue", "stone", "bird"]


def make_pairs(n, rng):
    out = []
    for i in range(n):
        k = int(rng.integers(3, 6))
        base = [WORDS[j] for j in rng.integers(0, len(WORDS), size=k)]
        nonsense = list(base)
        nonsense[int(rng.integers(0, k))] = "zorp"
        label = int(rng.integers(1, 3))
        s1, s2 = (" ".join(nonsense), " ".join(base)) if label == 1 else \
                 (" ".join(base), " ".join(nonsense))
        out.append(ValidationExample(id=str(i), s1=s1, s2=s2, label=label))
    return out


rng = np.random.default_rng(42)
examples = make_pairs(32, rng)
print("sample pair:", examples[0].s1, "||", examples[0].s2,
      "| nonsensical:", examples[0].label)

vocab = tok.build_vocab([e.s1 for e in examples] + [e.s2 for e in examples], 300)
config = ModelConfig(n_layers=2, n_heads=2, d_model=32, d_ff=64,
                     vocab_size=len(vocab), max_len=16, dropout_rate=0.0)
model = ClassifierModel(config, {"A": 2}, np.random.default_rng(13))
print(f"model has {count_parameters(config, {'A': 2}):,} parameters")

train_cfg = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=100,
                        warmup_fraction=0.1, seed=13, main_task="A")
task = TrainTask(task_id="A", kind="validation", examples=examples)
trainer = Trainer({"A": task}, train_cfg, vocab, classifier=model)
records = trainer.train()

for r in records:
    if r["epoch"] % 20 == 0 or r["epoch"] == 1:
        print(f"epoch {r['epoch']:3d}  loss {r['mean_loss']:.4f}  "
              f"accuracy {r['accuracy']:.3f}  lr {r['lr_last']:.2e}")

final = evaluate_accuracy(model, task, vocab)
print(f"\nfinal training accuracy: {final:.3f}")
