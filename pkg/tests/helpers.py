"""Shared numeric oracles and synthetic fixtures for the test suite.

The finite-difference checker is intentionally independent of the
autodiff path it validates: it re-runs the forward function with
elementwise central perturbations of the raw buffers.
"""

import numpy as np

from comve.data import ValidationExample

WORD_POOL = ["the", "a", "cat", "dog", "eats", "sees", "red", "blue",
             "stone", "bird"]


def synthetic_validation_set(n, rng, marker="zorp", balanced=False):
    """Sentence pairs where the against-common-sense one contains a marker
    word; with ``balanced`` the two labels alternate exactly."""
    examples = []
    for i in range(n):
        k = int(rng.integers(3, 6))
        base = [WORD_POOL[j] for j in rng.integers(0, len(WORD_POOL), size=k)]
        sensible = " ".join(base)
        mutated = list(base)
        mutated[int(rng.integers(0, k))] = marker
        nonsense = " ".join(mutated)
        label = (i % 2) + 1 if balanced else int(rng.integers(1, 3))
        s1, s2 = (nonsense, sensible) if label == 1 else (sensible, nonsense)
        examples.append(ValidationExample(id=str(i), s1=s1, s2=s2, label=label))
    return examples


def validation_corpus(examples):
    return [e.s1 for e in examples] + [e.s2 for e in examples]


def finite_difference_grads(f, tensors, h=1e-6):
    """Central-difference gradient of scalar ``f()`` w.r.t. each tensor."""
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f().item()
            flat[i] = orig - h
            lo = f().item()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def relative_error(a, b):
    """Norm-level relative disagreement between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return np.linalg.norm(a - b) / denom


def check_gradients(build_loss, params, tol, h=1e-6, atol=1e-7):
    """Assert analytic gradients of ``build_loss()`` match finite
    differences for every tensor in ``params``. Comparison is norm-level
    relative with an absolute floor (finite differences of an exactly-zero
    gradient still carry ~1e-9 roundoff noise). Returns the worst error."""
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    numeric = finite_difference_grads(build_loss, params, h=h)
    worst = 0.0
    for p, num in zip(params, numeric):
        assert p.grad is not None, f"no gradient reached {p.name or p!r}"
        gap = np.linalg.norm(p.grad - num)
        scale = np.linalg.norm(p.grad) + np.linalg.norm(num)
        assert gap <= tol * scale + atol, (
            f"gradient mismatch for {p.name or p!r}: "
            f"|delta|={gap:.3e} vs {tol} * {scale:.3e} + {atol}")
        if scale > 0:
            worst = max(worst, gap / scale)
    return worst
