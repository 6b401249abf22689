"""Tensors, reverse-mode gradients, and the Adamax/warmup machinery.

Walks the numeric substrate bottom-up: a few tensor ops, a backward pass
checked against finite differences, gradient clipping, and a small Adamax
fit with the warmup/decay schedule.
"""

import numpy as np

from comve import tensor as T
from comve.optim import Adamax, ScheduleConfig, clip_grad_norm, lr_at
from comve.tensor import Tensor

print("== basic ops ==")
a = Tensor([[1.0, 2.0], [3.0, 4.0]])
b = Tensor([[5.0, 6.0], [7.0, 8.0]])
print("a @ b =\n", T.matmul(a, b).data)
print("softmax([0, ln 2]) =", T.softmax(Tensor([0.0, np.log(2.0)]), axis=0).data)

print("\n== backward pass vs finite differences ==")
x = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
w = Tensor(np.random.default_rng(1).normal(size=(3, 2)), requires_grad=True)


def loss_fn():
    return T.tensor_sum(T.tanh(T.matmul(x, w)) * T.tanh(T.matmul(x, w)))


loss = loss_fn()
loss.backward()
print("loss =", loss.item())

h = 1e-6
numeric = np.zeros_like(w.data)
flat = w.data.reshape(-1)
num_flat = numeric.reshape(-1)
for i in range(flat.size):
    orig = flat[i]
    flat[i] = orig + h
    hi = loss_fn().item()
    flat[i] = orig - h
    lo = loss_fn().item()
    flat[i] = orig
    num_flat[i] = (hi - lo) / (2 * h)
gap = np.linalg.norm(w.grad - numeric) / np.linalg.norm(numeric)
print(f"analytic vs numeric gradient of w: relative gap {gap:.2e}")

print("\n== gradient clipping ==")
p = Tensor([0.0], requires_grad=True)
p.grad = np.array([2.0])
factor = clip_grad_norm([p], 1.0)
print(f"grad [2.0] clipped to {p.grad} (factor {factor})")

print("\n== Adamax on a toy regression ==")
rng = np.random.default_rng(2)
inputs = Tensor(rng.normal(size=(64, 3)))
true_w = np.array([[1.5], [-2.0], [0.5]])
targets = Tensor(inputs.data @ true_w + 0.01 * rng.normal(size=(64, 1)))
weights = Tensor(np.zeros((3, 1)), requires_grad=True)
opt = Adamax([weights])
schedule = ScheduleConfig(base_lr=0.1, warmup_fraction=0.1, total_steps=300)
for step in range(300):
    diff = T.matmul(inputs, weights) - targets
    mse = T.tensor_mean(diff * diff)
    mse.backward()
    clip_grad_norm([weights], 1.0)
    opt.step(lr_at(step, schedule))
    opt.zero_grad()
    if step % 100 == 0:
        print(f"  step {step:3d}  lr {lr_at(step, schedule):.4f}  mse {mse.item():.5f}")
print("fitted weights:", weights.data.ravel(), "(true:", true_w.ravel(), ")")
