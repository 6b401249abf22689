"""Dense float64 tensors with reverse-mode automatic differentiation.

CPU-only substrate for the rest of the package. Every tensor owns a
row-major numpy float64 buffer; every differentiable operation records a
node in a dynamic graph, and ``backward`` replays the graph in reverse
topological order, accumulating gradients into every reachable tensor
that has ``requires_grad`` set. There are no views or strides -- copies
are acceptable at this scale.

Thread-safety: tensors are treated as immutable once they have been
consumed by an operation (the optimizer mutates parameter buffers in
place between graphs). Read-only evaluation of disjoint graphs from
multiple threads is fine; single writer otherwise.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Additive mask value for attention. Large enough that exp underflows to
# exactly 0.0 after max-subtraction, small enough to never overflow.
MASK_VALUE = -1e30


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """N-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: tuple = (), _backward_fn=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Populates ``grad`` on every reachable tensor with
        ``requires_grad=True``; repeated calls accumulate until
        ``zero_grad`` is called.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}")
        topo = _toposort(self)
        # A node needs gradient if it or anything upstream of it does.
        needs: dict[int, bool] = {}
        for node in topo:  # parents precede children
            needs[id(node)] = node.requires_grad or any(
                needs[id(p)] for p in node._parents)
        if not needs[id(self)]:
            return
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not needs[id(parent)]:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list:
    """Parents-first topological order of the graph below ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    seen.add(id(root))
    while stack:
        node, i = stack.pop()
        if i < len(node._parents):
            stack.append((node, i + 1))
            parent = node._parents[i]
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, 0))
        else:
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Module-level alias for ``loss.backward()``."""
    loss.backward()


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def zeros(shape, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


# -- arithmetic ---------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b_val = float(b)
        out = Tensor(a.data + b_val, _parents=(a,),
                     _backward_fn=lambda g: (g,))
        return out
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(data, _parents=(a, b), _backward_fn=bwd)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        b_val = float(b)
        return Tensor(a.data * b_val, _parents=(a,),
                      _backward_fn=lambda g: (g * b_val,))
    data = a.data * b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * b_data, a.shape),
                _unbroadcast(g * a_data, b.shape))

    return Tensor(data, _parents=(a, b), _backward_fn=bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dimensions."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b_data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a_data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(data, _parents=(a, b), _backward_fn=bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward_fn=lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return Tensor(a.data.transpose(axes), _parents=(a,),
                  _backward_fn=lambda g: (g.transpose(inverse),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims),
                  _parents=(a,), _backward_fn=bwd)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities -----------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor(y, _parents=(a,), _backward_fn=lambda g: (g * (1.0 - y * y),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * cdf

    def bwd(g):
        local = cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * local,)

    return Tensor(y, _parents=(a,), _backward_fn=bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return Tensor(y, _parents=(a,), _backward_fn=bwd)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"log_softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor(y, _parents=(a,), _backward_fn=bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data
    gain_data = gain.data

    def bwd(g):
        dxhat = g * gain_data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=reduce_axes).reshape(d)
        dbias = g.sum(axis=reduce_axes).reshape(d)
        return dx, dgain, dbias

    return Tensor(y, _parents=(x, gain, bias), _backward_fn=bwd)


# -- lookups and selections ---------------------------------------------


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding id out of range for table with {table.shape[0]} rows")
    data = table.data[ids]
    table_shape = table.shape

    def bwd(g):
        gt = np.zeros(table_shape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table_shape[1]))
        return (gt,)

    return Tensor(data, _parents=(table,), _backward_fn=bwd)


def gather_last(a: Tensor, indices: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    indices = np.asarray(indices)
    k = a.shape[-1]
    if indices.size and (indices.min() < 0 or indices.max() >= k):
        bad = int(indices.reshape(-1)[np.argmax(
            (indices.reshape(-1) < 0) | (indices.reshape(-1) >= k))])
        raise IndexError(f"target index {bad} out of range for {k} classes")
    data = np.take_along_axis(a.data, indices[..., None], axis=-1)[..., 0]
    in_shape = a.shape

    def bwd(g):
        ga = np.zeros(in_shape)
        np.put_along_axis(ga, indices[..., None], g[..., None], axis=-1)
        return (ga,)

    return Tensor(data, _parents=(a,), _backward_fn=bwd)


def take_position(a: Tensor, index: int, axis: int) -> Tensor:
    """Slice out one position along ``axis``, dropping that axis."""
    data = np.take(a.data, index, axis=axis)
    in_shape = a.shape

    def bwd(g):
        ga = np.zeros(in_shape)
        slicer = [slice(None)] * len(in_shape)
        slicer[axis] = index
        ga[tuple(slicer)] = g
        return (ga,)

    return Tensor(data, _parents=(a,), _backward_fn=bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor(a.data * mask, _parents=(a,),
                  _backward_fn=lambda g: (g * mask,))


# -- losses --------------------------------------------------------------


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, K] logits, got {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy targets shape {targets.shape} does not match "
            f"batch size {logits.shape[0]}")
    picked = gather_last(log_softmax(logits, axis=-1), targets)
    return mul(tensor_sum(picked), -1.0 / logits.shape[0])
