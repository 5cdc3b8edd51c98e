"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an immutable ``ndarray`` together with the nodes it
was computed from and a closure mapping the output gradient to the input
gradients. Only the handful of ops the two point-cloud networks need are
provided; broadcasting is supported where those networks rely on it (bias
addition, per-point/per-neighbour expansion).
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents: tuple = (), backward_fn: BackwardFn | None = None,
                 requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def parameter(data) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, fn, requires_grad=True)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if b.ndim == 2:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            ga = g @ b.data.T
            return ga, gb
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    return _make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice) indexing; advanced indexing is not supported."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[b, idx[b, i, j]]`` for x of shape (B, N, C) and idx of shape (B, N, k)."""
    B, N, C = x.shape
    flat = (idx + (np.arange(B) * N)[:, None, None]).ravel()
    out = x.data.reshape(B * N, C)[flat].reshape(idx.shape + (C,))

    def backward(g):
        gx = np.zeros((B * N, C))
        np.add.at(gx, flat, g.reshape(-1, C))
        return (gx.reshape(B, N, C),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(a.shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def max_reduce(a: Tensor, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max over ``axis``; ties resolve to the smallest index, which alone gets the gradient."""
    if a.shape[axis] < 1:
        raise ContractError("max over an empty axis")
    arg = np.argmax(a.data, axis=axis)
    arg_e = np.expand_dims(arg, axis)
    out = np.take_along_axis(a.data, arg_e, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, arg_e, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), backward), arg


# ---------------------------------------------------------------- fused layers

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float,
               training: bool, running_mean: np.ndarray, running_var: np.ndarray) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalise over every axis but the last.

    Returns the output and the statistics used (batch stats in training mode,
    running stats otherwise); running-stat updates are left to the caller.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data
    m = x.data.size // x.shape[-1]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data
        if training:
            gx = inv / m * (m * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), backward), mu, var


def softmax_cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Weighted mean negative log-softmax probability of the true class."""
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"logits must be (B, C), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    labels = np.asarray(labels, dtype=np.int64)
    B, C = z.shape
    if labels.shape != (B,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise ContractError("labels must be class ids in [0, C) with one per row")
    w = np.ones(B) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[labels]
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    total = w.sum()
    loss = -(w * logp[np.arange(B), labels]).sum() / total

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        return (float(g) * p * (w / total)[:, None],)

    return _make(np.asarray(loss), (logits,), backward)


# ---------------------------------------------------------------- backward pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Accumulate d(loss)/d(node) in reverse topological order.

    Sets ``.grad`` on every trainable leaf reached. If ``params`` is given,
    returns their gradients in order, zero for any not reachable from ``loss``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if params is not None:
        params = list(params)
        for p in params:
            p.grad = None
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
