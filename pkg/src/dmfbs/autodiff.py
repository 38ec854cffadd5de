"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Var`` wraps an ndarray and remembers how it was computed; calling
``backward()`` on a scalar Var fills ``grad`` on every node that fed into
it.  Only the dense operations needed by the feedforward stacks and the
set encoder are provided.  Ops preserve the dtype of their inputs
(float32 in normal use, float64 inside gradient checks); reductions
accumulate in float64 regardless.
"""
from __future__ import annotations

import numpy as np


class NumericError(ArithmeticError):
    """Raised when a forward or backward pass produces non-finite values."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the recorded computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, dtype={self.value.dtype})"

    # -- graph traversal -------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) node into the graph."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() needs a scalar output or an explicit seed")
            seed = np.ones_like(self.value)
        order = _topo_order(self)
        grads = {id(self): np.asarray(seed, dtype=self.value.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _topo_order(root: Var) -> list:
    """Reverse topological order (outputs first), iterative."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    order.reverse()
    return order


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _pair(a, b):
    """Wrap operands, casting a bare python scalar to the Var's float dtype
    so float32 graphs are not silently promoted to float64."""
    if isinstance(a, Var) and not isinstance(b, Var) and np.isscalar(b):
        return a, Var(np.asarray(b, dtype=a.value.dtype))
    if isinstance(b, Var) and not isinstance(a, Var) and np.isscalar(a):
        return Var(np.asarray(a, dtype=b.value.dtype)), b
    return as_var(a), as_var(b)


# -- arithmetic ---------------------------------------------------------


def add(a, b) -> Var:
    a, b = _pair(a, b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Var(out, (a, b), vjp)


def sub(a, b) -> Var:
    a, b = _pair(a, b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Var(out, (a, b), vjp)


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return Var(out, (a, b), vjp)


def div(a, b) -> Var:
    a, b = _pair(a, b)
    out = a.value / b.value

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        )

    return Var(out, (a, b), vjp)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports rank-2 operands only")
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Var(out, (a, b), vjp)


def square(a) -> Var:
    a = as_var(a)

    def vjp(g):
        return (g * (2.0 * a.value),)

    return Var(a.value * a.value, (a,), vjp)


def powf(a, p: float) -> Var:
    a = as_var(a)
    out = np.power(a.value, p)

    def vjp(g):
        return (g * p * np.power(a.value, p - 1.0),)

    return Var(out, (a,), vjp)


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Var(out, (a,), vjp)


def log(a) -> Var:
    a = as_var(a)
    out = np.log(a.value)

    def vjp(g):
        return (g / a.value,)

    return Var(out, (a,), vjp)


def clip(a, lo: float, hi: float) -> Var:
    """Clamp values; gradient passes through the interior only."""
    a = as_var(a)
    out = np.clip(a.value, lo, hi)
    inside = ((a.value > lo) & (a.value < hi)).astype(a.value.dtype)

    def vjp(g):
        return (g * inside,)

    return Var(out, (a,), vjp)


# -- activations --------------------------------------------------------


def relu(a) -> Var:
    a = as_var(a)
    mask = (a.value > 0).astype(a.value.dtype)

    def vjp(g):
        return (g * mask,)

    return Var(a.value * mask, (a,), vjp)


def leaky_relu(a, slope: float = 0.01) -> Var:
    a = as_var(a)
    factor = np.where(a.value > 0, 1.0, slope).astype(a.value.dtype)

    def vjp(g):
        return (g * factor,)

    return Var(a.value * factor, (a,), vjp)


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def selu(a) -> Var:
    a = as_var(a)
    pos = a.value > 0
    ex = np.exp(np.minimum(a.value, 0.0))
    out = np.where(pos, SELU_SCALE * a.value, SELU_SCALE * SELU_ALPHA * (ex - 1.0))
    deriv = np.where(pos, SELU_SCALE, SELU_SCALE * SELU_ALPHA * ex).astype(a.value.dtype)

    def vjp(g):
        return (g * deriv,)

    return Var(out.astype(a.value.dtype), (a,), vjp)


# -- shape and reductions -----------------------------------------------


def reshape(a, shape) -> Var:
    a = as_var(a)
    out = a.value.reshape(shape)

    def vjp(g):
        return (g.reshape(a.value.shape),)

    return Var(out, (a,), vjp)


def concat(parts, axis: int = 0) -> Var:
    parts = [as_var(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i, p in enumerate(parts):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return Var(out, tuple(parts), vjp)


def reduce_sum(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.value.dtype)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).astype(a.value.dtype),)

    return Var(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = a.value.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.value.dtype)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).astype(a.value.dtype),)

    return Var(out, (a,), vjp)


def l2_norm(a) -> Var:
    """Euclidean norm of the flattened input, safe gradient at zero."""
    a = as_var(a)
    norm = float(np.sqrt(np.sum(a.value.astype(np.float64) ** 2)))
    out = np.asarray(norm, dtype=a.value.dtype)

    def vjp(g):
        denom = max(norm, 1e-12)
        return ((g * a.value / denom).astype(a.value.dtype),)

    return Var(out, (a,), vjp)


def softmax_cross_entropy(logits, onehot) -> Var:
    """Mean categorical cross-entropy with a fused, stable gradient."""
    logits = as_var(logits)
    y = np.asarray(onehot if not isinstance(onehot, Var) else onehot.value)
    z = logits.value.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -(y * logp).sum() / n
    probs = np.exp(logp)

    def vjp(g):
        return ((g * (probs - y) / n).astype(logits.value.dtype),)

    return Var(np.asarray(loss, dtype=logits.value.dtype), (logits,), vjp)
