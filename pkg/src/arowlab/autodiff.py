"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to tensors it watches.  Tensors
created outside a tape (or derived only from constants) carry no node and are
treated as constants.  ``Tape.backward`` walks the record in reverse and
returns gradients for every node, inputs included.

    with Tape() as tape:
        x = tape.watch(np.ones(3))
        y = (x * x).sum()
    grads = tape.backward(y)
    grads[x]  # -> array([2., 2., 2.])
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_local = threading.local()


def _active():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Shape-tagged float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "node", "tape")
    __array_priority__ = 100

    def __init__(self, data, node=None, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = "const" if self.node is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {tag})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("inputs", "vjp")

    def __init__(self, inputs, vjp):
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def watch(self, data):
        """Register ``data`` as a differentiable leaf of this tape."""
        arr = data.data if isinstance(data, Tensor) else data
        self.nodes.append(_Node((), None))
        return Tensor(np.array(arr, dtype=np.float64), len(self.nodes) - 1, self)

    def _record(self, data, inputs, vjp):
        self.nodes.append(_Node(inputs, vjp))
        return Tensor(data, len(self.nodes) - 1, self)

    def backward(self, root):
        if not isinstance(root, Tensor) or root.size != 1:
            shape = root.shape if isinstance(root, Tensor) else type(root).__name__
            raise ShapeError(f"backward root must be a single-element tensor, got {shape}")
        if root.tape is not self:
            raise ValueError("root tensor was not recorded on this tape")
        grads = [None] * len(self.nodes)
        grads[root.node] = np.ones_like(root.data)
        for idx in range(root.node, -1, -1):
            g = grads[idx]
            node = self.nodes[idx]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.inputs, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg
        return Gradients(self, grads)


class Gradients:
    """Gradient lookup keyed by tensor; unreachable nodes map to zeros."""

    def __init__(self, tape, grads):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, t):
        if t.tape is not self._tape:
            raise KeyError("tensor is not on this tape")
        g = self._grads[t.node]
        return np.zeros_like(t.data) if g is None else g


def _make(data, operands, vjp):
    """Attach the result to the active tape when any operand is tracked there."""
    tape = _active()
    if tape is None:
        return Tensor(data)
    handles = tuple(o.node if (o.tape is tape) else None for o in operands)
    if all(h is None for h in handles):
        return Tensor(data)
    return tape._record(data, handles, vjp)


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return data


def _binary_shapes(a, b, op):
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                         "(only scalar-array broadcasting is supported)")


def _unbroadcast(g, shape):
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


# elementwise ------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("division by zero")
    out = ad / bd
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(a.data), "exp")
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def clamp(a, lo, hi):
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# reductions and structural ops --------------------------------------------------

def sum_(a, axis=None):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), vjp)


def mean(a):
    a = as_tensor(a)
    n = a.size
    shape = a.shape
    return _make(np.asarray(a.data.mean()), (a,),
                 lambda g: (np.full(shape, g / n),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x, b):
    """Row-broadcast ``x[B, n] + b[n]``; the one non-scalar broadcast we need."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_bias: bias {b.shape} does not fit rows of {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def pick(a, index):
    """Select ``a[i, index[i]]`` for every row."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: index {index.shape} does not match rows of {a.shape}")
    rows = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _make(a.data[rows, index], (a,), vjp)


def log_softmax(logits):
    logits = as_tensor(logits)
    if logits.data.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"log_softmax needs [B, C] with C >= 2, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _make(out, (logits,),
                 lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def detach(a):
    return Tensor(as_tensor(a).data)
