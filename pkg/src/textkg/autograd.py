"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the two-stream model needs are provided: 2-D matmul,
batched matmul for attention heads, row-wise softmax/layer-norm, GELU,
row gathering and concatenation, and the reductions used by the loss.
"""

import contextlib

import numpy as np

from . import kernels

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference, finite differences)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class ShapeError(ValueError):
    pass


class MaskError(ValueError):
    """Raised when an attention mask leaves a query row with nothing to attend."""


class Tensor:
    """Array value plus (optionally) a node in the compute graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self):
        return self.data

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf.  ``decay`` marks whether L2 weight decay applies."""

    __slots__ = ("decay",)

    def __init__(self, data, name=None, decay=True):
        super().__init__(data, requires_grad=True, name=name)
        self.decay = decay


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Populate ``.grad`` of every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` to reset.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ------------------------------------------------------------------ elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return _node(a.data + b.data, (a, b), bw)


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g * b.data, sa) if a.requires_grad else None,
                _unbroadcast(g * a.data, sb) if b.requires_grad else None)

    return _node(a.data * b.data, (a, b), bw)


def gelu(x):
    return _node(kernels.gelu(x.data), (x,),
                 lambda g: (kernels.gelu_backward(x.data, g),))


def log(x, floor=0.0):
    """Natural log of ``max(x, floor)``; no gradient flows where x < floor."""
    clipped = np.maximum(x.data, floor)
    live = x.data >= floor

    def bw(g):
        return (np.where(live, g / clipped, 0.0),)

    return _node(np.log(clipped), (x,), bw)


def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _node(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


# ------------------------------------------------------------------ linear algebra


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _node(a.data @ b.data, (a, b), bw)


def bmm(a, b):
    """Batched matmul over a leading axis: (h, m, k) @ (h, k, n)."""
    if (a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0]
            or a.shape[2] != b.shape[1]):
        raise ShapeError(f"bmm dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        return (g @ b.data.transpose(0, 2, 1) if a.requires_grad else None,
                a.data.transpose(0, 2, 1) @ g if b.requires_grad else None)

    return _node(a.data @ b.data, (a, b), bw)


def transpose(x, axes):
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def reshape(x, shape):
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def split_heads(x, heads):
    """(L, d) -> (heads, L, d/heads)."""
    n, d = x.shape
    return transpose(reshape(x, (n, heads, d // heads)), (1, 0, 2))


def merge_heads(x):
    """(heads, L, dh) -> (L, heads*dh)."""
    h, n, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (n, h * dh))


# ------------------------------------------------------------------ row-wise ops


def masked_softmax(logits, mask, allow_empty=False):
    """Softmax over the last axis of ``logits + mask``.

    ``mask`` is an additive (Lq, Lk) array of 0 / -inf, broadcast over any
    leading axes of ``logits``.  Masked entries get exactly zero weight.  A
    row with every entry masked raises ``MaskError`` unless ``allow_empty``,
    in which case that row is all zeros.
    """
    mask = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if logits.shape[-2:] != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    shape = logits.shape
    flat = logits.data.reshape(-1, shape[-1])
    y, empty = kernels.masked_softmax(flat, mask)
    if not allow_empty and empty.any():
        rows = np.flatnonzero(empty) % mask.shape[0]
        raise MaskError(f"fully masked attention rows: {sorted(set(rows.tolist()))}")
    y = y.reshape(shape)

    def bw(g):
        dx = kernels.softmax_backward(y.reshape(-1, shape[-1]), g.reshape(-1, shape[-1]))
        return (dx.reshape(shape),)

    return _node(y, (logits,), bw)


def softmax(x):
    return masked_softmax(x, np.zeros(x.shape[-2:]))


def layer_norm(x, gain, bias):
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layer_norm expects (rows, d>=2), got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} vs input {x.shape}")
    out, xhat, rstd = kernels.layer_norm(x.data, gain.data, bias.data)

    def bw(g):
        return kernels.layer_norm_backward(g, xhat, rstd, gain.data)

    return _node(out, (x, gain, bias), bw)


# ------------------------------------------------------------------ indexing


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, cuts, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def rows(x, start, stop):
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop], (x,), bw)


def take(table, indices):
    """Gather rows of ``table`` (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(table.data[idx], (table,), bw)


def pick(x, indices):
    """Vector of ``x[i, indices[i]]``."""
    idx = np.asarray(indices, dtype=np.int64)
    r = np.arange(len(idx))
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[r, idx] = g
        return (full,)

    return _node(x.data[r, idx], (x,), bw)
