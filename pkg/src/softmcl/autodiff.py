"""A small reverse-mode differentiation engine over float64 numpy arrays.

Every operation returns a :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients.  Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once and
accumulates gradients into every leaf created with ``requires_grad=True``.

Only the operations needed by the encoder and the contrastive losses are
provided.  Broadcasting follows numpy rules; gradients are summed back to the
operand shape.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "gather_rows",
    "concat",
    "tensor_sum",
    "mean",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "l2_normalize",
    "layer_norm",
    "gelu",
    "relu",
    "dropout",
]

L2_EPS = 1e-12

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def zero_grad(self):
        self.grad = None

    # -- backpropagation ----------------------------------------------------
    def backward(self, grad=None):
        """Backpropagate from this tensor, accumulating into leaf ``.grad``."""
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise --------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)

    def backward(g):
        return (g * y,)

    return _node(y, (a,), backward, "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericalError("log of a non-positive value")
    y = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _node(y, (a,), backward, "log")


def relu(a):
    a = as_tensor(a)
    on = a.data > 0

    def backward(g):
        return (g * on,)

    return _node(a.data * on, (a,), backward, "relu")


_GELU_K = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


def gelu(a):
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_K * (x + _GELU_C * (x * x * x)))
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _node(y, (a,), backward, "gelu")


def dropout(a, rate, rng):
    """Inverted dropout; identity when ``rate`` is 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _node(a.data * keep, (a,), backward, "dropout")


# -- shape manipulation -------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k, m = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else ()
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _node(np.transpose(a.data, axes), (a,), backward, "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(y, (a,), backward, "reshape")


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a, index):
    a = as_tensor(a)
    y = np.array(a.data[index], dtype=np.float64)
    basic = _is_basic_index(index)

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _node(y, (a,), backward, "getitem")


def gather_rows(table, ids):
    """``table[ids]`` for a 2-D table; output shape ``ids.shape + (dim,)``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index out of range for table with {table.shape[0]} rows")
    y = table.data[ids]

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (out,)

    return _node(y, (table,), backward, "gather_rows")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(y, tuple(tensors), backward, "concat")


# -- reductions ---------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(y, dtype=np.float64), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- normalisers --------------------------------------------------------------


def _masked_max(x, axis, mask):
    if mask is None:
        return np.max(x, axis=axis, keepdims=True)
    filled = np.where(mask, x, -np.inf)
    m = np.max(filled, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericalError("softmax over a fully masked slice")
    return m


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; positions where ``mask`` is False get exactly 0.

    A False mask entry behaves like a logit of minus infinity.
    """
    a = as_tensor(a)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    z = a.data - _masked_max(a.data, axis, mask)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node(y, (a,), backward, "softmax")


def log_softmax(a, axis=-1, mask=None):
    """Log-softmax along ``axis``; masked positions are excluded and output 0."""
    a = as_tensor(a)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    z = a.data - _masked_max(a.data, axis, mask)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    s = e.sum(axis=axis, keepdims=True)
    y = z - np.log(s)
    p = e / s
    if mask is not None:
        y = np.where(mask, y, 0.0)

    def backward(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _node(y, (a,), backward, "log_softmax")


def l2_normalize(a, axis=-1, eps=L2_EPS):
    """Divide by ``max(||v||, eps)`` along ``axis``."""
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    y = a.data / denom

    def backward(g):
        radial = np.where(big, (g * y).sum(axis=axis, keepdims=True), 0.0)
        return ((g - y * radial) / denom,)

    return _node(y, (a,), backward, "l2_normalize")


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match features {d}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if a.requires_grad:
            gh = g * gain.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(a.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gb = g.sum(axis=lead) if bias.requires_grad else None
        return gx, gg, gb

    return _node(y, (a, gain, bias), backward, "layer_norm")
