"""Reverse-mode autodiff over numpy arrays.

The op set is fixed to what the embedding network, the attention block and
the classification metric need; it is a recording tape, not a general array
framework.  Broadcasting in binary ops follows numpy for the patterns the
model uses (matching shapes or size-1 axes) and gradients are summed back
over broadcast axes.

Everything runs at the dtype of the inputs: float32 for training, float64
when tests want finite-difference-grade precision.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..exceptions import StateError

_GRAD_ENABLED = True
_FINITE_CHECKS = False


@contextmanager
def no_grad():
    """Disable graph recording (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> None:
    """When on, every op output is asserted finite (tests use this)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # adopt the array; backward fns may hand the same object to two
            # parents, so the second accumulation must not mutate in place
            self.grad = grad if grad.dtype == self.data.dtype \
                else grad.astype(self.data.dtype)
        else:
            self.grad = self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor; releases the recorded graph."""
        if not self.requires_grad:
            raise StateError("backward() on a tensor that did not record a graph")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is None:
                continue  # leaf: keep its accumulated grad
            if node.grad is not None:
                node._backward(node.grad)
            node._backward = None
            node._parents = ()
            node.grad = None  # intermediate grads are not retained

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def custom_op(out_data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an already-computed forward result into the graph.

    ``backward(grad_out)`` must return one gradient array (or None) per
    parent, aligned positionally.  Gradients are accumulated only into
    parents that require them.
    """
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values in op output")
    parents = tuple(p for p in parents)
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        def run(grad_out, _parents=parents, _backward=backward):
            grads = _backward(grad_out)
            for p, g in zip(_parents, grads):
                if p.requires_grad and g is not None:
                    p._accumulate(g)
        out._parents = parents
        out._backward = run
    return out


# -- elementwise and reductions ---------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    out = a.data + b.data
    return custom_op(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                             _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    out = a.data - b.data
    return custom_op(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                             _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    out = a.data * b.data
    return custom_op(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                             _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    out = a.data / b.data
    def back(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb
    return custom_op(out, (a, b), back)


def matmul(a: Tensor, b: Tensor):
    out = a.data @ b.data
    return custom_op(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(x: Tensor):
    out = np.maximum(x.data, 0)
    return custom_op(out, (x,), lambda g: (g * (out > 0),))


def sigmoid(x: Tensor):
    y = 1.0 / (1.0 + np.exp(-x.data))
    return custom_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def texp(x: Tensor):
    y = np.exp(x.data)
    return custom_op(y, (x,), lambda g: (g * y,))


def tlog(x: Tensor):
    return custom_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def tsqrt(x: Tensor):
    y = np.sqrt(x.data)
    return custom_op(y, (x,), lambda g: (g * 0.5 / y,))


def tsum(x: Tensor, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)
    return custom_op(out, (x,), back)


def tmean(x: Tensor, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
    s = tsum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / float(count))


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape):
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    out = x.data.reshape(shape)
    return custom_op(out, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x: Tensor, axes=None):
    axes = tuple(axes) if axes else tuple(reversed(range(x.data.ndim)))
    inv = np.argsort(axes)
    return custom_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def take(x: Tensor, idx):
    """Indexing/slicing; gradients scatter-add back into place."""
    out = x.data[idx]
    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)
    return custom_op(out, (x,), back)


def concat(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return custom_op(out, tensors, back)


def stack_columns(tensors):
    """Stack 1-D tensors of equal length into the columns of a 2-D tensor."""
    return concat([reshape(t, (t.data.shape[0], 1)) for t in tensors], axis=1)
