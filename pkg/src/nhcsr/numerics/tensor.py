"""Dense float64 tensors with a reverse-mode tape.

Every differentiable op builds its output through :func:`make_op`, which
records a :class:`TapeNode` holding the parents and a closure mapping the
output gradient to one gradient per parent. :meth:`Tensor.backward` replays
the tape in reverse topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass(eq=False)
class TapeNode:
    op: str
    parents: tuple
    backward: Callable


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) or data.dtype != np.float64 else data
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    # -- reverse pass ----------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(t) into ``t.grad`` for every tracked ancestor ``t``."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != {self.shape}")

        order = _topo_order(self)
        grads = {id(self): grad}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                if t.grad is not None:
                    t.grad = t.grad + g
                else:
                    # leaves get a private copy; interior gradients are never mutated
                    t.grad = g.copy() if t.node is None else g
            if t.node is None:
                continue
            parent_grads = t.node.backward(g)
            for p, pg in zip(t.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # a single reduction is cheap and non-finite whenever any entry is
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite values in result")
    return arr


def make_op(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of ``op``; record the tape node if needed.

    ``backward(g)`` must return one gradient (or None) per parent, each with
    that parent's shape.
    """
    check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_op("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make_op("mul", ad * bd, (a, b), backward)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return make_op("neg", -x.data, (x,), lambda g: (-g,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_op("square", xd * xd, (x,), lambda g: (2.0 * xd * g,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_op("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sin(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_op("sin", np.sin(xd), (x,), lambda g: (g * np.cos(xd),))


def cos(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return make_op("cos", np.cos(xd), (x,), lambda g: (-g * np.sin(xd),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    if np.isinf(y).any():
        raise NumericError("exp: overflow")
    return make_op("exp", y, (x,), lambda g: (g * y,))


def absolute(x) -> Tensor:
    x = as_tensor(x)
    sgn = np.sign(x.data)
    return make_op("abs", np.abs(x.data), (x,), lambda g: (g * sgn,))


def elementwise(x, fn: str, other=None) -> Tensor:
    """Dispatch by name; binary ``mul``/``add`` take ``other``."""
    unary = {"relu": relu, "sin": sin, "cos": cos, "exp": exp, "neg": neg, "square": square}
    if fn in unary:
        return unary[fn](x)
    if fn == "mul":
        return mul(x, other)
    if fn == "add":
        return add(x, other)
    raise ValueError(f"unknown elementwise function {fn!r}")


# ---------------------------------------------------------------- reductions & shape


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)
    return make_op("transpose", np.ascontiguousarray(np.transpose(x.data, axes)), (x,),
                   lambda g: (np.transpose(g, inv),))


def matmul(a, b) -> Tensor:
    """``a`` (..., k) times ``b`` (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]) if b.requires_grad else None
        return ga, gb

    return make_op("matmul", ad @ bd, (a, b), backward)


def gather_rows(x, idx) -> Tensor:
    """Rows of a 2-D tensor ``x`` (N, D) at integer ``idx`` of any shape -> (*idx.shape, D)."""
    from .. import _kernels

    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.int64)
    n, d = x.shape

    def backward(g):
        return (_kernels.scatter_rows(g.reshape(-1, d), idx.ravel(), n),)

    return make_op("gather_rows", x.data[idx], (x,), backward)
