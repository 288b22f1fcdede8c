"""Dense tensor with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (float32 by default, float64 when the
gradient checker asks for it). Every differentiable operation records a
:class:`Node` holding its parents and a backward rule; :meth:`Tensor.backward`
walks that graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class DomainError(ValueError):
    """Operation is undefined for the given (well-shaped) operands."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded operation in the computation graph."""

    __slots__ = ("op", "parents", "tracked", "backward_fn")
    live = 0

    def __init__(self, op: str, parents: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.parents = tuple(parents)
        # which parents required grad when the op ran; later flag flips are ignored
        self.tracked = tuple(p.requires_grad for p in self.parents)
        self.backward_fn = backward_fn
        Node.live += 1

    def __del__(self):
        Node.live -= 1

    def __repr__(self) -> str:
        return f"Node({self.op}, {len(self.parents)} inputs)"


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = np.float32
        self.data = np.ascontiguousarray(np.asarray(data.data if isinstance(data, Tensor) else data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        # set by sigmoid so that bce_loss can use the stable logit form
        self._logits: Optional[Tensor] = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._logits = None
        out._node = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._node = Node(op, parents, backward_fn)
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(ancestor) into ``.grad`` of every tracked ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without an explicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        elif np.shape(grad) != self.shape:
            raise ShapeError(f"gradient shape {np.shape(grad)} does not match tensor shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad and has no recorded graph")

        order = self._topological_order()
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for t in order:
            g = pending.pop(id(t), None)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g
            if t._node is None:
                continue
            parent_grads = t._node.backward_fn(g)
            for p, tracked, pg in zip(t._node.parents, t._node.tracked, parent_grads):
                if pg is None or not tracked:
                    continue
                key = id(p)
                pending[key] = pg if key not in pending else pending[key] + pg

    def _topological_order(self) -> list:
        order: list = []
        seen = set()
        stack = [(self, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p, tracked in zip(t._node.parents, t._node.tracked):
                    if tracked and id(p) not in seen:
                        stack.append((p, False))
        order.reverse()
        return order

    # -- elementwise arithmetic ------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other) -> "Tensor":
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __pow__(self, exponent) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def flatten(self) -> "Tensor":
        """Flatten all but the leading (batch) axis."""
        return reshape(self, (self.shape[0], -1))

    def abs(self) -> "Tensor":
        return tabs(self)


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")
    out = a.data * b.data

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "mul")


def power(a: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    out = a.data**e

    def backward(g):
        return (g * e * a.data ** (e - 1.0),)

    return Tensor._result(out.astype(a.dtype, copy=False), (a,), backward, "pow")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward, "matmul")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return Tensor._result(out, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")
