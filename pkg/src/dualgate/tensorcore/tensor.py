"""Dense tensor with a tape-free reverse-mode autodiff graph.

Every op returns a new :class:`Tensor` holding references to its parents and
a closure that pushes the output gradient back to them. ``backward`` runs the
closures in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ConfigurationError, NumericError

_state = {"dtype": np.float32, "grad": True}


def default_dtype() -> type:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype):
    """Switch the dtype used for new tensors (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigurationError(f"unsupported precision {dtype}")
    prev = _state["dtype"]
    _state["dtype"] = dtype
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: Sequence["Tensor"] = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype != _state["dtype"]:
            arr = arr.astype(_state["dtype"])
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: Callable) -> "Tensor":
        parents = tuple(parents)
        if _state["grad"] and any(p.requires_grad for p in parents):
            return cls(data, requires_grad=True, _parents=parents, _backward=backward)
        return cls(data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None, retain_graph: bool = False) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ConfigurationError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if not retain_graph and node._parents:
                # interior nodes release their gradient and graph edges
                node.grad = None if node is not self else node.grad
                node._parents = ()
                node._backward = None

    # -- elementwise arithmetic ------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(as_tensor(other), self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def check_finite(t: Tensor, what: str) -> Tensor:
    # sum propagates NaN/Inf and is cheaper than isfinite().all()
    if not np.isfinite(t.data.sum(dtype=np.float64)):
        raise NumericError(f"non-finite values in {what}")
    return t


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return Tensor._make(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def backward(g):
        a._accumulate(g * exponent * a.data ** (exponent - 1))

    return Tensor._make(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return Tensor._make(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out = a.data * pos

    def backward(g):
        a._accumulate(g * pos)

    return Tensor._make(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return Tensor._make(out.astype(a.data.dtype, copy=False), (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.data.dtype))

    return Tensor._make(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor._make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ConfigurationError("transpose expects a matrix")

    def backward(g):
        a._accumulate(g.T)

    return Tensor._make(a.data.T, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._make(a.data @ b.data, (a, b), backward)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward the hard values, route the gradient to ``soft`` unchanged."""
    if hard.shape != soft.shape:
        raise ConfigurationError("hard and soft values must share a shape")

    def backward(g):
        soft._accumulate(g)

    return Tensor._make(np.asarray(hard, dtype=soft.data.dtype), (soft,), backward)
