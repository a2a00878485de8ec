"""A small reverse-mode differentiation engine over numpy arrays.

Each :class:`Tensor` remembers the tensors it was computed from together with
a closure mapping its output gradient to gradients of those inputs.
:func:`backward` walks the resulting graph in reverse topological order.

Only the handful of primitives the model needs are provided. Broadcasting
follows numpy rules; gradients are summed back to the input shapes.

Values are checked for finiteness as they are produced, so a NaN or Inf is
reported at the primitive that created it rather than at the loss.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError


def subgradient_abs(x):
    """Derivative of ``|x|``: ``sign(x)``, with 0 chosen at the kink."""
    return np.sign(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, parents=(), op: str = "const"):
        self.value = np.asarray(value, dtype=np.float64)
        # each parent entry: (tensor, fn mapping out-grad -> in-grad)
        self.parents: tuple[tuple["Tensor", Callable], ...] = parents
        self.op = op
        self.grad: np.ndarray | None = None
        if parents and not np.all(np.isfinite(self.value)):
            raise NumericalError(f"non-finite value produced by '{op}'")

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)


class Parameter(Tensor):
    """A trainable leaf. ``value`` may be a view into shared storage."""

    def __init__(self, value, name: str = ""):
        super().__init__(value, op="param")
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op, *parents):
    return Tensor(value, tuple(parents), op)


# -- primitives --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value, "add",
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, "neg", (a, lambda g: -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value, "mul",
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value
    return _node(
        out, "div",
        (a, lambda g: _unbroadcast(g / b.value, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / b.value, b.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product of 2-D operands (a vector operand is treated as 1×n / n×1)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def grad_a(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        if av.ndim == 1:
            return bv @ g
        return g @ bv.T

    def grad_b(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g

    return _node(av @ bv, "matmul", (a, grad_a), (b, grad_b))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.value), "abs", (a, lambda g: g * subgradient_abs(a.value)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, "tanh", (a, lambda g: g * (1.0 - out**2)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.value)
    # d/dx log(1 + e^x) = logistic(x), evaluated without overflow
    return _node(out, "softplus", (a, lambda g: g * np.exp(a.value - out)))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _node(out, "exp", (a, lambda g: g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node(out, "log", (a, lambda g: g / a.value))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value**2, "square", (a, lambda g: 2.0 * g * a.value))


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def grad(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _node(np.sum(a.value, axis=axis), "sum", (a, grad))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.T, "transpose", (a, lambda g: g.T))


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def grad(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return out

    return _node(a.value[index], "index", (a, grad))


# -- driver --------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into every reachable :class:`Parameter`."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order = _toposort(root)
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        for parent, fn in node.parents:
            contrib = fn(g)
            key = id(parent)
            grads[key] = grads[key] + contrib if key in grads else contrib
    for node in (n for n in order if isinstance(n, Parameter)):
        if not np.all(np.isfinite(node.grad)):
            raise NumericalError(f"non-finite gradient for parameter {node.name!r}")


def gradient(objective: Callable[[], Tensor], params: Sequence[Parameter]) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``objective()`` and return its value and per-parameter gradients.

    Accumulators are reset first, so repeated calls give identical results.
    """
    for p in params:
        p.zero_grad()
    out = objective()
    if not np.isfinite(out.value):
        raise NumericalError(f"objective is non-finite (last op '{out.op}')")
    backward(out)
    return float(out.value), [p.grad.copy() for p in params]


def numerical_gradient(f: Callable[[], float], arrays: Iterable[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``f`` w.r.t. each array, perturbed in place."""
    result = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        result.append(g)
    return result
