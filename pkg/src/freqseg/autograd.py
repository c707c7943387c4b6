"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a C-contiguous float64 ndarray and, when it results from
an operation on tensors that require gradients, carries a closure that routes
the upstream gradient to its parents. ``Tensor.backward()`` runs a reverse
topological sweep from a scalar loss. Gradients accumulate additively into
``.grad`` and are lazily allocated.

Broadcasting is deliberately minimal: tensor-tensor arithmetic requires equal
shapes, scalars are accepted everywhere. Layer kernels live in ``layers``.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, repeated backward)."""


class ShapeError(ValueError):
    """Operands with incompatible shapes, naming the offending axis."""


def as_f64(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (the NdArray representation)."""
    return np.ascontiguousarray(x, dtype=np.float64)


class Tensor:
    """Node in a reverse-mode computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() requires a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Fill ``.grad`` of every requires_grad ancestor of this scalar.

        Raises GraphError if this tensor is not scalar, or if it already
        carries a gradient (a second sweep would double-accumulate).
        """
        if self.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if self.grad is not None:
            raise GraphError(
                "backward already called on this graph; gradients would accumulate twice"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar (scalar or same-shape tensor operands) --

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __rsub__(self, other):
        return add(-self, float(other))

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (ea, eb) in enumerate(zip(a.shape, b.shape)):
            if ea != eb:
                raise ShapeError(f"{op}: axis {axis} has extents {ea} vs {eb}")
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")

        def backward(gout):
            if a.requires_grad:
                a.accumulate_grad(gout)
            if b.requires_grad:
                b.accumulate_grad(gout)

        return _make(a.data + b.data, (a, b), backward)

    c = float(b)

    def backward_scalar(gout):
        if a.requires_grad:
            a.accumulate_grad(gout)

    return _make(a.data + c, (a,), backward_scalar)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")

        def backward(gout):
            if a.requires_grad:
                a.accumulate_grad(gout * b.data)
            if b.requires_grad:
                b.accumulate_grad(gout * a.data)

        return _make(a.data * b.data, (a, b), backward)

    c = float(b)

    def backward_scalar(gout):
        if a.requires_grad:
            a.accumulate_grad(gout * c)

    return _make(a.data * c, (a,), backward_scalar)


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "div")

        def backward(gout):
            if a.requires_grad:
                a.accumulate_grad(gout / b.data)
            if b.requires_grad:
                b.accumulate_grad(-gout * a.data / (b.data * b.data))

        return _make(a.data / b.data, (a, b), backward)

    return mul(a, 1.0 / float(b))


def sum_over(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Sum over the given axes (all axes when None); output drops them."""
    if axes is None:
        axes = tuple(range(a.ndim))
    axes = tuple(ax % a.ndim for ax in axes)
    out_data = a.data.sum(axis=axes)

    def backward(gout):
        if a.requires_grad:
            expand = list(a.shape)
            for ax in axes:
                expand[ax] = 1
            a.accumulate_grad(np.broadcast_to(gout.reshape(expand), a.shape))

    return _make(out_data, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    """Mean over every element, returning a 0-d tensor."""
    return mul(sum_over(a), 1.0 / a.size)
