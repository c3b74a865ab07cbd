"""A minimal reverse-mode autodiff engine on float64 numpy arrays.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure propagating gradients to them.  ``backward(loss)`` materializes the
recorded graph in topological order (the tape) and walks it once in reverse.
A tensor graph belongs to a single thread; nothing here synchronizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """An op produced (or was given) NaN or infinity."""


class Tensor:
    """A float64 array node in the autodiff graph.

    ``requires_grad`` marks trainable leaves.  Interior nodes accumulate
    gradients whenever any ancestor is trainable.  Data entering the graph
    must be finite; every op re-checks its output.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "grad_fn", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), grad_fn=None, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor {name!r}")
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.name = name
        self.grad = np.zeros_like(arr) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={self.requires_grad})"

    # Small amount of operator sugar; the module-level functions are the API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return hadamard(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class Tape:
    """The op nodes reachable from a root, in topological order."""

    nodes: list[Tensor] = field(default_factory=list)


def build_tape(root: Tensor) -> Tape:
    """Topologically order the graph below ``root`` (parents first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return Tape(nodes=order)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Accumulates into each reachable tensor's ``.grad`` (visiting every node
    exactly once) and returns a map of those tensors to their gradients.
    Trainable tensors not reachable from ``loss`` keep their zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any trainable tensor")
    tape = build_tape(loss)
    loss.grad = loss.grad + np.ones_like(loss.data)
    grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        if not node.requires_grad:
            continue
        grads[node] = node.grad
        if node.grad_fn is not None:
            node.grad_fn(node.grad)
    return grads


def zero_grad(params) -> None:
    for p in params:
        if p.grad is not None:
            p.grad[...] = 0.0


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    out.grad_fn = grad_fn
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    out.grad_fn = grad_fn
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g, b.data.shape)

    out.grad_fn = grad_fn
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    out.grad_fn = grad_fn
    return out


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * s, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * s

    out.grad_fn = grad_fn
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of nothing")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def grad_fn(g: np.ndarray) -> None:
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                t.grad += g[tuple(index)]
            offset += size

    out.grad_fn = grad_fn
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # Piecewise-stable form: never exponentiates a large positive number.
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * y * (1.0 - y)

    out.grad_fn = grad_fn
    return out


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * (1.0 - y * y)

    out.grad_fn = grad_fn
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * mask

    out.grad_fn = grad_fn
    return out


def row_softmax(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"row_softmax needs a 2-D tensor, got {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            a.grad += y * (g - dot)

    out.grad_fn = grad_fn
    return out


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * a.data, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g * 2.0 * a.data

    out.grad_fn = grad_fn
    return out


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all entries, as a (1, 1) scalar tensor."""
    a = _as_tensor(a)
    out = Tensor(np.array([[a.data.sum()]]), parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += np.full_like(a.data, float(g.reshape(-1)[0]))

    out.grad_fn = grad_fn
    return out


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.T, parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g.T

    out.grad_fn = grad_fn
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    out.grad_fn = grad_fn
    return out


def regroup_rows(a: Tensor, outer: int, inner: int) -> Tensor:
    """Reorder rows from outer-major to inner-major blocks.

    Input row ``o * inner + i`` becomes output row ``i * outer + o``.
    Used to re-layout batched per-way features so a shared matrix can
    left-multiply across one of the two grouping axes.
    """
    a = _as_tensor(a)
    rows, cols = a.data.shape
    if rows != outer * inner:
        raise ValueError(f"cannot regroup {rows} rows as {outer} x {inner}")
    out = Tensor(
        a.data.reshape(outer, inner, cols).transpose(1, 0, 2).reshape(inner * outer, cols),
        parents=(a,),
    )

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad += g.reshape(inner, outer, cols).transpose(1, 0, 2).reshape(rows, cols)

    out.grad_fn = grad_fn
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data[start:stop], parents=(a,))

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a.grad[start:stop] += g

    out.grad_fn = grad_fn
    return out
