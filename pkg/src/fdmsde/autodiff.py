"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The engine is define-by-run: each operation appends a node to a `Tape`,
computing its forward value eagerly and storing a closure that routes the
upstream gradient to its parents.  The op set is exactly what the simulator
and the score need: add, sub, mul, matmul, tanh, softplus, exp, neg, sum,
mean, scale, concat, slice (rectangular block), squared-norm.

Arrays are immutable by convention: no op writes into an input, and
gradient accumulation always allocates (`g = g + h`, never `g += h`), so
values may be shared freely between tapes.

Broadcasting is restricted to bias-add style: a (m, n) array combined with
a (1, n) row via add/sub.  Everything else must match shapes exactly.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Node",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "matmul",
    "tanh",
    "softplus",
    "exp",
    "neg",
    "asum",
    "amean",
    "scale",
    "concat",
    "block",
    "squared_norm",
]


class ShapeError(ValueError):
    """Raised when an op is recorded with incompatible input shapes."""


class Node:
    """One value on the tape.  Leaves carry parameters; constants are
    recorded but excluded from gradient traversal."""

    __slots__ = ("tape", "index", "value", "op", "parents", "tracked", "_backward", "grad")

    def __init__(self, tape, value, op, parents, tracked, backward):
        self.tape = tape
        self.value = value
        self.op = op
        self.parents = parents
        self.tracked = tracked
        self._backward = backward
        self.grad = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape}, idx={self.index})"


class Tape:
    """Ordered record of operations.  Single-writer: one tape must not be
    recorded into concurrently; independent tapes are fully independent."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        return Node(self, arr, "leaf", (), True, None)

    def constant(self, value) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        return Node(self, arr, "const", (), False, None)

    def leaves(self):
        return [n for n in self.nodes if n.op == "leaf"]

    def backward(self, root: Node) -> dict[int, np.ndarray]:
        """Gradients of the scalar `root` with respect to every leaf.

        Returns a map from leaf node index to an array of the leaf's shape;
        leaves not reachable from the root get exact zeros.
        """
        if root.tape is not self:
            raise ValueError("root node belongs to a different tape")
        if root.value.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {root.value.shape}")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        out = {}
        for node in self.nodes:
            if node.op == "leaf":
                out[node.index] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return out


def _accumulate(parent: Node, g: np.ndarray):
    if not parent.tracked:
        return
    parent.grad = g if parent.grad is None else parent.grad + g


def _tracked(*parents) -> bool:
    return any(p.tracked for p in parents)


def _bias_broadcast(op, a, b):
    """Validate add/sub shapes; returns True when b is a broadcast row."""
    if a.shape == b.shape:
        return False
    if (
        a.value.ndim == 2
        and b.value.ndim == 2
        and b.shape[0] == 1
        and a.shape[1] == b.shape[1]
    ):
        return True
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Node, b: Node) -> Node:
    row = _bias_broadcast("add", a, b)
    value = a.value + b.value

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0, keepdims=True) if row else g)

    return Node(a.tape, value, "add", (a, b), _tracked(a, b), backward)


def sub(a: Node, b: Node) -> Node:
    row = _bias_broadcast("sub", a, b)
    value = a.value - b.value

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g.sum(axis=0, keepdims=True) if row else -g)

    return Node(a.tape, value, "sub", (a, b), _tracked(a, b), backward)


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    value = a.value * b.value

    def backward(g):
        _accumulate(a, g * b.value)
        _accumulate(b, g * a.value)

    return Node(a.tape, value, "mul", (a, b), _tracked(a, b), backward)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    value = a.value @ b.value

    def backward(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return Node(a.tape, value, "matmul", (a, b), _tracked(a, b), backward)


def tanh(a: Node) -> Node:
    value = np.tanh(a.value)

    def backward(g):
        _accumulate(a, g * (1.0 - value * value))

    return Node(a.tape, value, "tanh", (a,), a.tracked, backward)


def softplus(a: Node) -> Node:
    value = np.logaddexp(0.0, a.value)

    def backward(g):
        _accumulate(a, g / (1.0 + np.exp(-a.value)))

    return Node(a.tape, value, "softplus", (a,), a.tracked, backward)


def exp(a: Node) -> Node:
    value = np.exp(a.value)

    def backward(g):
        _accumulate(a, g * value)

    return Node(a.tape, value, "exp", (a,), a.tracked, backward)


def neg(a: Node) -> Node:
    def backward(g):
        _accumulate(a, -g)

    return Node(a.tape, -a.value, "neg", (a,), a.tracked, backward)


def asum(a: Node) -> Node:
    """Full reduction to a scalar."""
    value = np.asarray(a.value.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy() if a.shape else g)

    return Node(a.tape, value, "sum", (a,), a.tracked, backward)


def amean(a: Node) -> Node:
    n = a.value.size
    value = np.asarray(a.value.mean())

    def backward(g):
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy() if a.shape else g / n)

    return Node(a.tape, value, "mean", (a,), a.tracked, backward)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return Node(a.tape, a.value * c, "scale", (a,), a.tracked, backward)


def concat(parts: list[Node], axis: int = 1) -> Node:
    if not parts:
        raise ShapeError("concat: needs at least one input")
    ndim = parts[0].value.ndim
    for p in parts[1:]:
        if p.value.ndim != ndim:
            raise ShapeError(f"concat: mixed ranks {[q.shape for q in parts]}")
        for ax in range(ndim):
            if ax != axis and p.shape[ax] != parts[0].shape[ax]:
                raise ShapeError(f"concat: incompatible shapes {[q.shape for q in parts]} on axis {axis}")
    value = np.concatenate([p.value for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return Node(parts[0].tape, value, "concat", tuple(parts), _tracked(*parts), backward)


def block(a: Node, rows: slice, cols: slice | None = None) -> Node:
    """Rectangular slice of a 2-D array (rows, and optionally columns)."""
    if a.value.ndim != 2:
        raise ShapeError(f"slice: expects a 2-D input, got shape {a.shape}")
    if cols is None:
        cols = slice(None)
    value = a.value[rows, cols]

    def backward(g):
        full = np.zeros_like(a.value)
        full[rows, cols] = g
        _accumulate(a, full)

    return Node(a.tape, value, "slice", (a,), a.tracked, backward)


def squared_norm(a: Node) -> Node:
    value = np.asarray(np.sum(a.value * a.value))

    def backward(g):
        _accumulate(a, (2.0 * g) * a.value)

    return Node(a.tape, value, "squared-norm", (a,), a.tracked, backward)
