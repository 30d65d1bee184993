"""Reverse-mode automatic differentiation over small dense float64 matrices.

Values are 2-D C-contiguous numpy arrays; vectors are (n, 1) columns and
scalars are (1, 1). Only the operations the model variants need exist, and
none of them broadcast beyond the documented cases. Numeric work routes
through the selected kernel backend (see convimpact._kernels).

Gradients accumulate across backward() calls until explicitly zeroed; the
training loop works on fresh leaf nodes each step instead. backward() never
mutates forward values.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import ContractError, DimensionError, EmptySequenceError


def _as_matrix(value) -> np.ndarray:
    """Coerce scalars to (1,1), 1-D to a column, 2-D passes through."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Node:
    """One vertex of the computation graph.

    value is read-only by convention once created; grad starts as None
    (lazily zero) and receives accumulated adjoints from backward().
    """

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = value if isinstance(value, np.ndarray) else _as_matrix(value)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={self._backward is None})"


def leaf(value) -> Node:
    """Create a graph input (parameter or constant)."""
    return Node(_as_matrix(value))


def _require_same_shape(a: Node, b: Node, op: str):
    if a.value.shape != b.value.shape:
        raise DimensionError(
            f"{op}: shapes {a.value.shape} and {b.value.shape} do not match"
        )


def matmul(a: Node, b: Node) -> Node:
    """Matrix product [m,k] @ [k,n] -> [m,n]."""
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree for {a.value.shape} @ {b.value.shape}"
        )
    out_val = K.matmul(a.value, b.value)

    def backward(g):
        return K.matmul_grad_a(g, b.value), K.matmul_grad_b(a.value, g)

    return Node(out_val, (a, b), backward)


def add(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "add")
    return Node(K.add(a.value, b.value), (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "sub")
    return Node(K.sub(a.value, b.value), (a, b), lambda g: (g, K.scale(g, -1.0)))


def mul(a: Node, b: Node) -> Node:
    _require_same_shape(a, b, "mul")

    def backward(g):
        return K.mul(g, b.value), K.mul(g, a.value)

    return Node(K.mul(a.value, b.value), (a, b), backward)


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(K.scale(a.value, c), (a,), lambda g: (K.scale(g, c),))


def add_bias(a: Node, bias: Node) -> Node:
    """Broadcast a (1,1) scalar bias over every entry of a."""
    if bias.value.shape != (1, 1):
        raise DimensionError(f"add_bias: bias must be (1,1), got {bias.value.shape}")

    def backward(g):
        return g, np.array([[g.sum()]])

    return Node(a.value + bias.value[0, 0], (a, bias), backward)


def add_rowvec(a: Node, b: Node) -> Node:
    """Broadcast a (1,n) row vector over the rows of a (m,n) matrix."""
    if b.value.shape != (1, a.value.shape[1]):
        raise DimensionError(
            f"add_rowvec: expected row (1,{a.value.shape[1]}), got {b.value.shape}"
        )

    def backward(g):
        return g, g.sum(axis=0, keepdims=True)

    return Node(a.value + b.value, (a, b), backward)


def sigmoid(a: Node) -> Node:
    y = K.sigmoid(a.value)
    return Node(y, (a,), lambda g: (K.sigmoid_grad(y, g),))


def tanh(a: Node) -> Node:
    y = K.tanh(a.value)
    return Node(y, (a,), lambda g: (K.tanh_grad(y, g),))


def softmax_rows(a: Node) -> Node:
    y = K.softmax_rows(a.value)
    return Node(y, (a,), lambda g: (K.softmax_rows_grad(y, g),))


def transpose(a: Node) -> Node:
    out = np.ascontiguousarray(a.value.T)
    return Node(out, (a,), lambda g: (np.ascontiguousarray(g.T),))


def concat_cols(a: Node, b: Node) -> Node:
    """[m,p] ++ [m,q] -> [m,p+q]."""
    if a.value.shape[0] != b.value.shape[0]:
        raise DimensionError(
            f"concat_cols: row counts differ, {a.value.shape} vs {b.value.shape}"
        )
    p = a.value.shape[1]

    def backward(g):
        return (
            np.ascontiguousarray(g[:, :p]),
            np.ascontiguousarray(g[:, p:]),
        )

    return Node(np.concatenate([a.value, b.value], axis=1), (a, b), backward)


def stack_rows(nodes: Sequence[Node]) -> Node:
    """Stack N nodes of shape (1,n) into one (N,n) matrix."""
    nodes = list(nodes)
    if not nodes:
        raise EmptySequenceError("stack_rows: no rows to stack")
    cols = nodes[0].value.shape[1]
    for n in nodes:
        if n.value.shape != (1, cols):
            raise DimensionError(
                f"stack_rows: expected (1,{cols}) rows, got {n.value.shape}"
            )

    def backward(g):
        return tuple(np.ascontiguousarray(g[i : i + 1, :]) for i in range(len(nodes)))

    return Node(np.concatenate([n.value for n in nodes], axis=0), nodes, backward)


def take_row(a: Node, i: int) -> Node:
    if not 0 <= i < a.value.shape[0]:
        raise ContractError(f"take_row: row {i} out of range for shape {a.value.shape}")

    def backward(g):
        ga = np.zeros_like(a.value)
        ga[i, :] = g[0, :]
        return (ga,)

    return Node(np.ascontiguousarray(a.value[i : i + 1, :]), (a,), backward)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    if not (0 <= start < stop <= a.value.shape[1]):
        raise ContractError(
            f"slice_cols: [{start}:{stop}] out of range for shape {a.value.shape}"
        )

    def backward(g):
        ga = np.zeros_like(a.value)
        ga[:, start:stop] = g
        return (ga,)

    return Node(np.ascontiguousarray(a.value[:, start:stop]), (a,), backward)


def mul_mask(a: Node, mask: np.ndarray) -> Node:
    """Elementwise multiply by a constant array (dropout mask)."""
    if mask.shape != a.value.shape:
        raise DimensionError(
            f"mul_mask: mask shape {mask.shape} does not match {a.value.shape}"
        )
    mask = np.ascontiguousarray(mask, dtype=np.float64)
    return Node(K.mul(a.value, mask), (a,), lambda g: (K.mul(g, mask),))


def weighted_mean(ratings: Node, weights: Node) -> Node:
    """sum(r*w)/sum(w) over (N,1) columns, differentiable in both inputs."""
    _require_same_shape(ratings, weights, "weighted_mean")
    if ratings.value.shape[0] == 0:
        raise EmptySequenceError("weighted_mean: empty sequence")
    if ratings.value.shape[1] != 1:
        raise DimensionError(
            f"weighted_mean: expected (N,1) columns, got {ratings.value.shape}"
        )
    q, wsum = K.weighted_mean(ratings.value, weights.value)

    def backward(g):
        return K.weighted_mean_grad(ratings.value, weights.value, q, wsum, float(g[0, 0]))

    return Node(np.array([[q]]), (ratings, weights), backward)


def mean_all(a: Node) -> Node:
    """Arithmetic mean of every entry, as a (1,1) node."""
    n = a.value.size
    if n == 0:
        raise EmptySequenceError("mean_all: empty input")

    def backward(g):
        return (np.full_like(a.value, float(g[0, 0]) / n),)

    return Node(np.array([[float(a.value.sum()) / n]]), (a,), backward)


def mse(pred: Node, target: np.ndarray) -> Node:
    """Mean squared error against a constant target of the same shape."""
    target = _as_matrix(target)
    if target.shape != pred.value.shape:
        raise ContractError(
            f"mse: target shape {target.shape} does not match {pred.value.shape}"
        )
    loss = K.mse(pred.value, target)

    def backward(g):
        return (K.mse_grad(pred.value, target, float(g[0, 0])),)

    return Node(np.array([[loss]]), (pred,), backward)


_ELEMENTWISE = {"add": add, "mul": mul, "sub": sub, "sigmoid": sigmoid,
                "tanh": tanh, "scale": scale}


def elementwise(op: str, *inputs):
    """Dispatch to one of the elementwise operations by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"elementwise: unknown op {op!r}") from None
    return fn(*inputs)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Accumulate dLoss/dNode into .grad for every node reachable from loss.

    Returns the adjoint of each node in this pass. Repeated calls without
    zeroing add another full gradient into .grad.
    """
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward: loss must be scalar (1,1), got {loss.value.shape}")

    order = _topo_order(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg

    result: dict[Node, np.ndarray] = {}
    for node in order:
        g = adjoint.get(id(node))
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        result[node] = g
    return result


def zero_gradients(nodes: Iterable[Node]):
    for n in nodes:
        n.zero_grad()
