"""Reverse-mode differentiation over dense matrices.

Every value on the tape is a 2-D float64 array; scalars are 1x1. Sparse
matrices enter only as constant left factors (adjacency is data, gradients
flow through dense operands only). Each operation computes its forward value
eagerly and registers a closure that routes the upstream gradient to the
parents, so a graph is built once per step and discarded.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import NumericError, ShapeError
from .linalg import CsrMatrix


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "name", "requires_grad", "_parents", "_backward", "_backward_ran")

    def __init__(
        self,
        value: np.ndarray,
        name: str,
        requires_grad: bool,
        parents: tuple[Node, ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ShapeError(f"node '{name}' must hold a 2-D value, got ndim={self.value.ndim}")
        self.grad: np.ndarray | None = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._backward_ran = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += delta

    def __repr__(self) -> str:
        return f"Node({self.name}, shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value, name: str = "const") -> Node:
    value = np.atleast_2d(np.asarray(value, dtype=np.float64))
    return Node(value, name=name, requires_grad=False)


def _describe(*nodes: Node) -> str:
    return ", ".join(f"'{n.name}' {n.shape}" for n in nodes)


def _result(value, parents: tuple[Node, ...], name: str, backward: Callable[[np.ndarray], None]) -> Node:
    needs = any(p.requires_grad for p in parents)
    return Node(value, name=name, requires_grad=needs, parents=parents, backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Reverse numpy broadcasting of a 2-D operand: sum over expanded axes.
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: Node, b: Node, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible operands {_describe(a, b)}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Node, b: Node, transpose_a: bool = False, transpose_b: bool = False) -> Node:
    av = a.value.T if transpose_a else a.value
    bv = b.value.T if transpose_b else b.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ for {_describe(a, b)}"
            f" (transpose_a={transpose_a}, transpose_b={transpose_b})"
        )
    out_value = av @ bv

    def backward(grad):
        if a.requires_grad:
            da = grad @ bv.T
            a.accumulate(da.T if transpose_a else da)
        if b.requires_grad:
            db = av.T @ grad
            b.accumulate(db.T if transpose_b else db)

    return _result(out_value, (a, b), "matmul", backward)


def sparse_matmul(s: CsrMatrix, x: Node) -> Node:
    """Product S @ x with a constant sparse left factor."""
    if s.cols != x.shape[0]:
        raise ShapeError(f"sparse_matmul: sparse {s.rows}x{s.cols} vs {_describe(x)}")
    out_value = s.matmul_dense(x.value)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(s.t_matmul_dense(grad))

    return _result(out_value, (x,), "sparse_matmul", backward)


def relu(x: Node) -> Node:
    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * (x.value > 0.0))

    return _result(np.maximum(x.value, 0.0), (x,), "relu", backward)


def add_row_bias(x: Node, bias: Node) -> Node:
    """Add a 1 x m bias row to every row of x."""
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_row_bias: bias must be 1x{x.shape[1]}, got {_describe(bias)}")

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad)
        if bias.requires_grad:
            bias.accumulate(grad.sum(axis=0, keepdims=True))

    return _result(x.value + bias.value, (x, bias), "add_row_bias", backward)


def add(a: Node, b: Node) -> Node:
    _broadcastable(a, b, "add")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad, b.shape))

    return _result(a.value + b.value, (a, b), "add", backward)


def sub(a: Node, b: Node) -> Node:
    _broadcastable(a, b, "sub")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-grad, b.shape))

    return _result(a.value - b.value, (a, b), "sub", backward)


def mul(a: Node, b: Node) -> Node:
    _broadcastable(a, b, "mul")

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(grad * a.value, b.shape))

    return _result(a.value * b.value, (a, b), "mul", backward)


def div(a: Node, b: Node) -> Node:
    _broadcastable(a, b, "div")
    out_value = a.value / b.value

    def backward(grad):
        if a.requires_grad:
            a.accumulate(_unbroadcast(grad / b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-grad * out_value / b.value, b.shape))

    return _result(out_value, (a, b), "div", backward)


def exp(x: Node) -> Node:
    out_value = np.exp(x.value)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * out_value)

    return _result(out_value, (x,), "exp", backward)


def log(x: Node) -> Node:
    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad / x.value)

    return _result(np.log(x.value), (x,), "log", backward)


def sqrt(x: Node) -> Node:
    out_value = np.sqrt(x.value)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * 0.5 / out_value)

    return _result(out_value, (x,), "sqrt", backward)


def square(x: Node) -> Node:
    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * 2.0 * x.value)

    return _result(x.value * x.value, (x,), "square", backward)


def scale(x: Node, c: float) -> Node:
    c = float(c)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * c)

    return _result(x.value * c, (x,), "scale", backward)


def clip(x: Node, lo: float, hi: float) -> Node:
    # Gradient passes wherever the input lies inside [lo, hi].
    mask = (x.value >= lo) & (x.value <= hi)

    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * mask)

    return _result(np.clip(x.value, lo, hi), (x,), "clip", backward)


def reduce_sum(x: Node, axis: int | None = None) -> Node:
    if axis is None:
        out_value = np.array([[x.value.sum()]])
    elif axis in (0, 1):
        out_value = x.value.sum(axis=axis, keepdims=True)
    else:
        raise ShapeError(f"reduce_sum: axis must be None, 0 or 1, got {axis}")

    def backward(grad):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(grad, x.shape))

    return _result(out_value, (x,), "reduce_sum", backward)


def reduce_mean(x: Node, axis: int | None = None) -> Node:
    count = x.value.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / count)


def frobenius_sq(x: Node) -> Node:
    def backward(grad):
        if x.requires_grad:
            x.accumulate(grad * 2.0 * x.value)

    return _result(np.array([[np.sum(x.value * x.value)]]), (x,), "frobenius_sq", backward)


# ---------------------------------------------------------------------------
# graph traversal


def _topological_order(loss: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Populate gradients of every trainable leaf reachable from the loss.

    The loss must be 1x1. Each node is visited exactly once, in reverse
    topological order; a second call on the same loss node is rejected.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss '{loss.name}' must be 1x1, got {loss.shape}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran for this graph; rebuild it before calling again")
    if not np.isfinite(loss.value[0, 0]):
        raise NumericError(f"backward: loss '{loss.name}' is non-finite")
    loss._backward_ran = True
    if not loss.requires_grad:
        return
    loss.grad = np.ones((1, 1))
    for node in reversed(_topological_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not loss:
                node.grad = None  # free intermediate gradients promptly


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ParamSet:
    """Ordered, uniquely named collection of trainable leaf nodes.

    Iteration order is insertion order, which fixes initialization and
    update order for deterministic training.
    """

    def __init__(self):
        self._params: dict[str, Node] = {}

    def add(self, name: str, value: np.ndarray) -> Node:
        if name in self._params:
            raise ValueError(f"parameter '{name}' already registered")
        node = Node(np.atleast_2d(np.asarray(value, dtype=np.float64)), name=name, requires_grad=True)
        node.grad = np.zeros_like(node.value)
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Node]]:
        return self._params.items()

    def zero_grad(self) -> None:
        for node in self._params.values():
            node.grad = np.zeros_like(node.value)

    def subset(self, names: Iterable[str]) -> "ParamSet":
        """View over a subset of parameters; the nodes are shared."""
        out = ParamSet()
        for name in names:
            out._params[name] = self._params[name]
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self._params.items()}


def gradient_check(
    loss_fn: Callable[[ParamSet], Node], params: ParamSet, eps: float = 1e-5
) -> float:
    """Max relative gap between analytic and central-difference gradients.

    The loss builder must be deterministic (any sampling frozen outside).
    Relative error per entry is |analytic - fd| / max(1, |fd|).
    """
    if len(params) == 0:
        return 0.0
    params.zero_grad()
    loss = loss_fn(params)
    if not np.isfinite(loss.value[0, 0]):
        raise NumericError("gradient_check: loss is non-finite")
    backward(loss)
    analytic = {name: node.grad.copy() for name, node in params.items()}

    worst = 0.0
    for name, node in params.items():
        base = node.value.copy()
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            node.value[idx] = base[idx] + eps
            up = loss_fn(params).value[0, 0]
            node.value[idx] = base[idx] - eps
            down = loss_fn(params).value[0, 0]
            node.value[idx] = base[idx]
            fd = (up - down) / (2.0 * eps)
            rel = abs(analytic[name][idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
            it.iternext()
        node.value[...] = base
    return worst
