"""Reverse-mode automatic differentiation over float64 arrays.

A :class:`GraphNode` holds a value, an accumulating ``grad`` slot and the
local-gradient rules linking it to its parents.  Ops build a new node per
call; :func:`backward` walks the graph once in reverse topological order.

Gradients accumulate additively, so a node used twice receives the sum of both
path contributions.  Clear them with :func:`zero_grad` (or an optimizer's
``zero_grad``) between steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import ShapeError, as_tensor

GradRule = Callable[[np.ndarray], np.ndarray]


class BackwardError(RuntimeError):
    pass


class NondeterministicFunctionError(RuntimeError):
    pass


class GraphNode:
    __slots__ = ("value", "grad", "parents", "requires_grad", "name", "_backward_done")

    def __init__(self, value, parents: Sequence[tuple["GraphNode", GradRule]] = (),
                 requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"GraphNode{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        zero_grad(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value, name: str | None = None) -> GraphNode:
    return GraphNode(as_tensor(value), requires_grad=True, name=name)


def constant(value) -> GraphNode:
    if isinstance(value, GraphNode):
        return value
    return GraphNode(np.array(value, dtype=np.float64))


def make_node(value, inputs: Iterable[tuple[GraphNode, GradRule]]) -> GraphNode:
    """Create an op output, keeping only the inputs that need gradients."""
    parents = [(node, rule) for node, rule in inputs if node.requires_grad]
    return GraphNode(value, parents, requires_grad=bool(parents))


def _topological_order(root: GraphNode) -> list[GraphNode]:
    order: list[GraphNode] = []
    seen: set[int] = set()
    stack: list[tuple[GraphNode, bool]] = [(root, False)]
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


def backward(root: GraphNode) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node."""
    if root.value.size != 1:
        raise BackwardError(f"backward() needs a scalar root, got shape {root.shape}")
    if root._backward_done:
        raise BackwardError("backward() already ran on this graph; call zero_grad() first")
    root._backward_done = True
    if not root.requires_grad:
        return
    order = _topological_order(root)
    root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        for parent, rule in node.parents:
            parent.grad = parent.grad + rule(node.grad)


def zero_grad(root: GraphNode) -> None:
    for node in _topological_order(root):
        node.grad = np.zeros_like(node.value)
        node._backward_done = False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: GraphNode, b: GraphNode, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}") from None


# differentiable ops -------------------------------------------------------

def add(a, b) -> GraphNode:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")
    return make_node(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> GraphNode:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "sub")
    return make_node(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ])


def mul(a, b) -> GraphNode:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "mul")
    return make_node(a.value * b.value, [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def scale(a: GraphNode, factor: float) -> GraphNode:
    factor = float(factor)
    return make_node(a.value * factor, [(a, lambda g: g * factor)])


def square(a: GraphNode) -> GraphNode:
    return make_node(a.value * a.value, [(a, lambda g: 2.0 * a.value * g)])


def matmul(a, b) -> GraphNode:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.value.ndim == 1:
        return make_node(a.value @ b.value, [
            (a, lambda g: np.outer(g, b.value)),
            (b, lambda g: a.value.T @ g),
        ])
    return make_node(a.value @ b.value, [
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ])


def relu(a: GraphNode) -> GraphNode:
    active = a.value > 0
    return make_node(np.where(active, a.value, 0.0), [(a, lambda g: np.where(active, g, 0.0))])


def max_over_axis(a: GraphNode, axis: int) -> GraphNode:
    """Maximum along ``axis``; the subgradient goes to the first maximal entry."""
    axis = axis % a.value.ndim
    idx = np.expand_dims(np.argmax(a.value, axis=axis), axis)
    out = np.take_along_axis(a.value, idx, axis=axis).squeeze(axis)

    def rule(g):
        grad = np.zeros_like(a.value)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return grad

    return make_node(out, [(a, rule)])


def sum(a: GraphNode, axis: int | None = None) -> GraphNode:  # noqa: A001
    if axis is None:
        return make_node(np.sum(a.value), [(a, lambda g: np.broadcast_to(g, a.shape).copy())])
    axis = axis % a.value.ndim
    return make_node(np.sum(a.value, axis=axis), [
        (a, lambda g: np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()),
    ])


def mean(a: GraphNode, axis: int | None = None) -> GraphNode:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def reshape(a: GraphNode, shape: tuple[int, ...]) -> GraphNode:
    return make_node(a.value.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


def take_rows(table: GraphNode, ids: np.ndarray) -> GraphNode:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)

    def rule(g):
        grad = np.zeros_like(table.value)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return grad

    return make_node(table.value[ids], [(table, rule)])


def sliding_windows(a: GraphNode, width: int) -> GraphNode:
    """(B, L, d) -> (B, L - width + 1, width * d) by concatenating neighbours."""
    batch, length, dim = a.shape
    if not 1 <= width <= length:
        raise ShapeError(f"window width {width} does not fit sequence length {length}")
    n_win = length - width + 1
    out = np.concatenate([a.value[:, k:k + n_win, :] for k in range(width)], axis=2)

    def rule(g):
        grad = np.zeros_like(a.value)
        for k in range(width):
            grad[:, k:k + n_win, :] += g[:, :, k * dim:(k + 1) * dim]
        return grad

    return make_node(out, [(a, rule)])


def softmax_cross_entropy(logits: GraphNode, labels) -> GraphNode:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy expects (B, C) logits and (B,) labels, "
                         f"got {logits.shape} and {labels.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(labels.shape[0])
    loss = -log_probs[rows, labels].mean()

    def rule(g):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return g * probs / labels.shape[0]

    return make_node(loss, [(logits, rule)])


def mse(pred, target) -> GraphNode:
    """Mean squared error."""
    pred, target = constant(pred), constant(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    return mean(square(sub(pred, target)))


# gradient checking ---------------------------------------------------------

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def _scalar(out) -> float:
    value = out.value if isinstance(out, GraphNode) else np.asarray(out, dtype=np.float64)
    if np.size(value) != 1:
        raise ShapeError(f"function must return a scalar, got shape {np.shape(value)}")
    return float(np.reshape(value, ()))


def finite_diff_check(f: Callable, theta, epsilon: float = 1e-5,
                      analytic: np.ndarray | None = None) -> FiniteDiffReport:
    """Compare gradients of ``f`` at ``theta`` against central differences.

    When ``analytic`` is omitted, ``f`` is called once with a parameter node and
    differentiated with :func:`backward`; otherwise ``f`` only ever sees plain
    arrays.  Anything random inside ``f`` must be frozen beforehand, which is
    checked by evaluating ``f(theta)`` twice.

    The relative error per coordinate is ``|a - n| / max(1, |a|)``.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    theta = as_tensor(theta)
    through_graph = analytic is None
    if through_graph:
        node = parameter(theta)
        backward(f(node))
        analytic = node.grad.copy()
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ShapeError(f"analytic gradient shape {analytic.shape} != theta shape {theta.shape}")

    def value_at(t: np.ndarray) -> float:
        return _scalar(f(constant(t)) if through_graph else f(t))

    first, second = value_at(theta.copy()), value_at(theta.copy())
    if first != second:
        raise NondeterministicFunctionError(
            f"f(theta) changed between evaluations ({first!r} vs {second!r}); freeze its RNG")

    numeric = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up, down = theta.copy(), theta.copy()
        up[idx] += epsilon
        down[idx] -= epsilon
        numeric[idx] = (value_at(up) - value_at(down)) / (2.0 * epsilon)

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return FiniteDiffReport(float(rel.max(initial=0.0)), tuple(int(i) for i in worst),
                            analytic, numeric)
