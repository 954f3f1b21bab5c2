"""Tape-based reverse-mode automatic differentiation over float64 arrays.

A :class:`Graph` records every operation as it is evaluated, so the node list
is topologically ordered by construction. :func:`backward` walks it once in
reverse. The op set is deliberately small; anything else is composed from it.
"""
from __future__ import annotations

import weakref
from typing import Callable, Sequence

import numpy as np

from .stable import NumericsError, check_finite

GELU_C = np.sqrt(2.0 / np.pi)
GELU_K = 0.044715


class Node:
    __slots__ = ("graph", "id", "value", "parents", "vjp", "op", "name", "trainable", "requires_grad")

    def __init__(self, graph, value, parents=(), vjp=None, op="leaf", name=None, trainable=False):
        # weak, so a dropped graph is freed by refcounting instead of waiting for the cycle collector
        self.graph = graph if isinstance(graph, weakref.ProxyType) else weakref.proxy(graph)
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.op = op
        self.name = name
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in self.parents)
        self.id = len(graph.nodes)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, id={self.id}, shape={self.shape})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Graph:
    """Operation tape. Leaves are constants or trainable parameters."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def const(self, value, name=None) -> Node:
        return self._append(Node(self, np.asarray(value, dtype=np.float64), name=name))

    def param(self, name: str, value, trainable: bool = True) -> Node:
        return self._append(Node(self, np.asarray(value, dtype=np.float64), name=name, trainable=trainable))

    def record(self, op: str, value: np.ndarray, parents: Sequence[Node], vjp: Callable) -> Node:
        """Append an op result. ``vjp(g)`` returns one gradient (or None) per parent."""
        check_finite(value, f"{op} output")
        return self._append(Node(self, value, parents, vjp, op))

    @property
    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.trainable]


def _lift(a, b):
    if isinstance(a, Node):
        return a, b if isinstance(b, Node) else a.graph.const(b)
    return b.graph.const(a), b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Node:
    a, b = _lift(a, b)
    return a.graph.record("add", a.value + b.value, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = _lift(a, b)
    return a.graph.record("sub", a.value - b.value, (a, b),
                          lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Node:
    a, b = _lift(a, b)
    return a.graph.record("mul", a.value * b.value, (a, b),
                          lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a: Node, b: Node) -> Node:
    a, b = _lift(a, b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise NumericsError("matmul needs operands of rank >= 2")

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape)
        if b.value.ndim == 2:
            gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape)
        return ga, gb

    return a.graph.record("matmul", a.value @ b.value, (a, b), vjp)


def broadcast_to(x: Node, shape) -> Node:
    return x.graph.record("broadcast", np.broadcast_to(x.value, shape).copy(), (x,),
                          lambda g: (_unbroadcast(g, x.shape),))


def relu(x: Node) -> Node:
    mask = x.value > 0
    return x.graph.record("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def gelu(x: Node) -> Node:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    v = x.value
    t = np.tanh(GELU_C * (v + GELU_K * v * v * v))

    def vjp(g):
        d = 0.5 * (1 + t) + 0.5 * v * (1 - t * t) * GELU_C * (1 + 3 * GELU_K * v * v)
        return (g * d,)

    return x.graph.record("gelu", 0.5 * v * (1 + t), (x,), vjp)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Node) -> Node:
    s = _sigmoid(x.value)
    return x.graph.record("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def log(x: Node) -> Node:
    if np.any(x.value <= 0):
        raise NumericsError("log of non-positive value")
    return x.graph.record("log", np.log(x.value), (x,), lambda g: (g / x.value,))


def softmax(x: Node, axis: int = -1) -> Node:
    check_finite(x.value, "logits")
    s = x.value - x.value.max(axis=axis, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=axis, keepdims=True)
    return x.graph.record("softmax", s, (x,),
                          lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_sum_exp(x: Node, axis: int = -1, keepdims: bool = False) -> Node:
    if x.shape[axis] == 0:
        raise NumericsError("log_sum_exp over an empty axis")
    check_finite(x.value, "logits")
    m = x.value.max(axis=axis, keepdims=True)
    e = np.exp(x.value - m)
    tot = e.sum(axis=axis, keepdims=True)
    out = m + np.log(tot)
    p = e / tot

    def vjp(g):
        return (p * (g if keepdims else np.expand_dims(g, axis)),)

    return x.graph.record("log_sum_exp", out if keepdims else np.squeeze(out, axis), (x,), vjp)


def layer_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    v = x.value
    mu = v.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(v.var(axis=-1, keepdims=True) + eps)
    xhat = (v - mu) * inv

    def vjp(g):
        gx = g * gamma.value
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return x.graph.record("layer_norm", xhat * gamma.value + beta.value, (x, gamma, beta), vjp)


def dropout(x: Node, p: float, rng: np.random.Generator | None, active: bool) -> Node:
    """Inverted dropout: kept units are scaled by 1/(1-p), so inactive mode is a pass-through."""
    if not active or p == 0.0:
        return x
    if rng is None:
        raise NumericsError("active dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x.graph.record("dropout", x.value * mask, (x,), lambda g: (g * mask,))


def embedding(table: Node, indices) -> Node:
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return (out,)

    return table.graph.record("embedding", table.value[idx], (table,), vjp)


def sum(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return x.graph.record("sum", np.asarray(x.value.sum(axis=axis, keepdims=keepdims)), (x,), vjp)


def mean(x: Node, axis=None, keepdims: bool = False) -> Node:
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Node, shape) -> Node:
    return x.graph.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Node, axes) -> Node:
    inv = np.argsort(axes)
    return x.graph.record("transpose", np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),))


def backward(graph: Graph, loss: Node) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every trainable leaf.

    Each node is visited once, in reverse recording order; gradients reaching
    a node along several paths are summed. Non-trainable leaves get nothing.
    """
    if loss.value.size != 1:
        raise NumericsError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(graph.nodes[: loss.id + 1]):
        g = grads.pop(node.id, None) if node.vjp is not None else grads.get(node.id)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return {
        p.name: grads.get(p.id, np.zeros_like(p.value)).reshape(p.shape)
        for p in graph.parameters
    }


def grad_check(build: Callable[[Graph, dict], Node], point: dict[str, np.ndarray], step: float = 1e-5) -> float:
    """Worst elementwise relative error between analytic and central-difference gradients.

    ``build(graph, params)`` must construct the loss from the parameter nodes
    it is handed; it is re-run for every perturbation. Relative error uses a
    denominator floor of 1e-8.
    """
    if step <= 0:
        raise NumericsError("step must be positive")

    def evaluate(values):
        g = Graph()
        nodes = {k: g.param(k, v) for k, v in values.items()}
        return g, build(g, nodes)

    g, loss = evaluate(point)
    analytic = backward(g, loss)
    worst = 0.0
    for name, base in point.items():
        base = np.asarray(base, dtype=np.float64)
        for idx in np.ndindex(base.shape):
            vals = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
            vals[name][idx] = base[idx] + step
            up = float(evaluate(vals)[1].value)
            vals[name][idx] = base[idx] - step
            down = float(evaluate(vals)[1].value)
            numeric = (up - down) / (2 * step)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
