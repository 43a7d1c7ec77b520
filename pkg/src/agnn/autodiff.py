"""A small reverse-mode tape for the fixed set of operations AGNN uses.

Every forward op appends a :class:`Node` to a :class:`Tape`; :func:`backward`
walks the tape in reverse and accumulates gradients into the
:class:`ParamTensor` leaves. Sparse operators and plain arrays enter the
tape as constants and never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from agnn.errors import NumericError


@dataclass(eq=False)
class ParamTensor:
    name: str
    value: np.ndarray
    decay: bool = True
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def zero_grads(params: Sequence[ParamTensor]) -> None:
    for p in params:
        p.zero_grad()


class Node:
    __slots__ = ("value", "parents", "backward_fn", "param", "requires_grad", "op", "kinks", "index")

    def __init__(self, value, parents=(), backward_fn=None, param=None, op="const", kinks=()):
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.param = param
        self.op = op
        self.kinks = kinks
        self.requires_grad = param is not None or any(p.requires_grad for p in self.parents)
        self.index = -1

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Tape:
    """Ordered record of forward operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.sparse_madds = 0
        self.stats: dict[str, list] = {}

    def _push(self, node: Node) -> Node:
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def record_stat(self, key: str, value) -> None:
        self.stats.setdefault(key, []).append(value)

    # leaves

    def param(self, p: ParamTensor) -> Node:
        return self._push(Node(p.value, param=p, op="param"))

    def const(self, value) -> Node:
        if isinstance(value, Node):
            return value
        return self._push(Node(np.asarray(value, dtype=np.float64)))

    # linear algebra

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value

        def back(g):
            return g @ bv.T, av.T @ g

        return self._push(Node(av @ bv, (a, b), back, op="matmul"))

    def spmm(self, s: sp.spmatrix, a: Node) -> Node:
        """Constant sparse matrix times a dense node; dense constants are converted."""
        if s.shape[1] != a.shape[0]:
            raise ValueError(f"spmm shape mismatch: {s.shape} @ {a.shape}")
        if not sp.issparse(s):
            s = sp.csr_matrix(np.asarray(s, dtype=np.float64))
        self.sparse_madds += s.nnz * a.shape[1]
        st = s.T.tocsr()

        def back(g):
            self.sparse_madds += st.nnz * g.shape[1]
            return (np.asarray(st @ g),)

        return self._push(Node(np.asarray(s @ a.value), (a,), back, op="spmm"))

    def add(self, a: Node, b: Node) -> Node:
        sa, sb = a.shape, b.shape

        def back(g):
            return _unbroadcast(g, sa), _unbroadcast(g, sb)

        return self._push(Node(a.value + b.value, (a, b), back, op="add"))

    def sub(self, a: Node, b: Node) -> Node:
        _check_same_shape(a, b, "sub")
        return self._push(Node(a.value - b.value, (a, b), lambda g: (g, -g), op="sub"))

    def scale(self, c: float, a: Node) -> Node:
        c = float(c)
        return self._push(Node(c * a.value, (a,), lambda g: (c * g,), op="scale"))

    def weighted_sum(self, nodes: Sequence[Node], weights: Sequence[float]) -> Node:
        """sum_k weights[k] * nodes[k] with constant weights."""
        if len(nodes) != len(weights) or not nodes:
            raise ValueError(f"weighted_sum: {len(nodes)} nodes vs {len(weights)} weights")
        for nd in nodes[1:]:
            _check_same_shape(nodes[0], nd, "weighted_sum")
        w = [float(x) for x in weights]
        out = w[0] * nodes[0].value
        for wk, nd in zip(w[1:], nodes[1:]):
            out = out + wk * nd.value

        def back(g):
            return tuple(wk * g for wk in w)

        return self._push(Node(out, nodes, back, op="weighted_sum"))

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._push(
            Node(np.sum(a.value), (a,), lambda g: (np.full(shape, g, dtype=np.float64),), op="sum")
        )

    def sum_squares(self, a: Node) -> Node:
        av = a.value
        return self._push(Node(np.sum(av * av), (a,), lambda g: (2.0 * g * av,), op="sum_squares"))

    def dot(self, a: Node, c: np.ndarray) -> Node:
        """sum(a * c) against a constant array c; handy as a test functional."""
        c = np.asarray(c, dtype=np.float64)
        return self._push(Node(np.sum(a.value * c), (a,), lambda g: (g * c,), op="dot"))

    # elementwise activations

    def identity(self, a: Node) -> Node:
        return a

    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._push(
            Node(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,), op="relu", kinks=(0.0,))
        )

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)
        return self._push(Node(out, (a,), lambda g: (g * (1.0 - out * out),), op="tanh"))

    def soft_threshold(self, a: Node, theta: float) -> Node:
        z = a.value
        out = np.sign(z) * np.maximum(np.abs(z) - theta, 0.0)
        slope = (np.abs(z) > theta).astype(np.float64)
        return self._push(
            Node(out, (a,), lambda g: (g * slope,), op="soft_threshold", kinks=(-theta, theta))
        )

    def msrelu(self, a: Node, theta1: float, theta2: float, w1: float, w2: float) -> Node:
        z = a.value
        out = msrelu_value(z, theta1, theta2, w1, w2)
        mag = np.abs(z)
        # subgradient: 0 on |z| < theta1 (incl. 0), w1 on [theta1, theta2), 1 from theta2
        slope = np.where(mag >= theta2, 1.0, np.where(mag >= theta1, w1, 0.0))
        return self._push(
            Node(out, (a,), lambda g: (g * slope,), op="msrelu",
                 kinks=(-theta2, -theta1, theta1, theta2))
        )

    def softmax(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=1, keepdims=True)

        def back(g):
            return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)

        return self._push(Node(out, (a,), back, op="softmax"))

    def activation(self, name: str, a: Node) -> Node:
        if name == "relu":
            return self.relu(a)
        if name == "tanh":
            return self.tanh(a)
        if name == "identity":
            return self.identity(a)
        raise ValueError(f"unknown activation {name!r}")

    # loss

    def cross_entropy(self, s: Node, labels: np.ndarray, omega: np.ndarray, floor: float = 1e-12) -> Node:
        """-sum_{i in omega} ln S[i, y_i], probabilities floored before the log."""
        omega = np.asarray(omega, dtype=np.int64)
        if omega.size == 0:
            raise ValueError("cross_entropy over an empty index set")
        rows = omega
        cols = np.asarray(labels, dtype=np.int64)[omega]
        picked = s.value[rows, cols]
        clipped = np.maximum(picked, floor)
        loss = -np.sum(np.log(clipped))
        shape = s.shape

        def back(g):
            grad = np.zeros(shape)
            live = picked >= floor
            np.add.at(grad, (rows[live], cols[live]), -g / picked[live])
            return (grad,)

        return self._push(Node(loss, (s,), back, op="cross_entropy"))


def msrelu_value(z, theta1, theta2, w1, w2):
    """w1*(relu(z-t1) - relu(-z-t1)) - w2*(relu(z-t2) - relu(-z-t2))."""
    z = np.asarray(z, dtype=np.float64)
    relu = lambda x: np.maximum(x, 0.0)  # noqa: E731
    return w1 * (relu(z - theta1) - relu(-z - theta1)) - w2 * (relu(z - theta2) - relu(-z - theta2))


def backward(tape: Tape, loss: Node) -> None:
    """Accumulate d(loss)/d(param) into every reachable ParamTensor.grad."""
    if not tape.nodes or loss.index < 0 or loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise RuntimeError("backward called on a node that is not on this tape (run forward first)")
    if np.ndim(loss.value) != 0:
        raise ValueError(f"loss must be a scalar, got shape {np.shape(loss.value)}")
    grads: dict[int, np.ndarray] = {loss.index: np.float64(1.0)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None)
        if g is None or not node.requires_grad:
            continue
        if node.param is not None:
            node.param.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg


def min_kink_distance(tape: Tape) -> float:
    """Smallest distance from any activation input to one of its kinks."""
    best = np.inf
    for node in tape.nodes:
        if not node.kinks:
            continue
        z = node.parents[0].value
        for k in node.kinks:
            best = min(best, float(np.min(np.abs(z - k))) if np.size(z) else np.inf)
    return best


class Adam:
    """Adam with coupled L2 weight decay (grad += wd * value on decayed params)."""

    def __init__(self, params: Sequence[ParamTensor], lr: float = 0.01, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.weight_decay, self.betas, self.eps)


def adam_step(params: Sequence[ParamTensor], lr: float, wd: float = 0.0,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    b1, b2 = betas
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    for p in params:
        g = p.grad + wd * p.value if (wd and p.decay) else p.grad
        p.step_count += 1
        p.adam_m = b1 * p.adam_m + (1.0 - b1) * g
        p.adam_v = b2 * p.adam_v + (1.0 - b2) * g * g
        m_hat = p.adam_m / (1.0 - b1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - b2 ** p.step_count)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def grad_check(f: Callable[[Tape], Node], params: Sequence[ParamTensor], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` builds the scalar loss on the tape it is given, reading the current
    parameter values. Relative error uses ``max(|a|, |b|, 1e-8)`` as denominator.
    """
    zero_grads(params)
    tape = Tape()
    backward(tape, f(tape))
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    worst = 0.0
    for p, ga in zip(params, analytic):
        base = p.value.copy()
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += h
            p.value = plus
            fp = float(f(Tape()).value)
            minus = base.copy()
            minus[idx] -= h
            p.value = minus
            fm = float(f(Tape()).value)
            p.value = base
            fd = (fp - fm) / (2.0 * h)
            a = float(ga[idx])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst
