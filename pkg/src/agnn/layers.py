"""Graph convolution, graph embedding (proximal) layers and weak classifiers.

All forward functions take a :class:`~agnn.autodiff.Tape` and tape nodes, so
the same code path serves training, gradient checks and the oracle checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agnn.autodiff import Node, ParamTensor, Tape, msrelu_value


@dataclass(frozen=True)
class MsreluParams:
    theta1: float = 0.02
    theta2: float = 0.04

    def __post_init__(self):
        if not (self.theta2 >= self.theta1 > 0):
            raise ValueError(f"need theta2 >= theta1 > 0, got {self.theta1}, {self.theta2}")

    @property
    def w1(self) -> float:
        return (2.0 * self.theta2 - self.theta1) / self.theta2

    @property
    def w2(self) -> float:
        return self.w1 - 1.0


@dataclass
class BlockParams:
    """Trainable matrices of one GCL(+GEL) block.

    In plain-GCN mode only ``w_g`` is set.
    """

    w_g: ParamTensor
    w_e1: ParamTensor | None = None
    w_e2: ParamTensor | None = None
    w_c_gcl: ParamTensor | None = None
    b_gcl: ParamTensor | None = None
    w_c_gel: ParamTensor | None = None
    b_gel: ParamTensor | None = None

    def params(self) -> list[ParamTensor]:
        fields = (self.w_g, self.w_e1, self.w_e2, self.w_c_gcl, self.b_gcl, self.w_c_gel, self.b_gel)
        return [p for p in fields if p is not None]


def msrelu(z, p: MsreluParams) -> np.ndarray:
    """Multi-stage ReLU: dead zone on [-theta1, theta1], slope w1 up to theta2, then slope 1."""
    return msrelu_value(z, p.theta1, p.theta2, p.w1, p.w2)


def soft_threshold(z, theta: float) -> np.ndarray:
    if theta < 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - theta, 0.0)


def gcl_forward(tape: Tape, a_hat, h_in: Node, w_g: Node, activation: str = "relu") -> Node:
    """activation(a_hat @ h_in @ w_g)."""
    if activation not in ("relu", "identity", "tanh"):
        raise ValueError(f"unsupported GCL activation {activation!r}")
    return tape.activation(activation, tape.spmm(a_hat, tape.matmul(h_in, w_g)))


def gel_forward(tape: Tape, h: Node, x: Node, l_tilde, w_e1: Node, w_e2: Node,
                lam: float, p: MsreluParams, prox: str = "msrelu") -> Node:
    """prox(h @ w_e1 + x @ w_e2 - lam * l_tilde @ h).

    ``prox`` selects the shrinkage: ``msrelu`` (default), ``soft_threshold``
    (threshold ``p.theta1``), ``relu`` or ``identity`` for ablations.
    """
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    pre = tape.add(tape.matmul(h, w_e1), tape.matmul(x, w_e2))
    if lam:
        pre = tape.sub(pre, tape.scale(lam, tape.spmm(l_tilde, h)))
    if prox == "msrelu":
        out = tape.msrelu(pre, p.theta1, p.theta2, p.w1, p.w2)
    elif prox == "soft_threshold":
        out = tape.soft_threshold(pre, p.theta1)
    elif prox in ("relu", "identity"):
        out = tape.activation(prox, pre)
    else:
        raise ValueError(f"unknown prox {prox!r}")
    tape.record_stat("gel_sparsity", float(np.mean(out.value == 0.0)))
    return out


def weak_classifier(tape: Tape, h: Node, w_c: Node, b: Node, activation: str = "tanh") -> Node:
    """Row-stochastic class probabilities softmax(activation(h @ w_c + b))."""
    if b.shape[-1] != w_c.shape[1]:
        raise ValueError(f"bias width {b.shape} does not match classifier {w_c.shape}")
    logits = tape.add(tape.matmul(h, w_c), b)
    return tape.softmax(tape.activation(activation, logits))
