"""Boosting-style weighting of the per-layer weak classifiers.

Classifiers are visited in the order GCL_1, GEL_1, ..., GCL_t, GEL_t. Sample
weights start uniform over the labeled set and are updated from the previous
classifier's prediction before each new weighted error is measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ERROR_CLAMP = 1e-10


@dataclass
class BoostState:
    omega: np.ndarray
    pi: np.ndarray
    raw_weights: list[float] = field(default_factory=list)
    weights: np.ndarray | None = None
    errors: list[float] = field(default_factory=list)
    predictions: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def uniform(cls, omega) -> "BoostState":
        omega = np.asarray(omega, dtype=np.int64)
        if omega.size == 0:
            raise ValueError("boosting needs at least one labeled node")
        return cls(omega=omega, pi=np.full(omega.size, 1.0 / omega.size))

    @property
    def alphas(self) -> np.ndarray:
        return np.asarray(self.weights[0::2])

    @property
    def betas(self) -> np.ndarray:
        return np.asarray(self.weights[1::2])


def weighted_error(pred: np.ndarray, labels, pi, omega) -> float:
    omega = np.asarray(omega, dtype=np.int64)
    if omega.size == 0:
        raise ValueError("weighted_error over an empty index set")
    pi = np.asarray(pi, dtype=np.float64)
    wrong = np.argmax(pred[omega], axis=1) != np.asarray(labels)[omega]
    return float(np.sum(pi * wrong) / np.sum(pi))


def classifier_weight(e: float, r_classes: int) -> float:
    """0.5 * ln((1 - e) / e) + ln(R - 1) with e clamped away from 0 and 1."""
    if r_classes < 2:
        raise ValueError(f"need at least 2 classes, got {r_classes}")
    e = min(max(float(e), ERROR_CLAMP), 1.0 - ERROR_CLAMP)
    return 0.5 * np.log((1.0 - e) / e) + np.log(r_classes - 1.0)


def update_factors(pred_rows: np.ndarray, true_labels: np.ndarray, rho: float, epsilon: float) -> np.ndarray:
    """Multiplicative sample-weight factors for the rows of one classifier."""
    predicted = np.argmax(pred_rows, axis=1)
    idx = np.arange(pred_rows.shape[0])
    p_r = pred_rows[idx, predicted]
    others = pred_rows.copy()
    others[idx, predicted] = 0.0
    eta = p_r / np.maximum(others.sum(axis=1), epsilon)
    return np.where(predicted != true_labels, 1.0 + eta, np.maximum(1.0 - eta, rho))


def update_sample_weights(state: BoostState, pred: np.ndarray, labels, rho: float = 0.05,
                          epsilon: float = 1e-4) -> None:
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    omega = state.omega
    state.pi = state.pi * update_factors(pred[omega], np.asarray(labels)[omega], rho, epsilon)


def normalize_classifier_weights(state: BoostState) -> None:
    raw = np.asarray(state.raw_weights, dtype=np.float64)
    e = np.exp(raw - raw.max())
    state.weights = e / e.sum()


def aggregate(predictions, weights) -> np.ndarray:
    if len(predictions) != len(weights) or not predictions:
        raise ValueError(f"{len(predictions)} predictions vs {len(weights)} weights")
    s = np.zeros_like(predictions[0], dtype=np.float64)
    for w, pred in zip(weights, predictions):
        s = s + float(w) * pred
    return s


def run_boost_round(predictions, labels, omega, rho: float = 0.05, epsilon: float = 1e-4,
                    state: BoostState | None = None):
    """One full weighting pass over all 2t classifiers.

    Returns ``(alphas, betas, S)``; pass ``state`` to inspect errors and pi.
    """
    if len(predictions) % 2:
        raise ValueError("expected predictions in GCL/GEL pairs")
    if state is None:
        state = BoostState.uniform(omega)
    else:
        fresh = BoostState.uniform(omega)
        state.omega, state.pi = fresh.omega, fresh.pi
        state.raw_weights, state.errors = [], []
    state.predictions = list(predictions)
    r_classes = predictions[0].shape[1]
    for k, pred in enumerate(predictions):
        if k > 0:
            update_sample_weights(state, predictions[k - 1], labels, rho, epsilon)
        e = weighted_error(pred, labels, state.pi, state.omega)
        state.errors.append(e)
        state.raw_weights.append(classifier_weight(e, r_classes))
    normalize_classifier_weights(state)
    s = aggregate(predictions, state.weights)
    return state.alphas, state.betas, s
