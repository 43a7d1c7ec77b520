"""Model assembly, the training loop and evaluation metrics."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from agnn.autodiff import Node, ParamTensor, Tape, adam_step, backward, zero_grads
from agnn.boost import BoostState, run_boost_round
from agnn.errors import NumericError
from agnn.graph import NormalizedOperators
from agnn.layers import BlockParams, MsreluParams, gcl_forward, gel_forward, weak_classifier

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 20
    min_lr: float = 1e-4
    theta1: float = 0.02
    theta2: float = 0.04
    lam: float = 1.0
    rho: float = 0.05
    epsilon: float = 1e-4
    seed: int = 0
    hidden: int = 128
    gcl_activation: str = "relu"
    classifier_activation: str = "tanh"
    gel_prox: str = "msrelu"

    def __post_init__(self):
        for name in ("lr", "max_epochs", "patience", "theta1", "theta2", "epsilon", "hidden"):
            if getattr(self, name) < 0 or (name != "max_epochs" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0 or self.lam < 0:
            raise ValueError("weight_decay and lam must be non-negative")
        if self.theta2 < self.theta1:
            raise ValueError(f"theta2 ({self.theta2}) must be >= theta1 ({self.theta1})")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AgnnModel:
    blocks: list[BlockParams]
    msrelu: MsreluParams
    lam: float
    widths: list[int]
    plain_gcn: bool = False
    rho: float = 0.05
    epsilon: float = 1e-4
    gcl_activation: str = "relu"
    classifier_activation: str = "tanh"
    gel_prox: str = "msrelu"

    @property
    def t(self) -> int:
        return len(self.blocks)

    @property
    def num_layers(self) -> int:
        return self.t if self.plain_gcn else 2 * self.t

    def params(self) -> list[ParamTensor]:
        return [p for b in self.blocks for p in b.params()]

    def snapshot(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def restore(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.params(), values):
            p.value = v.copy()

    def meta(self) -> dict:
        return {
            "layers": self.num_layers,
            "plain_gcn": self.plain_gcn,
            "widths": self.widths,
            "theta1": self.msrelu.theta1,
            "theta2": self.msrelu.theta2,
            "lam": self.lam,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "gcl_activation": self.gcl_activation,
            "classifier_activation": self.classifier_activation,
            "gel_prox": self.gel_prox,
        }


def _glorot(rng, name, fan_in, fan_out) -> ParamTensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return ParamTensor(name, rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def _bias(name, width) -> ParamTensor:
    return ParamTensor(name, np.zeros((1, width)), decay=False)


def init_model(n_features: int, r_classes: int, layers: int, config: TrainConfig,
               plain_gcn: bool = False) -> AgnnModel:
    """Glorot-uniform weights, zero biases, seeded by ``config.seed``.

    ``layers`` counts GCL and GEL layers alike, so an AGNN needs an even value.
    """
    rng = np.random.default_rng(config.seed)
    d = config.hidden
    blocks = []
    if plain_gcn:
        if layers < 1:
            raise ValueError(f"plain GCN needs at least 1 layer, got {layers}")
        widths = [n_features] + [d] * (layers - 1) + [r_classes]
        for l in range(layers):
            blocks.append(BlockParams(w_g=_glorot(rng, f"gcl{l + 1}.w_g", widths[l], widths[l + 1])))
    else:
        if layers < 2 or layers % 2:
            raise ValueError(f"AGNN layer count must be a positive even number, got {layers}")
        widths = [n_features] + [d] * (layers // 2)
        for l in range(layers // 2):
            tag = f"block{l + 1}"
            blocks.append(BlockParams(
                w_g=_glorot(rng, f"{tag}.w_g", widths[l], d),
                w_e1=_glorot(rng, f"{tag}.w_e1", d, d),
                w_e2=_glorot(rng, f"{tag}.w_e2", n_features, d),
                w_c_gcl=_glorot(rng, f"{tag}.w_c_gcl", d, r_classes),
                b_gcl=_bias(f"{tag}.b_gcl", r_classes),
                w_c_gel=_glorot(rng, f"{tag}.w_c_gel", d, r_classes),
                b_gel=_bias(f"{tag}.b_gel", r_classes),
            ))
    return AgnnModel(
        blocks=blocks,
        msrelu=MsreluParams(config.theta1, config.theta2),
        lam=config.lam,
        widths=widths,
        plain_gcn=plain_gcn,
        rho=config.rho,
        epsilon=config.epsilon,
        gcl_activation=config.gcl_activation,
        classifier_activation=config.classifier_activation,
        gel_prox=config.gel_prox,
    )


@dataclass
class ForwardPass:
    predictions: list[Node]
    embeddings: list[Node]

    @property
    def final_embedding(self) -> np.ndarray:
        return self.embeddings[-1].value


def forward(model: AgnnModel, ops: NormalizedOperators, features: np.ndarray, tape: Tape) -> ForwardPass:
    """Run all blocks, returning classifier outputs in GCL_1, GEL_1, ... order."""
    x = tape.const(features)
    h = x
    preds, embs = [], []
    if model.plain_gcn:
        for l, block in enumerate(model.blocks):
            act = "identity" if l == model.t - 1 else model.gcl_activation
            h = gcl_forward(tape, ops.a_hat, h, tape.param(block.w_g), act)
            embs.append(h)
        preds.append(tape.softmax(h))
        return ForwardPass(preds, embs)
    for block in model.blocks:
        hl = gcl_forward(tape, ops.a_hat, h, tape.param(block.w_g), model.gcl_activation)
        zl = gel_forward(tape, hl, x, ops.l_tilde, tape.param(block.w_e1), tape.param(block.w_e2),
                         model.lam, model.msrelu, model.gel_prox)
        for emb, w_c, b in ((hl, block.w_c_gcl, block.b_gcl), (zl, block.w_c_gel, block.b_gel)):
            preds.append(weak_classifier(tape, emb, tape.param(w_c), tape.param(b),
                                         model.classifier_activation))
            embs.append(emb)
        h = zl
    return ForwardPass(preds, embs)


def combine(model: AgnnModel, tape: Tape, fwd: ForwardPass, labels, omega,
            weights=None) -> tuple[Node, np.ndarray | None]:
    """Aggregate classifier outputs into S; boosting weights are tape constants.

    If ``weights`` is given it is used verbatim (frozen), otherwise one boosting
    round over ``omega`` computes it from the current predictions.
    """
    if model.plain_gcn:
        return fwd.predictions[0], None
    if weights is None:
        state = BoostState.uniform(omega)
        run_boost_round([p.value for p in fwd.predictions], labels, omega,
                        model.rho, model.epsilon, state=state)
        weights = state.weights
    return tape.weighted_sum(fwd.predictions, weights), np.asarray(weights)


def cross_entropy(s: np.ndarray, y_onehot: np.ndarray, omega) -> float:
    """-sum_{i in omega} sum_j Y_ij ln S_ij with S floored at 1e-12."""
    omega = np.asarray(omega, dtype=np.int64)
    if omega.size == 0:
        raise ValueError("cross_entropy over an empty index set")
    s_o = np.maximum(s[omega], PROB_FLOOR)
    return float(-np.sum(y_onehot[omega] * np.log(s_o)))


def one_hot(labels, r_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, r_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def accuracy(scores: np.ndarray, labels, index) -> float:
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ValueError("accuracy over an empty index set")
    return float(np.mean(np.argmax(scores[index], axis=1) == np.asarray(labels)[index]))


def mad(embedding: np.ndarray, max_pairs: int = 10_000, seed: int = 0) -> float:
    """Mean cosine distance 1 - cos(h_i, h_j) over node pairs, in [0, 2].

    Uses every pair when there are at most ``max_pairs``, otherwise a seeded
    sample of distinct pairs. Zero rows count as cosine 0.
    """
    emb = np.asarray(embedding, dtype=np.float64)
    n = emb.shape[0]
    if n < 2:
        raise ValueError(f"mad needs at least 2 rows, got {n}")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        flat = rng.choice(total, size=max_pairs, replace=False)
        i, j = _pair_from_flat(flat, n)
    norms = np.linalg.norm(emb, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = emb / safe[:, None]
    cos = np.sum(unit[i] * unit[j], axis=1)
    cos = np.clip(cos, -1.0, 1.0)
    return float(np.mean(1.0 - cos))


def _pair_from_flat(flat: np.ndarray, n: int):
    # row-major enumeration of the strict upper triangle
    row_start = np.cumsum(np.r_[0, np.arange(n - 1, 0, -1)])
    i = np.searchsorted(row_start, flat, side="right") - 1
    j = flat - row_start[i] + i + 1
    return i, j


@dataclass
class RunHistory:
    loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    weights: list[list[float]] = field(default_factory=list)
    mad_final: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        n_w = max((len(w) for w in self.weights), default=0)
        header = ["epoch", "loss", "val_loss", "train_acc", "val_acc", "test_acc", "lr", "mad_final"]
        header += [f"w{k}" for k in range(n_w)]
        buf.write(",".join(header) + "\n")
        for e in range(len(self)):
            row = [e, self.loss[e], self.val_loss[e], self.train_acc[e], self.val_acc[e],
                   self.test_acc[e], self.lr[e], self.mad_final[e]] + list(self.weights[e])
            buf.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
        return buf.getvalue()


def scores(model: AgnnModel, ops: NormalizedOperators, dataset, omega) -> tuple[np.ndarray, ForwardPass, np.ndarray | None]:
    """Inference: S for every node, with boosting weights recomputed on ``omega``."""
    tape = Tape()
    fwd = forward(model, ops, dataset.features, tape)
    s, weights = combine(model, tape, fwd, dataset.labels, omega)
    return s.value, fwd, weights


def evaluate(model: AgnnModel, ops: NormalizedOperators, dataset, omega, index) -> float:
    s, _, _ = scores(model, ops, dataset, omega)
    return accuracy(s, dataset.labels, index)


def loss_function(model: AgnnModel, ops: NormalizedOperators, dataset, omega, weights=None):
    """Return ``f(tape) -> loss node`` with boosting weights frozen at the current point."""
    if weights is None and not model.plain_gcn:
        _, _, weights = scores(model, ops, dataset, omega)

    def f(tape: Tape) -> Node:
        fwd = forward(model, ops, dataset.features, tape)
        s, _ = combine(model, tape, fwd, dataset.labels, omega, weights=weights)
        return tape.cross_entropy(s, dataset.labels, omega, PROB_FLOOR)

    return f


def train(model: AgnnModel, ops: NormalizedOperators, dataset, split, config: TrainConfig):
    """Full-batch training; keeps the parameters with the best validation accuracy."""
    history = RunHistory()
    params = model.params()
    zero_grads(params)
    labels = dataset.labels
    y = one_hot(labels, dataset.r_classes)
    omega = np.asarray(split.train, dtype=np.int64)
    valid = np.asarray(split.valid, dtype=np.int64)
    test = np.asarray(split.test, dtype=np.int64)

    lr = config.lr
    best_val_loss = np.inf
    stale = 0
    best_acc = -np.inf
    best_values = None
    for epoch in range(config.max_epochs):
        tape = Tape()
        fwd = forward(model, ops, dataset.features, tape)
        s_node, weights = combine(model, tape, fwd, labels, omega)
        loss_node = tape.cross_entropy(s_node, labels, omega, PROB_FLOOR)
        loss = float(loss_node.value)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        s = s_node.value
        val_loss = cross_entropy(s, y, valid) if valid.size else loss
        history.loss.append(loss)
        history.val_loss.append(val_loss)
        history.train_acc.append(accuracy(s, labels, omega))
        history.val_acc.append(accuracy(s, labels, valid) if valid.size else float("nan"))
        history.test_acc.append(accuracy(s, labels, test) if test.size else float("nan"))
        history.lr.append(lr)
        history.weights.append([] if weights is None else [float(w) for w in weights])
        history.mad_final.append(mad(fwd.final_embedding))

        sel = history.val_acc[-1] if valid.size else history.train_acc[-1]
        if sel > best_acc:
            best_acc = sel
            best_values = model.snapshot()
            history.best_epoch = epoch

        backward(tape, loss_node)
        try:
            adam_step(params, lr, config.weight_decay)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from None

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                new_lr = max(lr / 2.0, config.min_lr)
                if new_lr < lr:
                    log.debug("epoch %d: lr %.3g -> %.3g", epoch, lr, new_lr)
                lr = new_lr
                stale = 0

    if best_values is not None:
        model.restore(best_values)
    return model, history


def save_model(model: AgnnModel, directory) -> None:
    directory = Path(directory)
    arrays = {p.name: p.value for p in model.params()}
    np.savez(directory / "params.npz", **arrays)
    (directory / "model.json").write_text(json.dumps(model.meta(), indent=2, sort_keys=True) + "\n")


def load_model(directory) -> AgnnModel:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    widths = meta["widths"]
    cfg = TrainConfig(theta1=meta["theta1"], theta2=meta["theta2"], lam=meta["lam"], rho=meta["rho"],
                      epsilon=meta["epsilon"], hidden=widths[1], gcl_activation=meta["gcl_activation"],
                      classifier_activation=meta["classifier_activation"], gel_prox=meta["gel_prox"])
    if meta["plain_gcn"]:
        r_classes = widths[-1]
    else:
        r_classes = None
    with np.load(directory / "params.npz") as arrays:
        if r_classes is None:
            r_classes = arrays["block1.w_c_gcl"].shape[1]
        model = init_model(widths[0], r_classes, meta["layers"], cfg, plain_gcn=meta["plain_gcn"])
        for p in model.params():
            p.value = np.array(arrays[p.name])
    return model
