"""Datasets, synthetic SBM graphs, splits and the text file formats.

File formats (UTF-8, ``#`` lines are comments):

* edges:    ``u<TAB>v`` per line, 0-based node ids.
* features: header ``n<TAB>m``, then n rows of m tab-separated floats.
* labels:   one integer class id per line, node i on data line i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from agnn.errors import DataError
from agnn.graph import Graph, build_graph, read_edge_list, write_edge_list

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    r_classes: int

    def __post_init__(self):
        n = self.graph.n
        if self.features.shape[0] != n:
            raise DataError(f"features have {self.features.shape[0]} rows, graph has {n} nodes")
        if self.labels.shape != (n,):
            raise DataError(f"labels have shape {self.labels.shape}, expected ({n},)")
        present = np.bincount(self.labels, minlength=self.r_classes)
        missing = np.flatnonzero(present == 0)
        if missing.size:
            raise DataError(f"class {missing[0]} absent from labels")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.features.shape[1]


@dataclass
class Split:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        sets = [set(self.train.tolist()), set(self.valid.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DataError("train/valid/test index sets overlap")

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "valid": self.valid.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        try:
            return cls(d["train"], d["valid"], d["test"])
        except KeyError as exc:
            raise DataError(f"split is missing key {exc}") from None


def _data_lines(path: Path):
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                yield lineno, stripped


def read_features(path) -> np.ndarray:
    path = Path(path)
    lines = _data_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise DataError(f"{path}: empty features file") from None
    try:
        n, m = (int(tok) for tok in header.split("\t"))
    except ValueError:
        raise DataError(f"{path}:{lineno}: expected header 'n<TAB>m', got {header!r}") from None
    rows = []
    for lineno, line in lines:
        toks = line.split("\t")
        if len(toks) != m:
            raise DataError(f"{path}:{lineno}: expected {m} values, got {len(toks)}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric token in {line[:40]!r}") from None
    if len(rows) != n:
        raise DataError(f"{path}: header declares {n} rows but file has {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n, m)


def read_labels(path) -> np.ndarray:
    path = Path(path)
    out = []
    for lineno, line in _data_lines(path):
        try:
            value = int(line)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer label {line!r}") from None
        if value < 0:
            raise DataError(f"{path}:{lineno}: negative label {value}")
        out.append(value)
    return np.array(out, dtype=np.int64)


def load_dataset(edges_path, features_path, labels_path) -> Dataset:
    features = read_features(features_path)
    n = features.shape[0]
    labels = read_labels(labels_path)
    if labels.size != n:
        raise DataError(f"{labels_path}: has {labels.size} labels, features file has {n} rows")
    if n == 0:
        raise DataError(f"{features_path}: dataset has no nodes")
    graph = read_edge_list(edges_path, n)
    r_classes = int(labels.max()) + 1
    present = np.bincount(labels, minlength=r_classes)
    missing = np.flatnonzero(present == 0)
    if missing.size:
        raise DataError(f"{labels_path}: class {missing[0]} absent")
    return Dataset(graph, features, labels, r_classes)


def write_dataset(dataset: Dataset, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "edges": directory / "edges.tsv",
        "features": directory / "features.tsv",
        "labels": directory / "labels.txt",
    }
    write_edge_list(dataset.graph, paths["edges"])
    with paths["features"].open("w", encoding="utf-8") as fh:
        fh.write(f"{dataset.n}\t{dataset.m}\n")
        for row in dataset.features:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    with paths["labels"].open("w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in dataset.labels)
    return paths


def generate_sbm(n: int, r_classes: int, p_in: float, p_out: float, m: int,
                 feature_signal: float, seed: int = 0) -> Dataset:
    """Equal-block stochastic block model with Gaussian class-mean features."""
    if r_classes < 1 or n <= 0 or n % r_classes:
        raise DataError(f"n={n} must be a positive multiple of r_classes={r_classes}")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise DataError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if m < 1:
        raise DataError(f"feature dimension must be positive, got {m}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(r_classes), n // r_classes)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    graph = build_graph(np.column_stack([iu[keep], ju[keep]]), n)

    basis = rng.standard_normal((max(m, r_classes), max(m, r_classes)))
    q, _ = np.linalg.qr(basis)
    means = q[:r_classes, :m]
    means = means / np.linalg.norm(means, axis=1, keepdims=True) * feature_signal
    features = means[labels] + rng.standard_normal((n, m))
    return Dataset(graph, features, labels, r_classes)


def make_split(labels, per_class: int = 20, n_valid: int = 500, n_test: int = 1000, seed: int = 0) -> Split:
    """Stratified train set plus random valid/test sets from the remainder."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    r_classes = int(labels.max()) + 1
    train = []
    for c in range(r_classes):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise DataError(f"class {c} has {members.size} nodes, need {per_class} for training")
        train.append(rng.choice(members, size=per_class, replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.arange(labels.size), train)
    rest = rng.permutation(rest)
    if n_valid + n_test > rest.size:
        log.warning("only %d nodes left after training set; clipping valid=%d, test=%d",
                    rest.size, n_valid, n_test)
    valid = np.sort(rest[:n_valid])
    test = np.sort(rest[n_valid:n_valid + n_test])
    return Split(train, valid, test)
