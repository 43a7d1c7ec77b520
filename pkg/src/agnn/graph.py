"""Sparse graph storage and the normalized propagation operators.

Adjacency is kept as a symmetric, unweighted CSR matrix without self-loops.
The self-loop is added once, inside :func:`normalize`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from agnn.errors import DataError


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: sp.csr_matrix

    @property
    def indptr(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.adjacency.indices

    @property
    def data(self) -> np.ndarray:
        return self.adjacency.data

    @property
    def num_edges(self) -> int:
        """Undirected edge count (each edge stored twice)."""
        return self.adjacency.nnz // 2

    def edge_pairs(self) -> list[tuple[int, int]]:
        coo = sp.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(coo.row.tolist(), coo.col.tolist()))


@dataclass(frozen=True)
class NormalizedOperators:
    a_hat: sp.csr_matrix
    l_tilde: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.a_hat.shape[0]


def _csr(matrix: sp.spmatrix) -> sp.csr_matrix:
    out = sp.csr_matrix(matrix, dtype=np.float64)
    out.sum_duplicates()
    out.sort_indices()
    for arr in (out.data, out.indices, out.indptr):
        arr.flags.writeable = False
    return out


def build_graph(edge_pairs, n: int) -> Graph:
    """Build a symmetric CSR graph from (u, v) pairs.

    Duplicate pairs, reversed duplicates and self-loops are dropped.
    """
    if n < 0:
        raise ValueError(f"node count must be non-negative, got {n}")
    pairs = np.asarray(list(edge_pairs), dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        bad = np.flatnonzero((pairs < 0).any(axis=1) | (pairs >= n).any(axis=1))
        if bad.size:
            u, v = pairs[bad[0]]
            raise DataError(
                f"edge {bad[0]} ({u}, {v}) has a node index outside [0, {n})"
            )
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    # dedup: every stored entry is exactly 1.0
    adj.data[:] = 1.0
    return Graph(n=n, adjacency=_csr(adj))


def read_edge_list(path, n: int) -> Graph:
    """Read a ``u<TAB>v`` edge list; ``#`` lines are comments."""
    pairs = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(f"{path}:{lineno}: node index out of range [0, {n}) in {line!r}")
            pairs.append((u, v))
    return build_graph(pairs, n)


def write_edge_list(graph: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# undirected edges, n={graph.n}\n")
        for u, v in graph.edge_pairs():
            fh.write(f"{u}\t{v}\n")


def normalize(g: Graph) -> NormalizedOperators:
    """Return ``a_hat = D^-1/2 (A + I) D^-1/2`` and ``l_tilde = I - a_hat``."""
    eye = sp.identity(g.n, format="csr", dtype=np.float64)
    a_tilde = g.adjacency + eye
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    a_hat = _csr(d_inv_sqrt @ a_tilde @ d_inv_sqrt)
    l_tilde = _csr(eye - a_hat)
    return NormalizedOperators(a_hat=a_hat, l_tilde=l_tilde)


def spmm(s: sp.csr_matrix, d: np.ndarray) -> np.ndarray:
    """Sparse (n x n) times dense (n x k)."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or s.shape[1] != d.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} @ {d.shape}")
    return np.asarray(s @ d)
