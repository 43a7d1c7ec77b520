"""Alternating graph-regularized neural network (AGNN) for semi-supervised
node classification, with dense oracles for the layer derivations."""

from agnn.errors import AgnnError, DataError, NumericError
from agnn.graph import Graph, NormalizedOperators, build_graph, normalize, spmm

__all__ = [
    "AgnnError",
    "DataError",
    "NumericError",
    "Graph",
    "NormalizedOperators",
    "build_graph",
    "normalize",
    "spmm",
]

__version__ = "0.1.0"
