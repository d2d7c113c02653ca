"""Graph representation, transition/proximity matrices and Laplacians.

Every solver in the package consumes the objects built here: the row
normalized transition matrix, the proximity matrix ``M = (A + A @ A) / 2``
that the structure losses factorize, and weight Laplacians
``L = D - (W + W') / 2``.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp

from cinembed.exceptions import DataError

logger = logging.getLogger(__name__)

DENSE_NODE_CAP = 20000


@dataclass(frozen=True)
class Graph:
    """Weighted graph on nodes ``0..n-1`` stored as a CSR adjacency matrix.

    Undirected graphs keep every edge in both directions, so their adjacency
    is symmetric.
    """

    n: int
    adjacency_matrix: sp.csr_matrix
    directed: bool = False

    @classmethod
    def from_edges(cls, n, edges, directed=False):
        """Build a graph from ``(source, target[, weight])`` tuples.

        Self-loops are dropped; repeated edges keep their largest weight.
        """
        n = int(n)
        if n < 1:
            raise DataError(f'graph needs at least one node, got n={n}')
        frame = _edge_frame(edges)
        if len(frame):
            bad = (frame['source'] < 0) | (frame['source'] >= n) | \
                  (frame['target'] < 0) | (frame['target'] >= n)
            if bad.any():
                row = frame[bad].iloc[0]
                raise DataError(f'edge ({row.source}, {row.target}) has an index outside [0, {n})')
            if (frame['weight'] <= 0).any() or not np.isfinite(frame['weight']).all():
                raise DataError('edge weights must be finite and strictly positive')
            loops = frame['source'] == frame['target']
            if loops.any():
                logger.warning('dropping %d self-loop edge(s)', int(loops.sum()))
                frame = frame[~loops]
            if not directed:
                flipped = frame.rename(columns={'source': 'target', 'target': 'source'})
                frame = pd.concat([frame, flipped], ignore_index=True)
            frame = frame.groupby(['source', 'target'], as_index=False)['weight'].max()
        adjacency = sp.csr_matrix(
            (frame['weight'].to_numpy(dtype=float),
             (frame['source'].to_numpy(dtype=np.int64), frame['target'].to_numpy(dtype=np.int64))),
            shape=(n, n))
        adjacency.sort_indices()
        return cls(n=n, adjacency_matrix=adjacency, directed=directed)

    def adjacency(self):
        return self.adjacency_matrix

    def degrees(self):
        """Weighted out-degree of every node."""
        return np.asarray(self.adjacency_matrix.sum(axis=1)).ravel()

    @property
    def num_edges(self):
        nnz = self.adjacency_matrix.nnz
        return nnz if self.directed else nnz // 2

    def __repr__(self):
        kind = 'directed' if self.directed else 'undirected'
        return f'Graph(n={self.n}, edges={self.num_edges}, {kind})'


def _edge_frame(edges):
    rows = [tuple(e) if len(e) == 3 else (e[0], e[1], 1.0) for e in edges]
    frame = pd.DataFrame(rows, columns=['source', 'target', 'weight'])
    return frame.astype({'source': np.int64, 'target': np.int64, 'weight': float})


@dataclass(frozen=True)
class ProximityMatrix:
    """The matrix M every structure loss factorizes, stored sparse."""

    matrix: sp.csr_matrix
    symmetric: bool

    @property
    def n(self):
        return self.matrix.shape[0]

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def frobenius_sq(self):
        return float(np.dot(self.matrix.data, self.matrix.data))

    def to_dense(self, max_nodes=DENSE_NODE_CAP):
        if self.n > max_nodes:
            raise ValueError(f'refusing to densify a {self.n}-node proximity matrix '
                             f'(cap is {max_nodes} nodes)')
        return self.matrix.toarray()


@dataclass(frozen=True)
class WeightLaplacian:
    """``L = D - (W + W') / 2`` for a nonnegative weight matrix W."""

    matrix: sp.csr_matrix
    weights: sp.csr_matrix

    def quadratic_trace(self, U):
        """Tr(U' L U)."""
        return float(np.sum(U * (self.matrix @ U)))


def build_transition(graph):
    """Row normalize the adjacency matrix.

    Returns ``(transition, isolated)`` where ``isolated`` counts the rows
    with no out-edge; those rows stay all-zero.
    """
    adjacency = graph.adjacency()
    degrees = graph.degrees()
    isolated = int(np.count_nonzero(degrees == 0))
    if isolated:
        logger.warning('%d node(s) without out-edges keep all-zero transition rows', isolated)
    inverse = np.zeros_like(degrees)
    np.divide(1.0, degrees, out=inverse, where=degrees > 0)
    transition = sp.diags(inverse) @ adjacency
    return sp.csr_matrix(transition), isolated


def build_proximity(transition):
    """M = (A + A @ A) / 2 for a row-stochastic (or zero-row) A."""
    transition = sp.csr_matrix(transition, dtype=float)
    matrix = sp.csr_matrix((transition + transition @ transition) / 2.0)
    matrix.eliminate_zeros()
    matrix.sort_indices()
    asym = abs(matrix - matrix.T)
    symmetric = asym.nnz == 0 or float(asym.max()) <= 1e-12
    return ProximityMatrix(matrix=matrix, symmetric=symmetric)


def proximity_from_graph(graph):
    transition, _ = build_transition(graph)
    return build_proximity(transition)


def laplacian(weights):
    """Laplacian of the symmetrized weights ``(W + W') / 2``."""
    weights = sp.csr_matrix(weights, dtype=float)
    symmetrized = (weights + weights.T) / 2.0
    degree = np.asarray(symmetrized.sum(axis=1)).ravel()
    matrix = sp.csr_matrix(sp.diags(degree) - symmetrized)
    matrix.sort_indices()
    return WeightLaplacian(matrix=matrix, weights=weights)
