"""Graph convolutional embedding driven by class semantics.

Two single-GCN-layer models are trained separately and their hidden outputs
concatenated:

- the semantic model (``rect-l``) maps ``PReLU(A X W1)`` through a linear
  head onto class-semantic vectors, each the mean reduced feature row of a
  seen class, and minimizes their mean squared error on L';
- the structure model (``rect-n``) fits ``U U'`` to the proximity matrix M
  with ``U = PReLU(A X W1)``.

Forward and backward passes are written out in numpy so every gradient can
be checked against finite differences.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp
from sklearn.preprocessing import normalize
from sklearn.utils.extmath import randomized_svd

from cinembed.cinembed_utils import child_seed, divide_chunks
from cinembed.exceptions import DataError, DivergenceError
from cinembed.graph_core import DENSE_NODE_CAP
from cinembed.interfaces import IEmbedder

logger = logging.getLogger(__name__)

ROW_BLOCK = 1024


@dataclass(frozen=True)
class RectConfig:
    hidden_dim: int = 200
    semantic_dim: int = 200
    epochs: int = 100
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    prelu_slope: float = 0.25
    readout: str = 'mean'
    structure_loss: str = 'dense'
    structure_node_cap: int = DENSE_NODE_CAP
    strict_width: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ('hidden_dim', 'semantic_dim', 'epochs'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.lr <= 0:
            raise ValueError(f'lr must be positive, got {self.lr}')
        if self.readout != 'mean':
            raise ValueError(f"only the 'mean' readout is available, got {self.readout!r}")
        if self.structure_loss not in ('dense', 'sampled'):
            raise ValueError(f"structure_loss must be 'dense' or 'sampled', got {self.structure_loss!r}")
        if self.strict_width and self.hidden_dim < 2:
            raise ValueError('strict_width needs hidden_dim >= 2')

    @property
    def effective_hidden(self):
        return self.hidden_dim // 2 if self.strict_width else self.hidden_dim


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


@dataclass
class RectParams:
    """GCN weight, PReLU slopes and (semantic model only) the FC head."""

    W1: np.ndarray
    slope: np.ndarray
    W2: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    adam: AdamState = field(default_factory=AdamState)

    def tensors(self):
        named = {'W1': self.W1, 'slope': self.slope}
        if self.W2 is not None:
            named['W2'] = self.W2
            named['b'] = self.b
        return named

    def with_tensors(self, named):
        return replace(self, **named)


@dataclass(frozen=True)
class SemanticTargets:
    """One semantic vector per seen class with labeled members."""

    classes: tuple
    vectors: np.ndarray

    def vector(self, cls):
        return self.vectors[self.classes.index(cls)]


@dataclass
class RectResult:
    rect: np.ndarray
    rect_l: np.ndarray
    rect_n: np.ndarray
    semantic_trace: pd.DataFrame
    structure_trace: pd.DataFrame


def normalize_adjacency(graph):
    """D^-1/2 (A + I) D^-1/2 with D_ii = 1 + deg(i)."""
    adjacency = graph.adjacency()
    if graph.directed:
        adjacency = adjacency.maximum(adjacency.T)
    looped = sp.csr_matrix(adjacency + sp.identity(graph.n, format='csr'))
    degree = np.asarray(looped.sum(axis=1)).ravel()
    scale = sp.diags(1.0 / np.sqrt(degree))
    normalized = sp.csr_matrix(scale @ looped @ scale)
    normalized.sort_indices()
    return normalized


def svd_reduce(features, dim, seed=0, return_components=False):
    """Rank-``dim`` projection ``U_d S_d`` by randomized SVD.

    Uses 10 oversamples and 4 power iterations; deterministic for a seed.
    """
    n, m = features.shape
    if not 1 <= dim <= min(n, m):
        raise ValueError(f'dim must lie in [1, {min(n, m)}], got {dim}')
    matrix = sp.csr_matrix(features, dtype=float) if sp.issparse(features) else np.asarray(features, dtype=float)
    nonzero = matrix.count_nonzero() if sp.issparse(matrix) else np.count_nonzero(matrix)
    if nonzero == 0:
        raise DataError('cannot reduce an all-zero feature matrix')
    left, sigma, right = randomized_svd(matrix, n_components=dim, n_oversamples=10, n_iter=4,
                                        random_state=seed)
    reduced = left * sigma
    if return_components:
        return reduced, right
    return reduced


def readout_semantics(features_reduced, view):
    """Mean reduced feature row of each seen class's L' members."""
    classes, vectors = [], []
    for cls in view.seen:
        members = view.members(cls)
        if not len(members):
            logger.warning('seen class %s has no labeled members; dropping it from the semantic targets', cls)
            continue
        classes.append(cls)
        vectors.append(features_reduced[members].mean(axis=0))
    width = features_reduced.shape[1]
    return SemanticTargets(classes=tuple(classes),
                           vectors=np.array(vectors).reshape(len(vectors), width))


def xavier_uniform(shape, rng):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def prelu(Z, slope):
    return np.where(Z > 0, Z, slope * Z)


def init_params(in_dim, hidden_dim, config, rng, semantic_dim=None):
    params = RectParams(W1=xavier_uniform((in_dim, hidden_dim), rng),
                        slope=np.full(hidden_dim, config.prelu_slope))
    if semantic_dim is not None:
        params.W2 = xavier_uniform((hidden_dim, semantic_dim), rng)
        params.b = np.zeros(semantic_dim)
    return params


def _hidden(AX, params):
    Z = AX @ params.W1
    return Z, prelu(Z, params.slope)


def _hidden_backward(AX, Z, grad_hidden, params):
    """Push dL/dhidden back to W1 and the PReLU slopes."""
    positive = Z > 0
    grad_slope = np.sum(np.where(positive, 0.0, Z) * grad_hidden, axis=0)
    grad_Z = np.where(positive, grad_hidden, params.slope * grad_hidden)
    return {'W1': AX.T @ grad_Z, 'slope': grad_slope}


def forward_rect_l(A_hat, X, params, AX=None):
    """Return ``(hidden, predicted)`` with hidden = PReLU(A X W1)."""
    AX = A_hat @ X if AX is None else AX
    _, hidden = _hidden(AX, params)
    return hidden, hidden @ params.W2 + params.b


def _semantic_pairs(targets, view):
    nodes, target_rows = [], []
    for node in view.labeled_nodes():
        for cls in sorted(view.labels_of(node)):
            if cls in targets.classes:
                nodes.append(int(node))
                target_rows.append(targets.classes.index(cls))
    return np.array(nodes, dtype=np.int64), np.array(target_rows, dtype=np.int64)


def semantic_loss(predicted, targets, view):
    """MSE over every (labeled node, seen label) pair, averaged over pairs."""
    nodes, target_rows = _semantic_pairs(targets, view)
    if not len(nodes):
        raise DataError('no labeled (node, seen class) pairs to train the semantic loss on')
    residual = predicted[nodes] - targets.vectors[target_rows]
    return float(np.mean(residual * residual))


def semantic_loss_and_grads(AX, params, targets, view, pairs=None):
    nodes, target_rows = _semantic_pairs(targets, view) if pairs is None else pairs
    if not len(nodes):
        raise DataError('no labeled (node, seen class) pairs to train the semantic loss on')
    Z, hidden = _hidden(AX, params)
    predicted = hidden @ params.W2 + params.b
    residual = predicted[nodes] - targets.vectors[target_rows]
    loss = float(np.mean(residual * residual))
    grad_pred = np.zeros_like(predicted)
    np.add.at(grad_pred, nodes, 2.0 * residual / residual.size)
    grads = {'W2': hidden.T @ grad_pred, 'b': grad_pred.sum(axis=0)}
    grads.update(_hidden_backward(AX, Z, grad_pred @ params.W2.T, params))
    return loss, grads


def forward_rect_n(A_hat, X, params, AX=None):
    AX = A_hat @ X if AX is None else AX
    return _hidden(AX, params)[1]


def _dense_structure(U, M, cap):
    """Mean of (M - UU')^2 over all n^2 entries and its gradient in U, by row blocks."""
    n = U.shape[0]
    if n > cap:
        raise ValueError(f'dense structure loss is capped at {cap} nodes (graph has {n}); '
                         f"use structure_loss='sampled'")
    matrix = M.matrix
    total = 0.0
    grad = np.zeros_like(U)
    for rows in divide_chunks(n, ROW_BLOCK):
        E = U[rows] @ U.T - matrix[rows].toarray()
        total += float(np.sum(E * E))
        grad[rows] += E @ U
        grad += E.T @ U[rows]
    scale = 1.0 / (n * n)
    return total * scale, 2.0 * scale * grad


def _sampled_structure(U, M, rng):
    """MSE over the nonzeros of M plus as many uniformly drawn node pairs."""
    coo = M.matrix.tocoo()
    n = U.shape[0]
    extra = max(coo.nnz, 1)
    rows = np.concatenate([coo.row, rng.integers(0, n, size=extra)])
    cols = np.concatenate([coo.col, rng.integers(0, n, size=extra)])
    target = np.asarray(M.matrix[rows, cols]).ravel()
    residual = np.einsum('ij,ij->i', U[rows], U[cols]) - target
    loss = float(np.mean(residual * residual))
    weight = 2.0 * residual / len(residual)
    grad = np.zeros_like(U)
    np.add.at(grad, rows, weight[:, None] * U[cols])
    np.add.at(grad, cols, weight[:, None] * U[rows])
    return loss, grad


def structure_loss(A_hat, X, params, M, mode='dense', cap=DENSE_NODE_CAP, rng=None, AX=None):
    """Structure loss of ``U = PReLU(A X W1)`` against M."""
    U = forward_rect_n(A_hat, X, params, AX=AX)
    if mode == 'sampled':
        return _sampled_structure(U, M, rng or np.random.default_rng(0))[0]
    return _dense_structure(U, M, cap)[0]


def structure_loss_and_grads(AX, params, M, mode='dense', cap=DENSE_NODE_CAP, rng=None):
    Z, U = _hidden(AX, params)
    if mode == 'sampled':
        loss, grad_U = _sampled_structure(U, M, rng)
    else:
        loss, grad_U = _dense_structure(U, M, cap)
    return loss, _hidden_backward(AX, Z, grad_U, params)


def adam_step(params, grads, state, t, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every named tensor.

    ``params`` and ``grads`` map names to arrays; ``state`` keeps the first
    and second moments per name. Returns the updated tensors.
    """
    if t < 1:
        raise ValueError(f'Adam step index must be >= 1, got {t}')
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    updated = {}
    for name, value in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        updated[name] = value - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    state.t = t
    return updated


def _fit(loss_and_grads, params, config, label):
    rows = []
    for epoch in range(1, config.epochs + 1):
        loss, grads = loss_and_grads(params)
        if not np.isfinite(loss):
            raise DivergenceError(f'{label} loss became non-finite at epoch {epoch}', step=epoch)
        rows.append((epoch, loss))
        logger.debug('%s epoch %d: loss=%.8g', label, epoch, loss)
        named = adam_step(params.tensors(), grads, params.adam, epoch, lr=config.lr,
                          beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        params = params.with_tensors(named)
    return params, pd.DataFrame(rows, columns=['epoch', 'loss'])


def _reduced_features(X, config):
    dim = min(config.semantic_dim, *X.shape)
    return svd_reduce(X, dim, seed=child_seed(config.seed, 0))


def train_semantic(AX, reduced, view, config):
    """Fit the semantic model; returns ``(hidden, trace)``."""
    targets = readout_semantics(reduced, view)
    pairs = _semantic_pairs(targets, view)
    rng = np.random.default_rng(child_seed(config.seed, 1))
    params = init_params(AX.shape[1], config.effective_hidden, config, rng, semantic_dim=reduced.shape[1])
    params, trace = _fit(lambda p: semantic_loss_and_grads(AX, p, targets, view, pairs),
                         params, config, 'rect-l')
    return _hidden(AX, params)[1], trace


def train_structure(AX, M, config):
    """Fit the structure model; returns ``(hidden, trace)``."""
    rng = np.random.default_rng(child_seed(config.seed, 2))
    params = init_params(AX.shape[1], config.effective_hidden, config, rng)
    sample_rng = np.random.default_rng(child_seed(config.seed, 3))
    params, trace = _fit(lambda p: structure_loss_and_grads(AX, p, M, config.structure_loss,
                                                            config.structure_node_cap, sample_rng),
                         params, config, 'rect-n')
    return _hidden(AX, params)[1], trace


def train(A_hat, X, M, view, config, parts=('rect_l', 'rect_n')):
    """Train both models and concatenate their row-normalized embeddings.

    Both GCN layers read the raw features ``X`` (kept sparse when given
    sparse). The SVD-reduced features only supply the class-semantic targets
    and fix the width of the semantic head.
    """
    X = sp.csr_matrix(X, dtype=float) if sp.issparse(X) else np.asarray(X, dtype=float)
    AX = A_hat @ X
    reduced = _reduced_features(X, config) if 'rect_l' in parts else None
    n = A_hat.shape[0]
    empty = pd.DataFrame(columns=['epoch', 'loss'])
    rect_l, semantic_trace = np.zeros((n, 0)), empty
    rect_n, structure_trace = np.zeros((n, 0)), empty
    if 'rect_l' in parts:
        rect_l, semantic_trace = train_semantic(AX, reduced, view, config)
    if 'rect_n' in parts:
        rect_n, structure_trace = train_structure(AX, M, config)
    combined = np.hstack([normalize(part) for part in (rect_l, rect_n) if part.shape[1]])
    logger.info('rect: trained on n=%d, embedding width %d', n, combined.shape[1])
    return RectResult(rect=combined, rect_l=rect_l, rect_n=rect_n,
                      semantic_trace=semantic_trace, structure_trace=structure_trace)


class RectEmbedder(IEmbedder):
    """``rect`` (concatenation), ``rect-l`` (semantic) or ``rect-n`` (structure)."""

    PARTS = {'rect': ('rect_l', 'rect_n'), 'rect-l': ('rect_l',), 'rect-n': ('rect_n',)}

    def __init__(self, name, config):
        if name not in self.PARTS:
            raise ValueError(f'unknown GNN method {name!r}')
        self.name = name
        self.config = config
        self._trace = None

    def fit(self, task):
        config = replace(self.config, seed=task.seed)
        A_hat = normalize_adjacency(task.graph)
        X = task.features if task.features is not None else task.graph.adjacency()
        result = train(A_hat, X, task.proximity, task.view, config, parts=self.PARTS[self.name])
        frames = []
        if len(result.semantic_trace):
            frames.append(result.semantic_trace.assign(model='rect-l'))
        if len(result.structure_trace):
            frames.append(result.structure_trace.assign(model='rect-n'))
        self._trace = pd.concat(frames, ignore_index=True)
        if self.name == 'rect-l':
            return result.rect_l
        if self.name == 'rect-n':
            return result.rect_n
        return result.rect

    @property
    def trace(self):
        return self._trace

    @property
    def uses_labels(self):
        return self.name != 'rect-n'
