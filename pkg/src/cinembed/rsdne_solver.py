"""Shallow embedding by alternating minimization.

The objective is

    J = ||M - U H||_F^2 + lam (||U||_F^2 + ||H||_F^2)
        + alpha (Tr(U' L_s U) + Tr(U' L_w U))

where ``L_s`` is the Laplacian of the binary intra-class neighbor matrix S
and ``L_w`` the Laplacian of W, the proximity matrix with the known
connections between differently labeled nodes cut. Each outer iteration
takes an Armijo gradient step on U, then on H, then solves for S in closed
form (top-k nearest same-class peers).

The light variant restricts every labeled node's peer search to a fixed
random candidate pool. ``mfdw_baseline`` drops the label terms altogether.
"""
import enum
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from cinembed.exceptions import DivergenceError
from cinembed.graph_core import laplacian
from cinembed.interfaces import IEmbedder
from cinembed.label_store import LabeledView

logger = logging.getLogger(__name__)


class RsdneVariant(enum.Enum):
    RSDNE = 'rsdne'
    RSDNE_STAR = 'rsdne_star'
    MFDW_BASELINE = 'mfdw_baseline'
    INTRA_ONLY = 'intra_only'
    RANDOM_INTRA = 'random_intra'
    INTER_ONLY = 'inter_only'

    @property
    def uses_intra(self):
        return self in (RsdneVariant.RSDNE, RsdneVariant.RSDNE_STAR,
                        RsdneVariant.INTRA_ONLY, RsdneVariant.RANDOM_INTRA)

    @property
    def uses_inter(self):
        return self in (RsdneVariant.RSDNE, RsdneVariant.RSDNE_STAR, RsdneVariant.INTER_ONLY)

    @property
    def adaptive(self):
        """Whether S is re-solved every iteration."""
        return self in (RsdneVariant.RSDNE, RsdneVariant.RSDNE_STAR, RsdneVariant.INTRA_ONLY)

    @property
    def light(self):
        return self is RsdneVariant.RSDNE_STAR

    @property
    def uses_labels(self):
        return self is not RsdneVariant.MFDW_BASELINE


@dataclass(frozen=True)
class RsdneConfig:
    dim: int = 200
    alpha: float = 1.0
    lam: float = 0.1
    k: int = 5
    kbar: Optional[int] = None
    eta0: float = 1.0
    armijo_beta: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 20
    max_iter: int = 15
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.kbar is None:
            object.__setattr__(self, 'kbar', 20 * self.k)
        if self.dim < 1:
            raise ValueError(f'dim must be >= 1, got {self.dim}')
        if self.k < 1:
            raise ValueError(f'k must be >= 1, got {self.k}')
        if self.kbar <= self.k:
            raise ValueError(f'kbar must exceed k, got kbar={self.kbar} k={self.k}')
        if self.alpha < 0 or self.lam < 0:
            raise ValueError('alpha and lam must be nonnegative')
        if not (0 < self.armijo_beta < 1 and 0 < self.armijo_c < 1):
            raise ValueError('armijo_beta and armijo_c must lie in (0, 1)')
        if self.eta0 <= 0:
            raise ValueError(f'eta0 must be positive, got {self.eta0}')
        if self.max_iter < 0 or self.max_backtracks < 0:
            raise ValueError('max_iter and max_backtracks must be nonnegative')


@dataclass
class RsdneState:
    """Factor matrices, neighbor selection S, and the cut weights W."""

    U: np.ndarray
    H: np.ndarray
    S: sp.csr_matrix
    W: sp.csr_matrix
    variant: RsdneVariant
    candidates: Optional[dict] = None
    L_s: object = None
    L_w: object = None

    def __post_init__(self):
        if self.L_s is None:
            self.L_s = laplacian(self.S)
        if self.L_w is None:
            self.L_w = laplacian(self.W)

    def replace_S(self, S):
        self.S = S
        self.L_s = laplacian(S)

    def penalty(self, alpha):
        """alpha (L_s + L_w), restricted to the terms the variant uses."""
        n = self.U.shape[0]
        total = sp.csr_matrix((n, n))
        if self.variant.uses_intra:
            total = total + self.L_s.matrix
        if self.variant.uses_inter:
            total = total + self.L_w.matrix
        return sp.csr_matrix(alpha * total)


@dataclass
class SolveResult:
    embedding: np.ndarray
    trace: pd.DataFrame
    state: RsdneState


def build_W(M, view):
    """Cut M between L' nodes with disjoint label sets; keep every other entry."""
    coo = M.matrix.tocoo()
    n = M.n
    labeled = np.zeros(n, dtype=bool)
    labeled[view.labeled_nodes()] = True
    both = np.flatnonzero(labeled[coo.row] & labeled[coo.col])
    keep = np.ones(coo.nnz, dtype=bool)
    if len(both):
        Y = view.indicator()
        shared = np.einsum('ij,ij->i', Y[coo.row[both]], Y[coo.col[both]]) > 0
        keep[both[~shared]] = False
    W = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=(n, n))
    W.sort_indices()
    return W


def init_state(config, view, M, variant=RsdneVariant.RSDNE):
    """Random U, H in [-1/sqrt(d), 1/sqrt(d)], random same-class S, and W.

    U and H are drawn first so every variant starts from the same factors
    for a given seed.
    """
    variant = RsdneVariant(variant)
    rng = np.random.default_rng(config.seed)
    n, d = M.n, config.dim
    bound = 1.0 / np.sqrt(d)
    U = rng.uniform(-bound, bound, size=(n, d))
    H = rng.uniform(-bound, bound, size=(d, n))
    candidates = {} if variant.light else None
    rows, cols = [], []
    if variant.uses_intra:
        for i in view.labeled_nodes():
            pool = view.peers(i)
            if variant.light:
                if len(pool) > config.kbar:
                    pool = np.sort(rng.choice(pool, size=config.kbar, replace=False))
                candidates[int(i)] = pool
            take = min(config.k, len(pool))
            if take:
                chosen = rng.choice(pool, size=take, replace=False)
                rows.extend([i] * take)
                cols.extend(chosen.tolist())
    S = _selection_matrix(rows, cols, n)
    return RsdneState(U=U, H=H, S=S, W=build_W(M, view), variant=variant, candidates=candidates)


def _selection_matrix(rows, cols, n):
    S = sp.csr_matrix((np.ones(len(rows)), (np.asarray(rows, dtype=np.int64),
                                             np.asarray(cols, dtype=np.int64))), shape=(n, n))
    S.sort_indices()
    return S


def _fit_term(U, H, M):
    """||M - UH||_F^2 without forming UH: ||M||^2 - 2 Tr(U' M H') + Tr(U'U HH')."""
    cross = np.sum(U * (M.matrix @ H.T))
    return M.frobenius_sq() - 2.0 * cross + np.sum((U.T @ U) * (H @ H.T))


def objective(state, M, config):
    U, H = state.U, state.H
    ridge = config.lam * (np.sum(U * U) + np.sum(H * H))
    label_terms = np.sum(U * (state.penalty(config.alpha) @ U))
    return float(_fit_term(U, H, M) + ridge + label_terms)


def grad_U(state, M, config):
    U, H = state.U, state.H
    P = state.penalty(config.alpha)
    return 2.0 * (-(M.matrix @ H.T) + U @ (H @ H.T) + P @ U + config.lam * U)


def grad_H(state, M, config):
    U, H = state.U, state.H
    return 2.0 * (-(M.matrix.T @ U).T + (U.T @ U) @ H + config.lam * H)


def update_S(state, view, config, mode='full'):
    """Closed-form S: each labeled node keeps its k nearest same-class peers.

    ``full`` searches all peers, ``light`` only the node's candidate pool.
    Ties go to the lower node index.
    """
    if mode not in ('full', 'light'):
        raise ValueError(f"mode must be 'full' or 'light', got {mode!r}")
    if mode == 'light' and state.candidates is None:
        raise ValueError('light mode needs candidate pools (initialize with the rsdne_star variant)')
    U = state.U
    rows, cols = [], []
    for i in view.labeled_nodes():
        pool = state.candidates[int(i)] if mode == 'light' else view.peers(i)
        if not len(pool):
            continue
        diff = U[pool] - U[i]
        dist = np.einsum('ij,ij->i', diff, diff)
        chosen = pool[np.argsort(dist, kind='stable')[:config.k]]
        rows.extend([i] * len(chosen))
        cols.extend(chosen.tolist())
    return _selection_matrix(rows, cols, U.shape[0])


def check_state(state, view, config, M=None):
    """Structural audit of S and W; returns the list of violations."""
    problems = []
    S = state.S.tocoo()
    if np.any(S.row == S.col):
        problems.append('S has nonzero diagonal entries')
    if S.nnz and not np.all(S.data == 1.0):
        problems.append('S is not binary')
    counts = np.bincount(S.row, minlength=view.n)
    labeled = set(int(i) for i in view.labeled_nodes())
    for i, j in zip(S.row, S.col):
        if i not in labeled or j not in labeled:
            problems.append(f'S[{i},{j}] links a node outside L\'')
        elif not view.labels_of(i) & view.labels_of(j):
            problems.append(f'S[{i},{j}] links nodes without a shared class')
    if state.variant.uses_intra:
        for i in sorted(labeled):
            pool = state.candidates[i] if state.variant.light else view.peers(i)
            expected = min(config.k, len(pool))
            if counts[i] != expected:
                problems.append(f'row {i} of S has {counts[i]} ones, expected {expected}')
    unlabeled_rows = [i for i in np.flatnonzero(counts) if int(i) not in labeled]
    if unlabeled_rows:
        problems.append(f'unlabeled rows {unlabeled_rows} of S are nonzero')
    W = state.W.tocoo()
    for i, j, w in zip(W.row, W.col, W.data):
        if w and i in labeled and j in labeled and not view.labels_of(i) & view.labels_of(j):
            problems.append(f'W[{i},{j}] keeps a connection between different classes')
    if M is not None and (abs(build_W(M, view) - state.W)).sum() > 0:
        problems.append('W does not match the cut proximity matrix')
    if not (np.isfinite(state.U).all() and np.isfinite(state.H).all()):
        problems.append('U or H has non-finite entries')
    return problems


def _armijo(value, point, gradient, eta, config):
    """Backtracking step on ``point``; returns ``(point, eta, accepted)``.

    A step is accepted on sufficient decrease; after ``max_backtracks``
    failures the point is left unchanged.
    """
    current = value(point)
    slope = float(np.sum(gradient * gradient))
    for _ in range(config.max_backtracks + 1):
        candidate = point - eta * gradient
        trial = value(candidate)
        if trial <= current - config.armijo_c * eta * slope:
            return candidate, eta, True
        eta *= config.armijo_beta
    return point, eta, False


def solve(M, view, config, variant=RsdneVariant.RSDNE):
    """Run the alternating U / H / S iterations and return U with its trace."""
    variant = RsdneVariant(variant)
    if not variant.uses_labels:
        config = replace(config, alpha=0.0)
        view = LabeledView.empty(M.n)
    state = init_state(config, view, M, variant)
    J = objective(state, M, config)
    if not np.isfinite(J):
        raise DivergenceError('objective is non-finite at initialization', step=0)
    rows = [(0, J, config.eta0)]
    logger.info('%s: n=%d d=%d |L\'|=%d J0=%.6g', variant.value, M.n, config.dim, len(view), J)
    mode = 'light' if variant.light else 'full'

    for iteration in range(1, config.max_iter + 1):
        def value_U(U):
            return objective(replace(state, U=U), M, config)

        state.U, eta, accepted_u = _armijo(value_U, state.U, grad_U(state, M, config),
                                           config.eta0, config)

        def value_H(H):
            return objective(replace(state, H=H), M, config)

        eta_h = eta if accepted_u else config.eta0
        state.H, eta, accepted_h = _armijo(value_H, state.H, grad_H(state, M, config), eta_h, config)
        if not (accepted_u and accepted_h):
            logger.debug('iteration %d: Armijo rejected the %s step', iteration,
                         'U' if not accepted_u else 'H')
        if variant.adaptive:
            state.replace_S(update_S(state, view, config, mode))

        J_new = objective(state, M, config)
        if not np.isfinite(J_new):
            raise DivergenceError(f'objective became non-finite at iteration {iteration}', step=iteration)
        rows.append((iteration, J_new, eta))
        logger.debug('iteration %d: J=%.10g eta=%.3g', iteration, J_new, eta)
        decrease = (J - J_new) / max(abs(J), np.finfo(float).tiny)
        J = J_new
        if decrease < config.tol:
            break

    trace = pd.DataFrame(rows, columns=['iter', 'J', 'eta'])
    logger.info('%s: finished after %d iteration(s), J=%.6g', variant.value, len(rows) - 1, J)
    return SolveResult(embedding=state.U, trace=trace, state=state)


class RsdneEmbedder(IEmbedder):
    """Adapter exposing ``solve`` to the evaluation harness and the CLI."""

    def __init__(self, name, config):
        self.name = name
        self.config = config
        self.variant = RsdneVariant(VARIANT_BY_METHOD.get(name, name))
        self._trace = None

    def fit(self, task):
        config = replace(self.config, seed=task.seed)
        result = solve(task.proximity, task.view, config, self.variant)
        self._trace = result.trace
        return result.embedding

    @property
    def trace(self):
        return self._trace

    @property
    def uses_labels(self):
        return self.variant.uses_labels


VARIANT_BY_METHOD = {
    'mfdw': 'mfdw_baseline',
    'rsdne': 'rsdne',
    'rsdne-star': 'rsdne_star',
    'rsdne-intra': 'intra_only',
    'rsdne-random': 'random_intra',
    'rsdne-inter': 'inter_only',
}
