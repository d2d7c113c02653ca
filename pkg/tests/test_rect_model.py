import logging

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_instance

from cinembed import rect_model
from cinembed.exceptions import DivergenceError
from cinembed.graph_core import Graph, proximity_from_graph
from cinembed.interfaces import EmbeddingTask
from cinembed.label_store import LabeledView, sample_split
from cinembed.rect_model import (AdamState, RectConfig, RectEmbedder, _fit, adam_step, forward_rect_l,
                                 init_params, normalize_adjacency, prelu, readout_semantics, semantic_loss,
                                 semantic_loss_and_grads, structure_loss, structure_loss_and_grads, svd_reduce,
                                 train, xavier_uniform)


def central_difference(f, x, h=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        step = np.zeros_like(x)
        step[idx] = h
        grad[idx] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def setup_instance(seed, n=8, features=5, hidden=4, semantic=3):
    graph, M, _, view = random_instance(seed, n=n)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, features))
    AX = normalize_adjacency(graph) @ X
    reduced = svd_reduce(X, semantic, seed=seed)
    params = init_params(features, hidden, RectConfig(), rng, semantic_dim=semantic)
    params.slope = rng.uniform(0.1, 0.4, size=hidden)
    return graph, M, view, AX, reduced, params


def test_normalize_adjacency_single_node():
    A_hat = normalize_adjacency(Graph.from_edges(1, []))
    np.testing.assert_array_equal(A_hat.toarray(), [[1.0]])


def test_normalize_adjacency_path(path_graph):
    A_hat = normalize_adjacency(path_graph).toarray()
    d = np.array([2.0, 3.0, 2.0])
    expected = (np.eye(3) + path_graph.adjacency().toarray()) / np.sqrt(np.outer(d, d))
    np.testing.assert_allclose(A_hat, expected)
    np.testing.assert_allclose(A_hat, A_hat.T)


def test_normalize_adjacency_symmetrizes_directed_graphs():
    A_hat = normalize_adjacency(Graph.from_edges(2, [(0, 1)], directed=True)).toarray()
    np.testing.assert_allclose(A_hat, [[0.5, 0.5], [0.5, 0.5]])


def test_svd_reduce_matches_dense_svd():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 4)) @ rng.normal(size=(4, 12))
    reduced, components = svd_reduce(X, 4, seed=1, return_components=True)
    sigma = np.linalg.svd(X, compute_uv=False)[:4]
    np.testing.assert_allclose(np.linalg.norm(reduced, axis=0), sigma, rtol=1e-8)
    np.testing.assert_allclose(reduced @ components, X, atol=1e-8)


def test_svd_reduce_is_deterministic_for_sparse_input():
    X = sp.random(20, 15, density=0.3, random_state=2, format='csr')
    np.testing.assert_array_equal(svd_reduce(X, 5, seed=3), svd_reduce(X, 5, seed=3))


def test_svd_reduce_rejects_bad_input():
    with pytest.raises(ValueError):
        svd_reduce(np.ones((4, 3)), 4)
    with pytest.raises(ValueError):
        svd_reduce(np.zeros((4, 3)), 2)


def test_readout_takes_class_means(caplog):
    reduced = np.arange(12, dtype=float).reshape(6, 2)
    view = LabeledView(n=6, node_labels={0: frozenset({0}), 2: frozenset({0}), 3: frozenset({1})},
                       seen=(0, 1, 2))
    with caplog.at_level(logging.WARNING):
        targets = readout_semantics(reduced, view)
    assert targets.classes == (0, 1)
    np.testing.assert_allclose(targets.vector(0), [2.0, 3.0])
    np.testing.assert_allclose(targets.vector(1), [6.0, 7.0])
    assert 'class 2' in caplog.text


def test_prelu_and_xavier():
    np.testing.assert_allclose(prelu(np.array([-2.0, 0.0, 3.0]), 0.25), [-0.5, 0.0, 3.0])
    W = xavier_uniform((50, 30), np.random.default_rng(0))
    assert np.abs(W).max() <= np.sqrt(6.0 / 80)


@pytest.mark.parametrize('seed', range(20))
def test_semantic_gradients(seed):
    _, _, view, AX, reduced, params = setup_instance(seed)
    targets = readout_semantics(reduced, view)
    _, grads = semantic_loss_and_grads(AX, params, targets, view)
    for name in ('W1', 'slope', 'W2', 'b'):
        def loss(value):
            return semantic_loss_and_grads(AX, params.with_tensors({name: value}), targets, view)[0]
        numeric = central_difference(loss, getattr(params, name))
        assert relative_error(grads[name], numeric) < 1e-4, name


def test_semantic_loss_agrees_with_forward_pass():
    _, _, view, AX, reduced, params = setup_instance(1)
    targets = readout_semantics(reduced, view)
    _, predicted = forward_rect_l(None, None, params, AX=AX)
    assert semantic_loss(predicted, targets, view) == pytest.approx(
        semantic_loss_and_grads(AX, params, targets, view)[0], rel=1e-8)


@pytest.mark.parametrize('seed', range(20))
@pytest.mark.parametrize('mode', ['dense', 'sampled'])
def test_structure_gradients(seed, mode):
    _, M, _, AX, _, params = setup_instance(seed)

    def evaluate(p):
        return structure_loss_and_grads(AX, p, M, mode=mode, rng=np.random.default_rng(seed))

    _, grads = evaluate(params)
    for name in ('W1', 'slope'):
        numeric = central_difference(lambda value: evaluate(params.with_tensors({name: value}))[0],
                                     getattr(params, name))
        assert relative_error(grads[name], numeric) < 1e-4, name


def test_dense_structure_loss_is_mean_over_all_entries():
    _, M, _, AX, _, params = setup_instance(2)
    U = prelu(AX @ params.W1, params.slope)
    expected = np.mean((U @ U.T - M.to_dense()) ** 2)
    assert structure_loss_and_grads(AX, params, M)[0] == pytest.approx(expected, rel=1e-12)
    assert structure_loss(None, None, params, M, AX=AX) == pytest.approx(expected, rel=1e-12)


def test_dense_structure_loss_node_cap():
    _, M, _, AX, _, params = setup_instance(3)
    with pytest.raises(ValueError, match='sampled'):
        structure_loss_and_grads(AX, params, M, cap=4)


def test_adam_first_step():
    value = np.array([1.0, -2.0, 0.5])
    grad = np.array([0.3, -0.1, 0.0])
    state = AdamState()
    updated = adam_step({'w': value}, {'w': grad}, state, 1, lr=0.01)
    np.testing.assert_allclose(updated['w'], value - 0.01 * grad / (np.abs(grad) + 1e-8))
    assert state.t == 1
    with pytest.raises(ValueError):
        adam_step({'w': value}, {'w': grad}, state, 0)


def test_non_finite_loss_diverges():
    params = init_params(2, 2, RectConfig(), np.random.default_rng(0))
    with pytest.raises(DivergenceError) as info:
        _fit(lambda p: (float('nan'), {}), params, RectConfig(epochs=3), 'rect-n')
    assert info.value.step == 1


def test_train_shapes_and_row_norms(small_sbm):
    plan = sample_split(small_sbm.labels, 0.5, unseen_count=1, seed=0)
    view = plan.labeled_view(small_sbm.labels)
    M = proximity_from_graph(small_sbm.graph)
    config = RectConfig(hidden_dim=6, semantic_dim=8, epochs=40, lr=0.01, seed=1)
    result = train(normalize_adjacency(small_sbm.graph), small_sbm.features, M, view, config)
    assert result.rect.shape == (30, 12)
    assert result.rect_l.shape == result.rect_n.shape == (30, 6)
    norms = np.linalg.norm(result.rect[:, :6], axis=1)
    np.testing.assert_allclose(norms[norms > 0], 1.0)
    assert len(result.semantic_trace) == len(result.structure_trace) == 40
    assert result.semantic_trace['loss'].iloc[-1] < result.semantic_trace['loss'].iloc[0]
    assert result.structure_trace['loss'].iloc[-1] < result.structure_trace['loss'].iloc[0]


def test_gcn_layers_read_raw_features(small_sbm, monkeypatch):
    shapes = []

    def recording_init(in_dim, hidden_dim, config, rng, semantic_dim=None):
        shapes.append((in_dim, semantic_dim))
        return init_params(in_dim, hidden_dim, config, rng, semantic_dim=semantic_dim)

    monkeypatch.setattr(rect_model, 'init_params', recording_init)
    view = sample_split(small_sbm.labels, 0.5, seed=0).labeled_view(small_sbm.labels)
    M = proximity_from_graph(small_sbm.graph)
    identity = sp.identity(30, format='csr')
    config = RectConfig(hidden_dim=4, semantic_dim=3, epochs=2)
    result = train(normalize_adjacency(small_sbm.graph), identity, M, view, config)
    assert shapes == [(30, 3), (30, None)]
    assert result.rect.shape == (30, 8)


def test_strict_width_keeps_total_dimension(small_sbm):
    view = sample_split(small_sbm.labels, 0.5, seed=0).labeled_view(small_sbm.labels)
    M = proximity_from_graph(small_sbm.graph)
    config = RectConfig(hidden_dim=6, semantic_dim=4, epochs=2, strict_width=True)
    result = train(normalize_adjacency(small_sbm.graph), small_sbm.features, M, view, config)
    assert result.rect.shape == (30, 6)


def test_training_is_deterministic(small_sbm):
    view = sample_split(small_sbm.labels, 0.5, seed=0).labeled_view(small_sbm.labels)
    M = proximity_from_graph(small_sbm.graph)
    config = RectConfig(hidden_dim=4, semantic_dim=4, epochs=5, structure_loss='sampled', seed=7)
    A_hat = normalize_adjacency(small_sbm.graph)
    first = train(A_hat, small_sbm.features, M, view, config)
    second = train(A_hat, small_sbm.features, M, view, config)
    np.testing.assert_array_equal(first.rect, second.rect)


@pytest.mark.parametrize('kwargs', [{'epochs': 0}, {'lr': 0.0}, {'readout': 'max'}, {'structure_loss': 'x'}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        RectConfig(**kwargs)


@pytest.mark.parametrize('name, width, uses_labels', [('rect', 8, True), ('rect-l', 4, True), ('rect-n', 4, False)])
def test_embedder_variants(small_sbm, name, width, uses_labels):
    view = sample_split(small_sbm.labels, 0.5, seed=0).labeled_view(small_sbm.labels)
    task = EmbeddingTask(graph=small_sbm.graph, proximity=proximity_from_graph(small_sbm.graph), view=view,
                         features=None, seed=2)
    embedder = RectEmbedder(name, RectConfig(hidden_dim=4, semantic_dim=4, epochs=3))
    assert embedder.fit(task).shape == (30, width)
    assert embedder.uses_labels is uses_labels
    assert set(embedder.trace['model']) <= {'rect-l', 'rect-n'}
    with pytest.raises(ValueError):
        RectEmbedder('gcn', RectConfig())


def test_normalized_adjacency_spectrum(small_sbm):
    A_hat = normalize_adjacency(small_sbm.graph).toarray()
    np.testing.assert_allclose(A_hat, A_hat.T)
    assert np.abs(np.linalg.eigvalsh(A_hat)).max() <= 1.0 + 1e-9
    ring = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    np.testing.assert_allclose(np.asarray(normalize_adjacency(ring).sum(axis=1)).ravel(), 1.0)
