import numpy as np
import pytest

from cinembed.data_io import generate_sbm
from cinembed.graph_core import Graph, proximity_from_graph
from cinembed.label_store import LabeledView, LabelTable


@pytest.fixture
def path_graph():
    return Graph.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def small_sbm():
    return generate_sbm(blocks=3, per_block=10, p_in=0.5, p_out=0.05, seed=3)


def random_instance(seed, n=8, n_classes=2, labeled_fraction=0.75):
    """Random connected-ish graph with single-label nodes and the view of all labels."""
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1, float(rng.uniform(0.5, 2.0))) for i in range(n - 1)]
    for _ in range(n):
        a, b = rng.choice(n, size=2, replace=False)
        edges.append((int(a), int(b), float(rng.uniform(0.5, 2.0))))
    graph = Graph.from_edges(n, edges)
    classes = rng.integers(0, n_classes, size=n)
    labeled = rng.random(n) < labeled_fraction
    labels = LabelTable.from_mapping(n, {i: int(classes[i]) for i in range(n)}, classes=range(n_classes))
    view = LabeledView(n=n, node_labels={i: frozenset({int(classes[i])}) for i in range(n) if labeled[i]},
                       seen=tuple(range(n_classes)))
    return graph, proximity_from_graph(graph), labels, view
