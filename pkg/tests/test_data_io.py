import numpy as np
import pytest

from cinembed.data_io import (convert_linqs, generate_random_graph, generate_sbm, load_dataset, read_embedding,
                              read_id_map, write_embedding, write_id_map)
from cinembed.exceptions import DataError


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


def test_path_graph_from_two_lines(files):
    bundle = load_dataset(files('g.txt', '0 1\n1 2\n'))
    assert bundle.graph.n == 3
    assert bundle.graph.num_edges == 2
    assert bundle.features is None
    assert bundle.node_features().shape == (3, 3)


def test_comments_weights_and_isolated_nodes(files):
    bundle = load_dataset(files('g.txt', '# header\n0 1 2.5\n\n7\n'))
    assert bundle.id_map == ['0', '1', '7']
    assert bundle.graph.adjacency()[0, 1] == 2.5
    assert bundle.graph.degrees()[2] == 0.0


def test_ids_sort_numerically_when_integers(files):
    bundle = load_dataset(files('g.txt', '10 2\n2 9\n'))
    assert bundle.id_map == ['2', '9', '10']


def test_string_ids_sort_lexicographically(files):
    bundle = load_dataset(files('g.txt', 'b a\nc b\n'))
    assert bundle.id_map == ['a', 'b', 'c']


def test_sparse_features_and_multilabels(files):
    bundle = load_dataset(files('g.txt', '0 1\n1 2\n3 4\n4 0\n'),
                          label_path=files('l.txt', '4 1,3\n0 2\n'),
                          feature_path=files('f.txt', '0 3:1.5 7:2.0\n2 1:1\n'))
    assert bundle.features.shape == (5, 8)
    assert bundle.features[0].nnz == 2
    assert bundle.features[0, 7] == 2.0
    assert bundle.labels.labels_of(4) == frozenset({1, 3})
    assert bundle.labels.classes == (1, 2, 3)


def test_dense_csv_features(files):
    bundle = load_dataset(files('g.txt', '0 1\n'), feature_path=files('f.csv', '0,1.0,0.0\n1,0.5,2.0\n'))
    np.testing.assert_array_equal(bundle.features.toarray(), [[1.0, 0.0], [0.5, 2.0]])


@pytest.mark.parametrize('name, text, line', [
    ('g.txt', '0 1\n1 2 3 4\n', ':2:'),
    ('g.txt', '0 1 heavy\n', ':1:'),
])
def test_malformed_edge_lines_report_line_numbers(files, name, text, line):
    with pytest.raises(DataError, match=line):
        load_dataset(files(name, text))


def test_dangling_ids_rejected(files):
    edges = files('g.txt', '0 1\n')
    with pytest.raises(DataError, match='does not appear'):
        load_dataset(edges, label_path=files('l.txt', '5 0\n'))
    with pytest.raises(DataError, match=':1:'):
        load_dataset(edges, feature_path=files('f.txt', '9 0:1\n'))


def test_label_line_needs_integer_classes(files):
    with pytest.raises(DataError, match=':1:'):
        load_dataset(files('g.txt', '0 1\n'), label_path=files('l.txt', '0 red\n'))


def test_ragged_dense_features_rejected(files):
    with pytest.raises(DataError, match=':2:'):
        load_dataset(files('g.txt', '0 1\n'), feature_path=files('f.csv', '0,1,2\n1,3\n'))


def test_embedding_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    embedding = rng.normal(size=(5, 3)) * 10.0 ** rng.integers(-20, 20, size=(5, 3))
    path = tmp_path / 'emb.txt'
    write_embedding(path, embedding, ['a', 'b', 'c', 'd', 'e'])
    ids, loaded = read_embedding(path)
    assert ids == ['a', 'b', 'c', 'd', 'e']
    assert np.array_equal(loaded, embedding)
    assert path.read_text().splitlines()[0] == '#5 3'


def test_empty_embedding_is_header_only(tmp_path):
    path = tmp_path / 'emb.txt'
    write_embedding(path, np.zeros((0, 4)))
    assert path.read_text() == '#0 4\n'
    ids, loaded = read_embedding(path)
    assert ids == [] and loaded.shape == (0, 4)


@pytest.mark.parametrize('text', ['#2 2\n0\t1.0\t2.0\n', '#1 2\n0\t1.0\n', 'bogus\n'])
def test_embedding_header_mismatch(tmp_path, text):
    path = tmp_path / 'emb.txt'
    path.write_text(text)
    with pytest.raises(DataError):
        read_embedding(path)


def test_id_map_round_trip(tmp_path):
    path = tmp_path / 'g.idmap'
    write_id_map(path, ['x', 'y', '42'])
    assert read_id_map(path) == ['x', 'y', '42']
    path.write_text('x\t0\ny\t2\n')
    with pytest.raises(DataError):
        read_id_map(path)


def test_sbm_with_certain_blocks_is_disjoint_cliques():
    bundle = generate_sbm(3, 5, 1.0, 0.0, seed=0)
    A = bundle.graph.adjacency().toarray()
    blocks = np.arange(15) // 5
    same = blocks[:, None] == blocks[None, :]
    assert np.all(A[same & ~np.eye(15, dtype=bool)] == 1.0)
    assert np.all(A[~same] == 0.0)
    assert bundle.labels.labels_of(7) == frozenset({1})
    assert bundle.features.shape == (15, 15)


def test_sbm_edge_count_matches_expectation():
    blocks, per_block, p_in, p_out = 4, 30, 0.3, 0.02
    within = blocks * per_block * (per_block - 1) // 2
    across = blocks * (blocks - 1) // 2 * per_block ** 2
    mean = within * p_in + across * p_out
    sigma = np.sqrt(within * p_in * (1 - p_in) + across * p_out * (1 - p_out))
    for seed in range(5):
        edges = generate_sbm(blocks, per_block, p_in, p_out, seed=seed).graph.num_edges
        assert abs(edges - mean) < 3 * sigma


def test_sbm_is_reproducible():
    first = generate_sbm(3, 10, 0.4, 0.05, seed=8).graph.adjacency()
    second = generate_sbm(3, 10, 0.4, 0.05, seed=8).graph.adjacency()
    assert (first != second).nnz == 0


def test_sbm_validates_probabilities():
    with pytest.raises(ValueError):
        generate_sbm(2, 5, 0.1, 0.2)


def test_random_graph():
    bundle = generate_random_graph(10, seed=1)
    assert bundle.graph.num_edges == 20
    assert bundle.features.nnz == 10
    assert all(bundle.features[i].indices.tolist() == [i] for i in range(10))
    assert bundle.labels.classes == (0,)
    assert all(bundle.labels.labels_of(i) == frozenset({0}) for i in range(10))
    assert len(bundle.default_split.train) == 1
    assert bundle.default_split.unseen == ()


def test_random_graph_needs_room_for_edges():
    with pytest.raises(ValueError):
        generate_random_graph(4)


def test_convert_linqs(tmp_path, files):
    content = files('toy.content', 'p1\t1\t0\tAI\np2\t0\t1\tDB\np3\t1\t1\tAI\np4\t0\t0\tML\n')
    cites = files('toy.cites', 'p1\tp2\np2\tp3\np9\tp1\n')
    prefix = tmp_path / 'toy'
    summary = convert_linqs(content, cites, prefix)
    assert summary == {'papers': 4, 'edges': 2, 'skipped': 1, 'classes': 3}
    bundle = load_dataset(f'{prefix}.edges', label_path=f'{prefix}.labels', feature_path=f'{prefix}.features')
    assert bundle.id_map == ['p1', 'p2', 'p3', 'p4']
    assert bundle.graph.num_edges == 2
    assert bundle.labels.labels_of(0) == frozenset({0})
    assert bundle.labels.labels_of(3) == frozenset({2})
    np.testing.assert_array_equal(bundle.features.toarray(), [[1, 0], [0, 1], [1, 1], [0, 0]])
