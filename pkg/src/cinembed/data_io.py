"""Dataset files, embedding files and synthetic graphs.

Formats (all plain text, ``#`` starts a comment line):

- edges: ``source target [weight]`` per line; a single token declares a node
  with no edges;
- labels: ``node_id c1[,c2,...]`` with integer class ids;
- features: ``node_id col:val col:val ...`` (sparse) or
  ``node_id,v1,v2,...`` (dense CSV);
- embeddings: header ``#n d`` then ``node_id<TAB>v1<TAB>...<TAB>vd``;
- id map: ``original_id<TAB>dense_index``.

Node ids are remapped to ``0..n-1``: numerically when every id is an
integer, lexicographically otherwise.
"""
import logging
from dataclasses import dataclass
from typing import Any, Optional

import networkx as nx
import numpy as np
import scipy.sparse as sp

from cinembed.cinembed_utils import write_table
from cinembed.exceptions import DataError
from cinembed.graph_core import Graph
from cinembed.label_store import LabelTable, build_plan

logger = logging.getLogger(__name__)

RANDOM_GRAPH_TRAIN_FRACTION = 0.1


@dataclass
class DatasetBundle:
    graph: Graph
    labels: LabelTable
    features: Optional[Any] = None
    name: str = 'dataset'
    id_map: Optional[list] = None
    default_split: Optional[Any] = None

    def __post_init__(self):
        if self.labels.n != self.graph.n:
            raise DataError(f'{self.name}: label table covers {self.labels.n} nodes, graph has {self.graph.n}')
        if self.features is not None and self.features.shape[0] != self.graph.n:
            raise DataError(f'{self.name}: feature matrix has {self.features.shape[0]} rows, '
                            f'graph has {self.graph.n} nodes')

    def node_features(self):
        """Feature matrix, or the adjacency rows when none was given."""
        return self.features if self.features is not None else self.graph.adjacency()

    def original_ids(self):
        return self.id_map if self.id_map is not None else [str(i) for i in range(self.graph.n)]


def _content_lines(path):
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if line and not line.startswith('#'):
                yield lineno, line


def _ordered_ids(ids):
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def read_edges(path):
    """Return ``(ids in order of appearance, [(source, target, weight)])``."""
    seen = {}
    edges = []
    for lineno, line in _content_lines(path):
        tokens = line.split()
        if len(tokens) not in (1, 2, 3):
            raise DataError(f'{path}:{lineno}: expected "source target [weight]", got {line!r}')
        for token in tokens[:2]:
            seen.setdefault(token, None)
        if len(tokens) == 1:
            continue
        weight = 1.0
        if len(tokens) == 3:
            try:
                weight = float(tokens[2])
            except ValueError:
                raise DataError(f'{path}:{lineno}: weight {tokens[2]!r} is not a number')
        edges.append((tokens[0], tokens[1], weight))
    return list(seen), edges


def read_labels(path, index):
    mapping = {}
    for lineno, line in _content_lines(path):
        tokens = line.split()
        if len(tokens) != 2:
            raise DataError(f'{path}:{lineno}: expected "node_id c1[,c2,...]", got {line!r}')
        node, classes = tokens
        if node not in index:
            raise DataError(f'{path}:{lineno}: node {node!r} does not appear in the edge file')
        try:
            mapping[index[node]] = [int(c) for c in classes.split(',') if c]
        except ValueError:
            raise DataError(f'{path}:{lineno}: class ids must be integers, got {classes!r}')
    return mapping


def read_features(path, index):
    """Sparse ``col:val`` or dense CSV rows into an n x m CSR matrix."""
    rows, cols, values = [], [], []
    width = None
    for lineno, line in _content_lines(path):
        dense = ',' in line and ':' not in line
        tokens = line.split(',') if dense else line.split()
        node = tokens[0].strip()
        if node not in index:
            raise DataError(f'{path}:{lineno}: node {node!r} does not appear in the edge file')
        try:
            if dense:
                row = [float(v) for v in tokens[1:]]
                if width is not None and len(row) != width:
                    raise DataError(f'{path}:{lineno}: expected {width} values, got {len(row)}')
                width = len(row)
                for col, value in enumerate(row):
                    if value:
                        rows.append(index[node])
                        cols.append(col)
                        values.append(value)
            else:
                for pair in tokens[1:]:
                    col, _, value = pair.partition(':')
                    rows.append(index[node])
                    cols.append(int(col))
                    values.append(float(value))
        except ValueError as error:
            if isinstance(error, DataError):
                raise
            raise DataError(f'{path}:{lineno}: malformed feature entry in {line!r}')
    if cols and min(cols) < 0:
        raise DataError(f'{path}: negative feature column')
    m = width if width is not None else (max(cols) + 1 if cols else 0)
    matrix = sp.csr_matrix((values, (rows, cols)), shape=(len(index), m))
    matrix.sum_duplicates()
    return matrix


def load_dataset(edge_path, label_path=None, feature_path=None, directed=False, name=None):
    """Read edge, label and feature files into a ``DatasetBundle``."""
    appearance, raw_edges = read_edges(edge_path)
    if not appearance:
        raise DataError(f'{edge_path}: no nodes')
    ids = _ordered_ids(appearance)
    index = {node: i for i, node in enumerate(ids)}
    edges = [(index[s], index[t], w) for s, t, w in raw_edges]
    graph = Graph.from_edges(len(ids), edges, directed=directed)
    mapping = read_labels(label_path, index) if label_path else {}
    labels = LabelTable.from_mapping(graph.n, mapping)
    features = read_features(feature_path, index) if feature_path else None
    bundle = DatasetBundle(graph=graph, labels=labels, features=features,
                           name=name or str(edge_path), id_map=ids)
    logger.info('loaded %s: n=%d edges=%d classes=%d labeled=%d features=%s', bundle.name, graph.n,
                graph.num_edges, len(labels.classes), len(labels.labeled_nodes()),
                'adjacency' if features is None else features.shape[1])
    return bundle


def write_id_map(path, ids):
    with open(path, 'w') as handle:
        for i, original in enumerate(ids):
            handle.write(f'{original}\t{i}\n')


def read_id_map(path):
    pairs = []
    for lineno, line in _content_lines(path):
        parts = line.split('\t')
        if len(parts) != 2:
            raise DataError(f'{path}:{lineno}: expected original_id<TAB>dense_index, got {line!r}')
        try:
            pairs.append((int(parts[1]), parts[0]))
        except ValueError:
            raise DataError(f'{path}:{lineno}: dense index {parts[1]!r} is not an integer')
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise DataError(f'{path}: dense indices are not 0..{len(pairs) - 1}')
    return [original for _, original in pairs]


def generate_sbm(blocks, per_block, p_in, p_out, seed=0):
    """Planted-partition graph; labels are block ids, features the adjacency rows."""
    if blocks < 1 or per_block < 1:
        raise ValueError('blocks and per_block must be >= 1')
    if not 0.0 <= p_out < p_in <= 1.0:
        raise ValueError(f'need 0 <= p_out < p_in <= 1, got p_in={p_in} p_out={p_out}')
    sizes = [per_block] * blocks
    probs = [[p_in if a == b else p_out for b in range(blocks)] for a in range(blocks)]
    nx_graph = nx.stochastic_block_model(sizes, probs, seed=seed)
    graph = Graph.from_edges(blocks * per_block, list(nx_graph.edges()))
    labels = LabelTable.from_mapping(graph.n, {i: nx_graph.nodes[i]['block'] for i in range(graph.n)},
                                     classes=range(blocks))
    logger.info('sbm: %d blocks x %d nodes, %d edges', blocks, per_block, graph.num_edges)
    return DatasetBundle(graph=graph, labels=labels, features=graph.adjacency(),
                         name=f'sbm-{blocks}x{per_block}')


def generate_random_graph(n, seed=0):
    """``n`` nodes and ``2n`` distinct edges, identity features, one shared label.

    A 10% training split with no unseen classes rides along as
    ``default_split``.
    """
    if n < 2:
        raise ValueError(f'n must be >= 2, got {n}')
    if 2 * n > n * (n - 1) // 2:
        raise ValueError(f'a simple graph on {n} nodes cannot hold {2 * n} edges')
    nx_graph = nx.gnm_random_graph(n, 2 * n, seed=seed)
    graph = Graph.from_edges(n, list(nx_graph.edges()))
    labels = LabelTable.from_mapping(n, {i: 0 for i in range(n)}, classes=(0,))
    rng = np.random.default_rng(seed)
    size = max(1, int(round(RANDOM_GRAPH_TRAIN_FRACTION * n)))
    train = rng.choice(n, size=size, replace=False)
    split = build_plan(labels, train, (), seed=seed, train_fraction=RANDOM_GRAPH_TRAIN_FRACTION)
    return DatasetBundle(graph=graph, labels=labels, features=sp.identity(n, format='csr'),
                         name=f'random-{n}', default_split=split)


def write_embedding(path, embedding, node_ids=None):
    embedding = np.asarray(embedding, dtype=float)
    if embedding.ndim != 2:
        raise ValueError(f'embedding must be 2-D, got shape {embedding.shape}')
    n, d = embedding.shape
    node_ids = range(n) if node_ids is None else node_ids
    with open(path, 'w') as handle:
        handle.write(f'#{n} {d}\n')
        for node, row in zip(node_ids, embedding):
            handle.write('\t'.join([str(node)] + [repr(float(v)) for v in row]) + '\n')


def read_embedding(path):
    """Return ``(node_ids, matrix)`` in file order."""
    with open(path) as handle:
        header = handle.readline().strip()
        try:
            n, d = (int(v) for v in header.lstrip('#').split())
        except ValueError:
            raise DataError(f'{path}:1: expected header "#n d", got {header!r}')
        ids, rows = [], []
        for lineno, line in enumerate(handle, start=2):
            line = line.rstrip('\n')
            if not line:
                continue
            parts = line.split('\t')
            if len(parts) != d + 1:
                raise DataError(f'{path}:{lineno}: expected {d} values, got {len(parts) - 1}')
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f'{path}:{lineno}: malformed value in {line!r}')
            ids.append(parts[0])
    if len(rows) != n:
        raise DataError(f'{path}: header announces {n} rows, body has {len(rows)}')
    return ids, np.array(rows, dtype=float).reshape(n, d)


def write_trace(trace, path):
    write_table(trace, path)


def convert_linqs(content_path, cites_path, out_prefix):
    """Convert a ``.content`` / ``.cites`` pair into edge, feature and label files.

    Class names get integer ids in sorted order, written to
    ``<prefix>.classes``. Citations naming unknown papers are skipped.
    """
    papers = []
    class_names = set()
    for lineno, line in _content_lines(content_path):
        parts = line.split('\t')
        if len(parts) < 3:
            raise DataError(f'{content_path}:{lineno}: expected id, features and class, got {line!r}')
        papers.append((parts[0], parts[1:-1], parts[-1]))
        class_names.add(parts[-1])
    known = {paper for paper, _, _ in papers}
    if len(known) != len(papers):
        raise DataError(f'{content_path}: duplicate paper ids')
    class_ids = {name: i for i, name in enumerate(sorted(class_names))}

    edges, skipped = [], 0
    linked = set()
    for lineno, line in _content_lines(cites_path):
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f'{cites_path}:{lineno}: expected "cited citing", got {line!r}')
        if parts[0] not in known or parts[1] not in known:
            skipped += 1
            continue
        edges.append(parts)
        linked.update(parts)
    if skipped:
        logger.warning('skipped %d citation(s) naming unknown papers', skipped)

    with open(f'{out_prefix}.edges', 'w') as handle:
        for cited, citing in edges:
            handle.write(f'{cited} {citing}\n')
        for paper, _, _ in papers:
            if paper not in linked:
                handle.write(f'{paper}\n')
    with open(f'{out_prefix}.features', 'w') as handle:
        for paper, values, _ in papers:
            pairs = [f'{col}:{value}' for col, value in enumerate(values) if float(value)]
            handle.write(' '.join([paper] + pairs) + '\n')
    with open(f'{out_prefix}.labels', 'w') as handle:
        for paper, _, name in papers:
            handle.write(f'{paper} {class_ids[name]}\n')
    with open(f'{out_prefix}.classes', 'w') as handle:
        for name, i in class_ids.items():
            handle.write(f'{i}\t{name}\n')
    return {'papers': len(papers), 'edges': len(edges), 'skipped': skipped, 'classes': len(class_ids)}
