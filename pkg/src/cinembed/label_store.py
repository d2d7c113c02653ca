"""Label bookkeeping and completely-imbalanced train/test splits.

A split samples a training set L among the labeled nodes, picks the unseen
classes, and removes from L every node that carries an unseen label. The
remaining set L' is all an embedding method ever sees, through a
``LabeledView``.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from cinembed.exceptions import DataError, SplitError

logger = logging.getLogger(__name__)

EXHAUSTIVE_CLASS_LIMIT = 7
DEFAULT_RANDOM_REPEATS = 20

ROLE_TRAIN = 'train'
ROLE_REMOVED = 'train_removed'
ROLE_TEST = 'test'


@dataclass(frozen=True)
class LabelTable:
    """Per-node class sets over a fixed class universe."""

    node_labels: tuple
    classes: tuple

    def __post_init__(self):
        universe = set(self.classes)
        for node, labels in enumerate(self.node_labels):
            unknown = set(labels) - universe
            if unknown:
                raise DataError(f'node {node} references unknown class(es) {sorted(unknown)}')

    @classmethod
    def from_mapping(cls, n, mapping, classes=None):
        """Build from ``{node: iterable of class ids}``; missing nodes are unlabeled."""
        node_labels = [frozenset()] * int(n)
        for node, labels in mapping.items():
            if not 0 <= node < n:
                raise DataError(f'label for node {node} outside [0, {n})')
            if isinstance(labels, (int, np.integer)):
                labels = (labels,)
            node_labels[node] = frozenset(int(c) for c in labels)
        if classes is None:
            classes = set().union(*node_labels) if node_labels else set()
        return cls(node_labels=tuple(node_labels), classes=tuple(sorted(int(c) for c in classes)))

    @property
    def n(self):
        return len(self.node_labels)

    def labels_of(self, node):
        return self.node_labels[node]

    def labeled_nodes(self):
        return np.array([i for i, labels in enumerate(self.node_labels) if labels], dtype=np.int64)

    def label_counts(self):
        return np.array([len(labels) for labels in self.node_labels], dtype=np.int64)

    @property
    def is_multilabel(self):
        return any(len(labels) > 1 for labels in self.node_labels)

    def members(self, cls, nodes=None):
        """Nodes (optionally restricted to ``nodes``) carrying class ``cls``, ascending."""
        pool = range(self.n) if nodes is None else sorted(nodes)
        return [i for i in pool if cls in self.node_labels[i]]


@dataclass(frozen=True)
class LabeledView:
    """Labels an embedding method may use: L' nodes and their seen classes only."""

    n: int
    node_labels: dict
    seen: tuple
    _members: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        members = {c: [] for c in self.seen}
        for node in sorted(self.node_labels):
            for c in self.node_labels[node]:
                members[c].append(node)
        object.__setattr__(self, '_members', {c: np.array(v, dtype=np.int64) for c, v in members.items()})

    @classmethod
    def empty(cls, n):
        return cls(n=n, node_labels={}, seen=())

    def labeled_nodes(self):
        return np.array(sorted(self.node_labels), dtype=np.int64)

    def labels_of(self, node):
        return self.node_labels.get(node, frozenset())

    def members(self, cls):
        return self._members[cls]

    def peers(self, node):
        """Other L' nodes sharing at least one class with ``node``, ascending."""
        labels = self.labels_of(node)
        if not labels:
            return np.empty(0, dtype=np.int64)
        pool = np.unique(np.concatenate([self._members[c] for c in labels]))
        return pool[pool != node]

    def indicator(self):
        """n x |seen| binary matrix; rows outside L' are zero."""
        index = {c: j for j, c in enumerate(self.seen)}
        Y = np.zeros((self.n, len(self.seen)))
        for node, labels in self.node_labels.items():
            for c in labels:
                Y[node, index[c]] = 1.0
        return Y

    def __len__(self):
        return len(self.node_labels)


@dataclass(frozen=True)
class SplitPlan:
    """Seen/unseen classes plus the train (L), kept train (L') and test sets."""

    classes: tuple
    seen: tuple
    unseen: tuple
    train: tuple
    train_kept: tuple
    test: tuple
    seed: object = None
    train_fraction: object = None

    @property
    def train_removed(self):
        kept = set(self.train_kept)
        return tuple(i for i in self.train if i not in kept)

    def labeled_view(self, labels):
        """Restrict ``labels`` to L' and the seen classes."""
        seen = set(self.seen)
        node_labels = {i: frozenset(labels.labels_of(i)) & seen for i in self.train_kept}
        return LabeledView(n=labels.n, node_labels=node_labels, seen=self.seen)

    def roles(self):
        kept = set(self.train_kept)
        rows = [(i, ROLE_TRAIN if i in kept else ROLE_REMOVED) for i in self.train]
        rows.extend((i, ROLE_TEST) for i in self.test)
        return sorted(rows)

    def dump(self, path):
        """Write the plan as a header plus ``node_id<TAB>role`` rows."""
        with open(path, 'w') as handle:
            handle.write(f'#seed={"" if self.seed is None else self.seed}\n')
            handle.write(f'#train_fraction={"" if self.train_fraction is None else self.train_fraction!r}\n')
            handle.write(f'#classes={_join(self.classes)}\n')
            handle.write(f'#seen={_join(self.seen)}\n')
            handle.write(f'#unseen={_join(self.unseen)}\n')
            for node, role in self.roles():
                handle.write(f'{node}\t{role}\n')

    @classmethod
    def load(cls, path):
        header = {}
        roles = {ROLE_TRAIN: [], ROLE_REMOVED: [], ROLE_TEST: []}
        with open(path) as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.rstrip('\n')
                if not line:
                    continue
                if line.startswith('#'):
                    key, _, value = line[1:].partition('=')
                    header[key.strip()] = value.strip()
                    continue
                parts = line.split('\t')
                if len(parts) != 2 or parts[1] not in roles:
                    raise DataError(f'{path}:{lineno}: expected node_id<TAB>role, got {line!r}')
                try:
                    roles[parts[1]].append(int(parts[0]))
                except ValueError:
                    raise DataError(f'{path}:{lineno}: node id {parts[0]!r} is not an integer')
        missing = {'classes', 'seen', 'unseen'} - set(header)
        if missing:
            raise DataError(f'{path}: missing header field(s) {sorted(missing)}')
        seed = header.get('seed') or None
        fraction = header.get('train_fraction') or None
        return cls(classes=_split_ints(header['classes']),
                   seen=_split_ints(header['seen']),
                   unseen=_split_ints(header['unseen']),
                   train=tuple(sorted(roles[ROLE_TRAIN] + roles[ROLE_REMOVED])),
                   train_kept=tuple(sorted(roles[ROLE_TRAIN])),
                   test=tuple(sorted(roles[ROLE_TEST])),
                   seed=int(seed) if seed is not None else None,
                   train_fraction=float(fraction) if fraction is not None else None)


def _join(values):
    return ','.join(str(v) for v in values)


def _split_ints(text):
    return tuple(int(v) for v in text.split(',') if v.strip())


def build_plan(labels, train_nodes, unseen=(), seed=None, train_fraction=None):
    """Build a plan from an explicit training set L.

    A training node is dropped from L' if any of its labels is unseen; the
    test set is every labeled node outside L.
    """
    unseen = tuple(sorted(set(unseen)))
    unknown = set(unseen) - set(labels.classes)
    if unknown:
        raise SplitError(f'unseen classes {sorted(unknown)} are not in the class universe')
    train = tuple(sorted(set(int(i) for i in train_nodes)))
    blocked = set(unseen)
    kept = tuple(i for i in train if labels.labels_of(i) and not (labels.labels_of(i) & blocked))
    if not kept:
        raise SplitError('the completely-imbalanced training set is empty: '
                         'every training node carries an unseen label')
    train_set = set(train)
    test = tuple(int(i) for i in labels.labeled_nodes() if i not in train_set)
    seen = tuple(c for c in labels.classes if c not in blocked)
    return SplitPlan(classes=labels.classes, seen=seen, unseen=unseen, train=train,
                     train_kept=kept, test=test, seed=seed, train_fraction=train_fraction)


def sample_split(labels, train_fraction, unseen_count=0, seed=0, unseen=None):
    """Sample L, choose the unseen classes and derive L'.

    Single-label tables are sampled per class (proportional stratification);
    multi-label tables are sampled uniformly among labeled nodes. ``unseen``
    overrides the random choice of unseen classes.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f'train_fraction must lie in (0, 1), got {train_fraction}')
    if unseen is None and not 0 <= unseen_count < len(labels.classes):
        raise SplitError(f'unseen_count must lie in [0, {len(labels.classes)}), got {unseen_count}')
    train_seq, unseen_seq = np.random.SeedSequence(seed).spawn(2)
    train_rng = np.random.default_rng(train_seq)
    if labels.is_multilabel:
        pool = labels.labeled_nodes()
        size = int(round(train_fraction * len(pool)))
        train = train_rng.choice(pool, size=size, replace=False) if size else []
    else:
        train = []
        for cls in labels.classes:
            members = np.array(labels.members(cls), dtype=np.int64)
            size = int(round(train_fraction * len(members)))
            if size:
                train.extend(train_rng.permutation(members)[:size].tolist())
    if unseen is None:
        unseen_rng = np.random.default_rng(unseen_seq)
        unseen = unseen_rng.choice(np.array(labels.classes), size=unseen_count, replace=False).tolist()
    plan = build_plan(labels, train, unseen, seed=seed, train_fraction=train_fraction)
    logger.info('split seed=%s: |L|=%d |L\'|=%d |test|=%d unseen=%s', seed, len(plan.train),
                len(plan.train_kept), len(plan.test), list(plan.unseen))
    return plan


def class_members(plan, labels, cls):
    """Nodes of L' carrying seen class ``cls``, ascending."""
    if cls not in plan.seen:
        raise ValueError(f'class {cls} is not a seen class of this split')
    return labels.members(cls, plan.train_kept)


def enumerate_unseen(classes, unseen_count):
    """Every unseen-class combination, each exactly once."""
    return [tuple(c) for c in itertools.combinations(sorted(classes), unseen_count)]


def unseen_schedule(classes, unseen_count, repeats=None, seed=0, exhaustive=None):
    """Unseen-class sets to evaluate.

    Exhaustive enumeration when the universe has at most seven classes
    (unless ``repeats`` is given), otherwise ``repeats`` random draws.
    """
    classes = tuple(sorted(classes))
    if unseen_count == 0:
        return [()] * (repeats or 1)
    if exhaustive is None:
        exhaustive = repeats is None and len(classes) <= EXHAUSTIVE_CLASS_LIMIT
    if exhaustive:
        return enumerate_unseen(classes, unseen_count)
    rng = np.random.default_rng(seed)
    draws = repeats or DEFAULT_RANDOM_REPEATS
    return [tuple(sorted(rng.choice(np.array(classes), size=unseen_count, replace=False).tolist()))
            for _ in range(draws)]
