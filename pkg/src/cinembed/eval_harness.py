"""Node classification on learned embeddings.

An experiment samples completely-imbalanced splits, embeds the graph with
each method, trains a one-vs-rest linear SVM on the original (balanced)
training labels and scores the test nodes with Micro/Macro-F1.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import multilabel_confusion_matrix
from sklearn.preprocessing import MultiLabelBinarizer

from cinembed.cinembed_utils import child_seed, deterministic_blas, render_table
from cinembed.exceptions import DataError
from cinembed.graph_core import proximity_from_graph
from cinembed.interfaces import EmbeddingTask, IEmbedder
from cinembed.label_store import sample_split, unseen_schedule
from cinembed.rect_model import RectConfig, RectEmbedder
from cinembed.rsdne_solver import VARIANT_BY_METHOD, RsdneConfig, RsdneEmbedder

logger = logging.getLogger(__name__)

RECT_METHODS = tuple(RectEmbedder.PARTS)
METHODS = tuple(VARIANT_BY_METHOD) + RECT_METHODS

RESULT_COLUMNS = ['method', 'unseen', 'unseen_classes', 'rate', 'repeat', 'micro_f1', 'macro_f1']

# scores equal to this many decimals count as tied in ``predict``
TIE_DECIMALS = 9


@dataclass(frozen=True)
class ClassifierConfig:
    reg_c: float = 1.0
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.reg_c <= 0:
            raise ValueError(f'reg_c must be positive, got {self.reg_c}')
        if self.epochs < 1:
            raise ValueError(f'epochs must be >= 1, got {self.epochs}')


@dataclass
class LinearClassifier:
    """One hinge-loss scorer per class over standardized features plus a bias column."""

    classes: tuple
    weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    config: ClassifierConfig
    frequencies: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def _design(self, embeddings):
        X = (np.asarray(embeddings, dtype=float) - self.mean) / self.scale
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def decision_function(self, embeddings):
        return self._design(embeddings) @ self.weights.T


@dataclass(frozen=True)
class F1Report:
    micro_f1: float
    macro_f1: float
    counts: pd.DataFrame

    @classmethod
    def from_counts(cls, counts):
        tp, fp, fn = (counts[c].to_numpy(dtype=np.int64) for c in ('tp', 'fp', 'fn'))
        denominators = 2 * tp + fp + fn
        total = int(denominators.sum())
        micro = float(2 * tp.sum()) / total if total else 0.0
        per_class = [2.0 * t / d if d else 0.0 for t, d in zip(tp.tolist(), denominators.tolist())]
        macro = sum(per_class) / len(per_class) if per_class else 0.0
        return cls(micro_f1=micro, macro_f1=macro, counts=counts)


def _pegasos(X, Y, reg, epochs, rng):
    """Projected subgradient descent on all binary problems at once.

    ``Y`` is an N x |C| matrix of +1/-1 targets; every class sees the same
    sample order. The last column of ``X`` is the bias feature; its weight is
    neither shrunk nor projected. Returns the average of the last epoch's
    iterates.
    """
    N, width = X.shape
    weights = np.zeros((Y.shape[1], width))
    radius = 1.0 / np.sqrt(reg)
    step = 0
    for epoch in range(epochs):
        average = np.zeros_like(weights)
        for i in rng.permutation(N):
            step += 1
            eta = 1.0 / (reg * step)
            margins = Y[i] * (weights @ X[i])
            weights[:, :-1] *= 1.0 - eta * reg
            violated = margins < 1.0
            weights[violated] += eta * Y[i, violated][:, None] * X[i]
            norms = np.linalg.norm(weights[:, :-1], axis=1)
            over = norms > radius
            weights[over, :-1] *= (radius / norms[over])[:, None]
            if epoch == epochs - 1:
                average += weights
    return average / N


def _hinge_intercept(scores, targets):
    """Bias minimizing ``sum(max(0, 1 - y * (s + b)))`` for fixed scores ``s``.

    The loss is convex and piecewise linear in b. Its slope starts at -P (P
    positives) and rises by one at every breakpoint, so the minimum sits at
    the P-th smallest breakpoint.
    """
    positives = targets > 0
    breakpoints = np.sort(np.concatenate([1.0 - scores[positives], -1.0 - scores[~positives]]))
    return float(breakpoints[int(positives.sum()) - 1])


def train_classifier(embeddings, plan, labels, config=None):
    """Fit one-vs-rest linear SVMs on the training set L with its original labels."""
    config = config or ClassifierConfig()
    embeddings = np.asarray(embeddings, dtype=float)
    if not np.isfinite(embeddings).all():
        raise DataError('embeddings contain non-finite values')
    train = np.array(plan.train, dtype=np.int64)
    if not len(train):
        raise DataError('the training set is empty')
    classes = tuple(labels.classes)
    X = embeddings[train]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    design = np.hstack([(X - mean) / scale, np.ones((len(train), 1))])
    Y = -np.ones((len(train), len(classes)))
    for row, node in enumerate(train):
        for cls in labels.labels_of(int(node)):
            Y[row, classes.index(cls)] = 1.0
    reg = 1.0 / (config.reg_c * len(train))
    weights = _pegasos(design, Y, reg, config.epochs, np.random.default_rng(config.seed))
    no_positives = [c for j, c in enumerate(classes) if not np.any(Y[:, j] > 0)]
    scores = design[:, :-1] @ weights[:, :-1].T
    for j, cls in enumerate(classes):
        if cls not in no_positives:
            weights[j, -1] = _hinge_intercept(scores[:, j], Y[:, j])
    for cls in no_positives:
        j = classes.index(cls)
        weights[j] = 0.0
        weights[j, -1] = -1.0
        logger.warning('class %s has no positive training example; its scorer always says no', cls)
    return LinearClassifier(classes=classes, weights=weights, mean=mean, scale=scale, config=config,
                            frequencies=(Y > 0).sum(axis=0),
                            diagnostics={'no_positive_classes': no_positives})


def predict(classifier, embeddings, label_counts):
    """Top-l_i classes per node by score.

    Tied scores go to the class with more training positives, then to the
    lower class id.
    """
    label_counts = np.asarray(label_counts, dtype=np.int64)
    if np.any(label_counts < 1):
        raise ValueError('every evaluated node needs a label count >= 1')
    scores = np.round(classifier.decision_function(embeddings), TIE_DECIMALS)
    width = len(classifier.classes)
    support = np.zeros(width) if classifier.frequencies is None else np.asarray(classifier.frequencies, dtype=float)
    rank = np.broadcast_to(np.arange(width), scores.shape)
    order = np.lexsort((rank, np.broadcast_to(-support, scores.shape), -scores), axis=-1)
    classes = np.array(classifier.classes)
    return [frozenset(classes[order[i, :count]].tolist()) for i, count in enumerate(label_counts)]


def f1(predictions, truth, classes):
    """Micro- and Macro-F1 over ``classes`` from per-class TP/FP/FN counts."""
    if len(predictions) != len(truth):
        raise ValueError(f'{len(predictions)} predictions for {len(truth)} true label sets')
    if not len(truth):
        raise DataError('cannot score an empty test set')
    binarizer = MultiLabelBinarizer(classes=list(classes))
    y_true = binarizer.fit_transform(truth)
    y_pred = binarizer.transform(predictions)
    confusion = multilabel_confusion_matrix(y_true, y_pred)
    counts = pd.DataFrame({'class': list(classes),
                           'tp': confusion[:, 1, 1],
                           'fp': confusion[:, 0, 1],
                           'fn': confusion[:, 1, 0]})
    return F1Report.from_counts(counts)


class PrecomputedEmbedder(IEmbedder):
    """Serves an embedding loaded from disk."""

    def __init__(self, name, config):
        self.name = name
        self.config = np.asarray(config, dtype=float)
        self._trace = None

    def fit(self, task):
        if self.config.shape[0] != task.graph.n:
            raise DataError(f'embedding has {self.config.shape[0]} rows, graph has {task.graph.n} nodes')
        return self.config

    @property
    def trace(self):
        return self._trace

    @property
    def uses_labels(self):
        return False


def build_embedder(method, rsdne_config=None, rect_config=None):
    if method in VARIANT_BY_METHOD:
        return RsdneEmbedder(method, rsdne_config or RsdneConfig())
    if method in RECT_METHODS:
        return RectEmbedder(method, rect_config or RectConfig())
    raise ValueError(f'unknown method {method!r}; choose from {", ".join(METHODS)}')


@dataclass(frozen=True)
class _Job:
    method: str
    unseen_count: int
    unseen: tuple
    rate: float
    repeat: int
    seed: int


def _run_job(job, graph, proximity, features, labels, factory, classifier_config, deterministic=False):
    with deterministic_blas(deterministic):
        return _score_job(job, graph, proximity, features, labels, factory, classifier_config)


def _score_job(job, graph, proximity, features, labels, factory, classifier_config):
    plan = sample_split(labels, job.rate, unseen=list(job.unseen), seed=job.seed)
    view = plan.labeled_view(labels)
    task = EmbeddingTask(graph=graph, proximity=proximity, view=view, features=features, seed=job.seed)
    embeddings = factory(job.method).fit(task)
    classifier = train_classifier(embeddings, plan, labels,
                                  ClassifierConfig(classifier_config.reg_c, classifier_config.epochs, job.seed))
    test = np.array(plan.test, dtype=np.int64)
    truth = [labels.labels_of(int(i)) for i in test]
    predictions = predict(classifier, embeddings[test], [len(t) for t in truth])
    report = f1(predictions, truth, labels.classes)
    logger.info('%s unseen=%s rate=%.2f repeat=%d: micro=%.4f macro=%.4f', job.method, list(job.unseen),
                job.rate, job.repeat, report.micro_f1, report.macro_f1)
    return {'method': job.method, 'unseen': job.unseen_count,
            'unseen_classes': ','.join(str(c) for c in job.unseen), 'rate': job.rate,
            'repeat': job.repeat, 'micro_f1': report.micro_f1, 'macro_f1': report.macro_f1}


def run_experiment(graph, features, labels, methods, rates, unseen_counts=(0,), repeats=None, seed=0,
                   threads=1, rsdne_config=None, rect_config=None, classifier_config=None,
                   embedder_factory=None, deterministic=False):
    """Run the completely-imbalanced classification protocol.

    Every method sees the same splits (and the same embedding seed) for a
    given unseen count, rate and repeat. Returns one row per
    method x unseen x rate x repeat. With ``deterministic`` every job, in
    whichever worker runs it, pins its BLAS pools to one thread.
    """
    if isinstance(methods, str):
        methods = [methods]
    if isinstance(unseen_counts, int):
        unseen_counts = [unseen_counts]
    if not methods or not rates:
        raise ValueError('need at least one method and one rate')
    if embedder_factory is None:
        def embedder_factory(method):
            return build_embedder(method, rsdne_config, rect_config)
    for method in methods:
        embedder_factory(method)
    classifier_config = classifier_config or ClassifierConfig()
    proximity = proximity_from_graph(graph)

    jobs = []
    for u_index, unseen_count in enumerate(unseen_counts):
        schedule = unseen_schedule(labels.classes, unseen_count, repeats, seed=child_seed(seed, u_index))
        for r_index, rate in enumerate(rates):
            for repeat, unseen in enumerate(schedule):
                split_seed = child_seed(seed, u_index, r_index, repeat)
                jobs.extend(_Job(method, unseen_count, tuple(unseen), float(rate), repeat, split_seed)
                            for method in methods)
    logger.info('running %d job(s) on %d worker(s)', len(jobs), threads)

    if threads == 1:
        rows = [_run_job(job, graph, proximity, features, labels, embedder_factory, classifier_config,
                         deterministic) for job in jobs]
    else:
        rows = Parallel(n_jobs=threads)(
            delayed(_run_job)(job, graph, proximity, features, labels, embedder_factory, classifier_config,
                              deterministic)
            for job in jobs)
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def summarize(table):
    """Mean and (population) std of both scores per method x unseen x rate."""
    grouped = table.groupby(['method', 'unseen', 'rate'], sort=False)
    summary = grouped.agg(micro_mean=('micro_f1', 'mean'),
                          micro_std=('micro_f1', lambda s: s.std(ddof=0)),
                          macro_mean=('macro_f1', 'mean'),
                          macro_std=('macro_f1', lambda s: s.std(ddof=0)),
                          repeats=('repeat', 'count'))
    return summary.reset_index()


def render_report(summary, title='Node classification'):
    shown = pd.DataFrame({
        'method': summary['method'],
        'unseen': summary['unseen'],
        'rate': summary['rate'].map(lambda r: f'{r:.0%}'),
        'Micro-F1': [f'{m:.4f} ± {s:.4f}' for m, s in zip(summary['micro_mean'], summary['micro_std'])],
        'Macro-F1': [f'{m:.4f} ± {s:.4f}' for m, s in zip(summary['macro_mean'], summary['macro_std'])],
        'repeats': summary['repeats'],
    })
    return render_table(shown, title=title)
