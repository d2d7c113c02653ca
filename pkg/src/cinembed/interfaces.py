import abc
from dataclasses import dataclass
from typing import Any, Optional


@dataclass
class EmbeddingTask:
    """Everything an embedding method may look at for one run.

    ``view`` holds only the completely-imbalanced labels L'; the evaluation
    labels never travel with a task.
    """

    graph: Any
    proximity: Any
    view: Any
    features: Optional[Any] = None
    seed: int = 0


class IEmbedder(metaclass=abc.ABCMeta):
    @abc.abstractmethod
    def __init__(self, name, config):
        raise NotImplementedError

    @abc.abstractmethod
    def fit(self, task):
        """Return the n x d embedding learned from ``task``."""
        raise NotImplementedError

    @property
    @abc.abstractmethod
    def trace(self):
        """Per-iteration objective or per-epoch loss of the last ``fit``."""
        raise NotImplementedError

    @property
    @abc.abstractmethod
    def uses_labels(self):
        raise NotImplementedError
