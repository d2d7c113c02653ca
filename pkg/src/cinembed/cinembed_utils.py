import contextlib
import logging

import numpy as np
from tabulate import tabulate
from threadpoolctl import threadpool_limits

logger = logging.getLogger(__name__)


def child_seed(seed, *keys):
    """Derive an independent integer seed from ``seed`` and a path of keys.

    Used to hand every repeat, method and sub-model its own stream while the
    whole run stays a pure function of the top-level seed.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def divide_chunks(n, size):
    """Yield ``slice`` objects covering ``range(n)`` in blocks of ``size``."""
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def parse_list(text, kind=float):
    """Parse a comma separated option like ``0.1,0.3,0.5``."""
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [kind(x) for x in text]
    return [kind(x) for x in str(text).split(',') if x.strip()]


def render_table(frame, title=None, floatfmt='.4f', tablefmt='fancy_grid'):
    """Render a DataFrame as a text table, optionally under a title line."""
    text = tabulate(frame, headers='keys', tablefmt=tablefmt,
                    floatfmt=floatfmt, showindex=False)
    if title is not None:
        return f'{title}\n{text}'
    return text


def write_table(frame, path):
    """Write a DataFrame as tab separated text with full float precision."""
    frame.to_csv(path, sep='\t', index=False, float_format='%.17g')


@contextlib.contextmanager
def deterministic_blas(enabled=True):
    """Pin BLAS/OpenMP pools to one thread so reductions have a fixed order."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        logger.debug('BLAS thread pools pinned to one thread')
        yield
