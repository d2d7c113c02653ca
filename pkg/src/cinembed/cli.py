"""
The `cinembed` command line app.

Every run records its options: `embed`, `eval` and `bench` write
`manifest.txt` into their output directory, `split` writes `<out>.manifest`
and `convert` writes `<out-prefix>.manifest`. Feeding one back through
`--config` replays the run. Exit codes: 0 success, 2 usage, 3 data,
4 divergence.
"""
import argparse
import logging
import multiprocessing
import sys
import time
from pathlib import Path

import pandas as pd

from cinembed._version import version
from cinembed.cinembed_utils import deterministic_blas, parse_list, render_table, write_table
from cinembed.data_io import (convert_linqs, generate_random_graph, load_dataset, read_embedding,
                              write_embedding, write_id_map, write_trace)
from cinembed.eval_harness import (METHODS, ClassifierConfig, PrecomputedEmbedder, build_embedder,
                                   render_report, run_experiment, summarize)
from cinembed.exceptions import CinembedError, DataError, UsageError, exit_code
from cinembed.graph_core import proximity_from_graph
from cinembed.interfaces import EmbeddingTask
from cinembed.label_store import LabeledView, SplitPlan, sample_split
from cinembed.rect_model import RectConfig
from cinembed.rsdne_solver import RsdneConfig

logger = logging.getLogger(__name__)

BOOLEAN_OPTIONS = {'directed', 'deterministic', 'strict_width'}
UNRECORDED = {'config', 'verbose', 'handler'}


def _common(parser):
    parser.add_argument('-v', '--verbose', action='count', default=0, help='-v for INFO, -vv for DEBUG')
    parser.add_argument('--config', help='key=value file; explicit flags override it')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--threads', type=int, default=1, help='parallel workers for repeated runs')
    parser.add_argument('--deterministic', action='store_true', help='pin BLAS to one thread')


def _dataset(parser):
    parser.add_argument('--edges', help='edge list file')
    parser.add_argument('--labels', help='label file')
    parser.add_argument('--features', help='feature file (default: adjacency rows)')
    parser.add_argument('--directed', action='store_true')


def _models(parser):
    group = parser.add_argument_group('embedding')
    group.add_argument('--dim', type=int, default=200, help='embedding / hidden dimension')
    group.add_argument('--alpha', type=float, default=1.0)
    group.add_argument('--lam', type=float, default=0.1)
    group.add_argument('--k', type=int, default=5)
    group.add_argument('--kbar', type=int, default=None, help='candidate pool size (default 20k)')
    group.add_argument('--eta0', type=float, default=1.0)
    group.add_argument('--max-iter', type=int, default=15)
    group.add_argument('--tol', type=float, default=1e-4)
    group.add_argument('--epochs', type=int, default=100)
    group.add_argument('--lr', type=float, default=0.001)
    group.add_argument('--semantic-dim', type=int, default=200)
    group.add_argument('--structure-loss', choices=('dense', 'sampled'), default='dense')
    group.add_argument('--strict-width', action='store_true')


def build_parser():
    parser = argparse.ArgumentParser(prog='cinembed', description='Network embedding under completely-imbalanced labels.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {version}')
    commands = parser.add_subparsers(dest='command')
    parsers = {}

    convert = commands.add_parser('convert', help='convert a .content/.cites dump')
    _common(convert)
    convert.add_argument('--content')
    convert.add_argument('--cites')
    convert.add_argument('--out-prefix')
    convert.set_defaults(handler=cmd_convert)
    parsers['convert'] = convert

    split = commands.add_parser('split', help='sample a completely-imbalanced split')
    _common(split)
    _dataset(split)
    split.add_argument('--rate', type=float, default=0.5)
    split.add_argument('--unseen', type=int, default=0, help='number of unseen classes')
    split.add_argument('--unseen-classes', help='explicit comma list of unseen classes')
    split.add_argument('--out', help='split plan file (dense node indices)')
    split.set_defaults(handler=cmd_split)
    parsers['split'] = split

    embed = commands.add_parser('embed', help='learn one embedding')
    _common(embed)
    _dataset(embed)
    embed.add_argument('--method', choices=METHODS, default='rsdne')
    embed.add_argument('--rate', type=float, default=0.5)
    embed.add_argument('--unseen', type=int, default=0)
    embed.add_argument('--split', help='split plan file written by "split"')
    embed.add_argument('--out', help='output directory')
    _models(embed)
    embed.set_defaults(handler=cmd_embed)
    parsers['embed'] = embed

    evaluate = commands.add_parser('eval', help='node classification with Micro/Macro-F1')
    _common(evaluate)
    _dataset(evaluate)
    evaluate.add_argument('--methods', default='rsdne')
    evaluate.add_argument('--rates', default='0.1,0.3,0.5')
    evaluate.add_argument('--unseen', default='0', help='comma list of unseen class counts')
    evaluate.add_argument('--repeats', type=int, default=None)
    evaluate.add_argument('--embedding', help='score a precomputed embedding instead')
    evaluate.add_argument('--reg-c', type=float, default=1.0)
    evaluate.add_argument('--clf-epochs', type=int, default=30)
    evaluate.add_argument('--out', help='output directory')
    _models(evaluate)
    evaluate.set_defaults(handler=cmd_eval)
    parsers['eval'] = evaluate

    bench = commands.add_parser('bench', help='time methods on random graphs with 2n edges')
    _common(bench)
    bench.add_argument('--sizes', default='1000,5000,10000')
    bench.add_argument('--methods', default='rsdne,rsdne-star')
    bench.add_argument('--timeout', type=float, default=3600.0, help='seconds per method and size')
    bench.add_argument('--out', help='output directory')
    _models(bench)
    bench.set_defaults(handler=cmd_bench)
    parsers['bench'] = bench
    return parser, parsers


def load_config(path):
    """Read a ``key=value`` file; keys may use dashes or underscores."""
    values = {}
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            key, sep, value = line.partition('=')
            if not sep:
                raise UsageError(f'{path}:{lineno}: expected key=value, got {line!r}')
            key = key.strip().lstrip('-').replace('-', '_')
            value = value.strip()
            if key in BOOLEAN_OPTIONS:
                value = value.lower() in ('1', 'true', 'yes', 'on')
            values[key] = value
    return values


def write_manifest(path, args):
    """Every resolved option as ``key=value``; replay with ``--config``."""
    with open(path, 'w') as handle:
        handle.write(f'# cinembed {version} {args.command}\n')
        for key, value in sorted(vars(args).items()):
            if key in UNRECORDED or key == 'command' or value is None:
                continue
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            handle.write(f'{key}={value}\n')


def _configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')


def _rsdne_config(args):
    return RsdneConfig(dim=args.dim, alpha=args.alpha, lam=args.lam, k=args.k, kbar=args.kbar,
                       eta0=args.eta0, max_iter=args.max_iter, tol=args.tol, seed=args.seed)


def _rect_config(args):
    return RectConfig(hidden_dim=args.dim, semantic_dim=args.semantic_dim, epochs=args.epochs, lr=args.lr,
                      structure_loss=args.structure_loss, strict_width=args.strict_width, seed=args.seed)


def _load(args, need_labels=False):
    if not args.edges:
        raise UsageError('--edges is required')
    if need_labels and not args.labels:
        raise UsageError('--labels is required')
    return load_dataset(args.edges, args.labels, args.features, directed=args.directed,
                        name=Path(args.edges).stem)


def _require(args, *names):
    missing = ['--' + name.replace('_', '-') for name in names if not getattr(args, name)]
    if missing:
        raise UsageError(f'{args.command} needs {", ".join(missing)}')


def _outdir(args):
    _require(args, 'out')
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_convert(args):
    _require(args, 'content', 'cites', 'out_prefix')
    summary = convert_linqs(args.content, args.cites, args.out_prefix)
    write_manifest(f'{args.out_prefix}.manifest', args)
    print(render_table(pd.DataFrame([summary]), title=f'converted to {args.out_prefix}.*'))
    return 0


def cmd_split(args):
    _require(args, 'out')
    bundle = _load(args, need_labels=True)
    unseen = parse_list(args.unseen_classes, int) if args.unseen_classes else None
    plan = sample_split(bundle.labels, args.rate, unseen_count=args.unseen, seed=args.seed, unseen=unseen)
    plan.dump(args.out)
    write_id_map(f'{args.out}.idmap', bundle.id_map)
    write_manifest(f'{args.out}.manifest', args)
    print(f"split written to {args.out}: |L|={len(plan.train)} |L'|={len(plan.train_kept)} "
          f"|test|={len(plan.test)} unseen={list(plan.unseen)}")
    return 0


def cmd_embed(args):
    embedder = build_embedder(args.method, _rsdne_config(args), _rect_config(args))
    if embedder.uses_labels and not args.labels:
        raise UsageError(f'method {args.method} needs --labels')
    bundle = _load(args)
    out = _outdir(args)
    view = LabeledView.empty(bundle.graph.n)
    if embedder.uses_labels:
        if args.split:
            plan = SplitPlan.load(args.split)
        else:
            plan = sample_split(bundle.labels, args.rate, unseen_count=args.unseen, seed=args.seed)
        plan.dump(out / 'split.txt')
        view = plan.labeled_view(bundle.labels)
    task = EmbeddingTask(graph=bundle.graph, proximity=proximity_from_graph(bundle.graph), view=view,
                         features=bundle.features, seed=args.seed)
    embedding = embedder.fit(task)
    write_embedding(out / 'embedding.txt', embedding, bundle.id_map)
    write_trace(embedder.trace, out / 'trace.tsv')
    write_id_map(out / f'{bundle.name}.idmap', bundle.id_map)
    write_manifest(out / 'manifest.txt', args)
    print(f'{args.method}: {embedding.shape[0]} x {embedding.shape[1]} embedding written to {out}')
    return 0


def cmd_eval(args):
    bundle = _load(args, need_labels=True)
    out = _outdir(args)
    methods = parse_list(args.methods, str)
    factory = None
    if args.embedding:
        ids, matrix = read_embedding(args.embedding)
        index = {node: i for i, node in enumerate(bundle.original_ids())}
        missing = [node for node in ids if node not in index]
        if missing or len(ids) != bundle.graph.n:
            raise DataError(f'{args.embedding}: node ids do not match the dataset '
                            f'({len(missing)} unknown, {len(ids)} rows for {bundle.graph.n} nodes)')
        position = {node: row for row, node in enumerate(ids)}
        aligned = matrix[[position[node] for node in bundle.original_ids()]]
        methods = ['precomputed']

        def factory(method):
            return PrecomputedEmbedder(method, aligned)

    table = run_experiment(bundle.graph, bundle.features, bundle.labels, methods, parse_list(args.rates),
                           unseen_counts=parse_list(args.unseen, int), repeats=args.repeats, seed=args.seed,
                           threads=args.threads, rsdne_config=_rsdne_config(args),
                           rect_config=_rect_config(args),
                           classifier_config=ClassifierConfig(reg_c=args.reg_c, epochs=args.clf_epochs),
                           embedder_factory=factory, deterministic=args.deterministic)
    summary = summarize(table)
    report = render_report(summary, title=f'{bundle.name}: node classification')
    write_table(table, out / 'metrics.tsv')
    write_table(summary, out / 'summary.tsv')
    (out / 'report.txt').write_text(report + '\n')
    write_manifest(out / 'manifest.txt', args)
    print(report)
    return 0


def _time_method(n, method, seed, rsdne_config, rect_config):
    bundle = generate_random_graph(n, seed=seed)
    embedder = build_embedder(method, rsdne_config, rect_config)
    view = bundle.default_split.labeled_view(bundle.labels)
    task = EmbeddingTask(graph=bundle.graph, proximity=proximity_from_graph(bundle.graph), view=view,
                         features=bundle.features, seed=seed)
    start = time.perf_counter()
    embedder.fit(task)
    return time.perf_counter() - start


def cmd_bench(args):
    out = _outdir(args)
    methods = parse_list(args.methods, str)
    for method in methods:
        build_embedder(method)
    rows = []
    context = multiprocessing.get_context('spawn')
    for n in parse_list(args.sizes, int):
        for method in methods:
            pool = context.Pool(1)
            try:
                job = pool.apply_async(_time_method, (n, method, args.seed, _rsdne_config(args), _rect_config(args)))
                seconds = job.get(timeout=args.timeout)
                shown = f'{seconds:.6f}'
            except multiprocessing.TimeoutError:
                logger.warning('%s on n=%d exceeded %.0f s', method, n, args.timeout)
                shown = 'timeout'
            finally:
                pool.terminate()
                pool.join()
            logger.info('bench n=%d %s: %s', n, method, shown)
            print(f'{n}\t{method}\t{shown}')
            rows.append({'n': n, 'method': method, 'seconds': shown})
    write_table(pd.DataFrame(rows, columns=['n', 'method', 'seconds']), out / 'timings.tsv')
    write_manifest(out / 'manifest.txt', args)
    return 0


def main(argv=None):
    """
    Args:
        argv (list): List of arguments (defaults to ``sys.argv[1:]``)

    Returns:
        int: A return code (0 ok, 2 usage, 3 data, 4 divergence)
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, parsers = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 0
        if args.config:
            values = load_config(args.config)
            unknown = sorted(set(values) - set(vars(args)) - UNRECORDED)
            if unknown:
                raise UsageError(f'{args.config}: unknown option(s) {unknown}')
            parsers[args.command].set_defaults(**{k: v for k, v in values.items() if k not in UNRECORDED})
            args = parser.parse_args(argv)
    except SystemExit as stop:
        return stop.code if isinstance(stop.code, int) else 2
    except CinembedError as error:
        print(f'cinembed: {error}', file=sys.stderr)
        return exit_code(error)

    _configure_logging(args.verbose)
    try:
        with deterministic_blas(args.deterministic):
            return args.handler(args)
    except CinembedError as error:
        logger.debug('command failed', exc_info=True)
        print(f'cinembed: {error}', file=sys.stderr)
        return exit_code(error)
    except ValueError as error:
        print(f'cinembed: {error}', file=sys.stderr)
        return UsageError.exit_code
