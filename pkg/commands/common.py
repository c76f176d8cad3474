import click

from models.fair_td_model import FAIRNESS_KINDS, FairnessConstraint
from models.truth_discovery_model import EMConfig
from utils.config import parse_grid, settings
from utils.errors import ConfigError


def banner(title, **details):
    """Start/finish banner on standard error"""
    click.echo('=' * 60, err=True)
    click.echo(title, err=True)
    for key, value in details.items():
        click.echo(f'  {key}: {value}', err=True)
    click.echo('=' * 60, err=True)


def _apply(fn, options):
    for option in reversed(options):
        fn = option(fn)
    return fn


def dataset_options(fn):
    return _apply(fn, [
        click.option('--annotations', required=True, type=click.Path(dir_okay=False),
                     help='Annotations CSV (task_id,worker_id,label)'),
        click.option('--tasks', 'tasks_path', required=True, type=click.Path(dir_okay=False),
                     help='Task table CSV (task_id,group[,truth][,feat_0..])')
    ])


def run_options(fn):
    """--seed / --threads / --out, defaulting to the environment settings"""
    return _apply(fn, [
        click.option('--seed', type=int, default=lambda: settings.seed, show_default='TDAUDIT_SEED or 0'),
        click.option('--threads', type=int, default=lambda: settings.threads, show_default='TDAUDIT_THREADS or 1'),
        click.option('--out', type=click.Path(file_okay=False), default=lambda: settings.output_dir,
                     show_default='TDAUDIT_OUTPUT_DIR or results', help='Output directory')
    ])


def em_options(fn):
    return _apply(fn, [
        click.option('--max-iter', type=int, default=100, show_default=True),
        click.option('--tol', type=float, default=1e-6, show_default=True),
        click.option('--smoothing', type=float, default=0.01, show_default=True, help='Laplace pseudo-count')
    ])


def fairness_options(fn):
    return _apply(fn, [
        click.option('--fairness', type=click.Choice(FAIRNESS_KINDS), default='dp', show_default=True),
        click.option('--epsilon', type=float, default=0.05, show_default=True, help='Allowed fairness violation')
    ])


def em_config(max_iter, tol, smoothing, seed, threads):
    return EMConfig(max_iter=max_iter, tol=tol, smoothing=smoothing, seed=seed, threads=threads).validate()


def fairness_constraint(fairness, epsilon):
    return FairnessConstraint(kind=fairness, epsilon=epsilon).validate()


def grid(text, name, default=None):
    values = parse_grid(text, name)
    return default if values is None else values


def collect_config(*builders):
    """
    Call every builder and raise one ConfigError listing all of their problems

    Returns:
        list: what each builder returned, in order
    """
    built, problems = [], []
    for build in builders:
        try:
            built.append(build())
        except ConfigError as e:
            problems += e.problems
            built.append(None)
    if problems:
        raise ConfigError(problems)
    return built
