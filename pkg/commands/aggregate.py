import logging
import os

import click

from commands.common import (banner, collect_config, dataset_options, em_config, em_options,
                             fairness_constraint, fairness_options, run_options)
from models.fair_td_model import FairTDModel
from models.metrics_model import MetricsModel
from models.truth_discovery_model import TruthDiscoveryModel
from utils.dataset_io import load_dataset, write_labels
from utils.errors import ConfigError
from utils.report_writer import write_report

logger = logging.getLogger(__name__)

ALGORITHMS = TruthDiscoveryModel.ALGORITHMS + FairTDModel.VARIANTS


def run_algorithm(name, bundle, cfg, constraint=None, base='ds'):
    """
    Run one truth-discovery algorithm (classical or fair) on a bundle

    Returns:
        TDResult: The consensus
    """
    matrix, tasks = bundle.matrix, bundle.tasks
    if name in TruthDiscoveryModel.ALGORITHMS:
        return TruthDiscoveryModel.run(name, matrix, tasks.features, cfg)
    if name not in FairTDModel.VARIANTS:
        raise ConfigError(f'unknown algorithm {name!r} (expected one of {ALGORITHMS})')
    if constraint is None:
        raise ConfigError(f'{name} needs a fairness constraint')

    tasks.require_groups(name)
    truth = tasks.require_truth(name) if constraint.kind == 'eo' and name != 'fair-td-pre' else None
    base_result = None
    if name == 'fair-td-post':
        base_result = TruthDiscoveryModel.run(base, matrix, tasks.features, cfg)
    return FairTDModel.run(name, matrix, tasks.groups, constraint, cfg, truth=truth, base=base_result)


def cmd_aggregate(bundle, name, out, cfg, constraint=None, base='ds'):
    """
    Aggregate labels, write labels.csv and report.json

    The report scores the consensus against whatever ground truth is present;
    DP fields are computed even without truth.

    Returns:
        tuple: (TDResult, FairnessReport)
    """
    result = run_algorithm(name, bundle, cfg, constraint, base)
    tasks = bundle.tasks
    fairness = MetricsModel.fairness_report(result.hard_label, tasks.truth, tasks.groups)

    write_labels(result, tasks.task_ids, os.path.join(out, 'labels.csv'))
    write_report({
        **result.summary(),
        'diagnostics': result.diagnostics,
        'fairness': fairness
    }, os.path.join(out, 'report.json'))
    return result, fairness


@click.command('aggregate')
@dataset_options
@click.option('--algorithm', type=click.Choice(ALGORITHMS), default='mv', show_default=True)
@click.option('--base', type=click.Choice(TruthDiscoveryModel.ALGORITHMS), default='ds', show_default=True,
              help='Consensus that fair-td-post re-thresholds')
@em_options
@fairness_options
@run_options
def aggregate_cmd(annotations, tasks_path, algorithm, base, max_iter, tol, smoothing, fairness, epsilon,
                  seed, threads, out):
    """Infer consensus labels and score them against the ground truth"""
    cfg, constraint = collect_config(
        lambda: em_config(max_iter, tol, smoothing, seed, threads),
        lambda: fairness_constraint(fairness, epsilon) if algorithm in FairTDModel.VARIANTS else None
    )
    bundle = load_dataset(annotations, tasks_path)

    banner('Aggregating labels', algorithm=algorithm, tasks=bundle.matrix.n_tasks, out=out)
    result, report = cmd_aggregate(bundle, algorithm, out, cfg, constraint, base)
    details = {'iterations': result.iterations, 'converged': result.converged}
    if report is not None and report.accuracy is not None:
        details['accuracy'] = f'{report.accuracy:.4f}'
    banner('Aggregation complete', **details)
