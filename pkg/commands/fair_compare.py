import logging
import math
import os

import click
import numpy as np

from commands.common import banner, collect_config, dataset_options, em_config, em_options, grid, run_options
from models.downstream_model import DownstreamModel, ExpGradConfig, TrainConfig
from models.fair_td_model import FAIRNESS_KINDS, FairnessConstraint, FairTDModel
from models.metrics_model import MetricsModel
from models.truth_discovery_model import TruthDiscoveryModel
from utils.dataset_io import load_dataset
from utils.errors import ConfigError, TrainingError
from utils.parallel import parallel_map
from utils.report_writer import write_report

logger = logging.getLogger(__name__)

DEFAULT_EPS_GRID = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
DEFAULT_ETA_GRID = [0.0, 1.0, 5.0, 10.0, 25.0, 50.0, 100.0]
FRONTIER_COLUMNS = ('method', 'base_algorithm', 'constraint_value', 'split',
                    'accuracy', 'dp_diff', 'eo_diff', 'dp_ratio', 'eo_ratio')


def _row(method, base, value, split, report):
    row = {'method': method, 'base_algorithm': base, 'constraint_value': value, 'split': split}
    for name in FRONTIER_COLUMNS[4:]:
        row[name] = getattr(report, name)
    return row


def _score(predict, features, truth, groups, train, test):
    return {
        'train': MetricsModel.fairness_report(predict(features[train]), truth[train], groups[train]),
        'test': MetricsModel.fairness_report(predict(features[test]), truth[test], groups[test])
    }


def cmd_fair_compare(bundle, out, fairness='dp', eps_grid=None, eta_grid=None, base_algorithms=('mv', 'ds'),
                     cfg=None, seed=0, threads=1, split_fraction=0.5):
    """
    Accuracy-fairness frontier of fair truth discovery and the fair-ML baselines

    FairTD variants are scored on their labels (split 'labels') and through a
    logistic model trained on them; ExpGrad and Prejudice Remover are trained on
    each base consensus. All classifier rows use one seeded train/test split.

    Returns:
        list: Frontier rows (also written to frontier.csv)
    """
    eps_grid = DEFAULT_EPS_GRID if eps_grid is None else list(eps_grid)
    eta_grid = DEFAULT_ETA_GRID if eta_grid is None else list(eta_grid)
    problems = [f'epsilon must be >= 0, got {value}' for value in eps_grid if not value >= 0]
    problems += [f'eta must be >= 0, got {value}' for value in eta_grid if not value >= 0]
    if fairness not in FAIRNESS_KINDS:
        problems.append(f'fairness must be one of {FAIRNESS_KINDS}, got {fairness!r}')
    if problems:
        raise ConfigError(problems)
    matrix, tasks = bundle.matrix, bundle.tasks
    truth = tasks.require_truth('fair_compare').astype(np.int64)
    groups = np.asarray(tasks.require_groups('fair_compare')).astype(str)
    features = tasks.features
    if features is None:
        logger.warning('fair_compare: no task features, only the FairTD label rows are produced')

    bases = {name: TruthDiscoveryModel.run(name, matrix, features, cfg) for name in base_algorithms}
    train = test = None
    if features is not None:
        rng = np.random.default_rng(seed)
        n_train = int(round(truth.shape[0] * split_fraction))
        train, test = DownstreamModel.draw_split(
            rng, groups, n_train, truth, *[result.hard_label for result in bases.values()])

    train_cfg = TrainConfig()
    expgrad_cfg = ExpGradConfig()

    def _fair_td_point(epsilon):
        constraint = FairnessConstraint(kind=fairness, epsilon=epsilon)
        pseudo = truth if fairness == 'eo' else None
        results = [('fair-td-pre', 'mv', FairTDModel.fair_td_pre(matrix, groups, constraint, cfg)),
                   ('fair-td-in', 'ds', FairTDModel.fair_td_in(matrix, groups, constraint, cfg, pseudo))]
        for base_name, base_result in bases.items():
            results.append(('fair-td-post', base_name,
                            FairTDModel.fair_td_post(base_result, groups, constraint, pseudo)))
        rows = []
        for method, base_name, result in results:
            rows.append(_row(method, base_name, epsilon, 'labels',
                             MetricsModel.fairness_report(result.hard_label, truth, groups)))
            if features is None:
                continue
            try:
                model = DownstreamModel.train_logistic(features[train], result.hard_label[train], train_cfg)
            except TrainingError as e:
                logger.warning('fair_compare: %s at epsilon %s gives untrainable labels (%s)', method, epsilon, e)
                continue
            for split, report in _score(model.predict, features, truth, groups, train, test).items():
                rows.append(_row(method, base_name, epsilon, split, report))
        return rows

    def _expgrad_point(job):
        base_name, epsilon = job
        labels = bases[base_name].hard_label
        mixture = DownstreamModel.exponentiated_gradient(
            features[train], labels[train], groups[train], epsilon, expgrad_cfg)
        return [_row('expgrad', base_name, epsilon, split, report)
                for split, report in _score(mixture.predict_expected, features, truth, groups, train, test).items()]

    def _prejudice_point(job):
        base_name, eta = job
        labels = bases[base_name].hard_label
        model = DownstreamModel.prejudice_remover(features[train], labels[train], groups[train], eta, train_cfg)
        value = math.inf if eta == 0 else 1.0 / eta
        return [_row('prejudice_remover', base_name, value, split, report)
                for split, report in _score(model.predict, features, truth, groups, train, test).items()]

    rows = []
    for chunk in parallel_map(_fair_td_point, eps_grid, threads, desc='fair-td frontier'):
        rows += chunk
    if features is not None:
        jobs = [(base_name, epsilon) for base_name in bases for epsilon in eps_grid]
        for chunk in parallel_map(_expgrad_point, jobs, threads, desc='expgrad frontier'):
            rows += chunk
        jobs = [(base_name, eta) for base_name in bases for eta in eta_grid]
        for chunk in parallel_map(_prejudice_point, jobs, threads, desc='prejudice remover frontier'):
            rows += chunk

    write_report(rows, os.path.join(out, 'frontier.csv'))
    return rows


@click.command('fair-compare')
@dataset_options
@click.option('--eps-grid', default=None, help='Comma-separated epsilon values for FairTD and ExpGrad')
@click.option('--eta-grid', default=None, help='Comma-separated eta values for Prejudice Remover')
@click.option('--base', 'base_algorithms', default='mv,ds', show_default=True,
              help='Comma-separated base consensus algorithms')
@click.option('--fairness', type=click.Choice(FAIRNESS_KINDS), default='dp', show_default=True,
              help='Constraint of the FairTD variants (ExpGrad is DP only)')
@em_options
@run_options
def fair_compare_cmd(annotations, tasks_path, eps_grid, eta_grid, base_algorithms, fairness, max_iter, tol,
                     smoothing, seed, threads, out):
    """Sweep fairness budgets and write frontier.csv"""
    cfg, eps_values, eta_values = collect_config(
        lambda: em_config(max_iter, tol, smoothing, seed, threads),
        lambda: grid(eps_grid, '--eps-grid', DEFAULT_EPS_GRID),
        lambda: grid(eta_grid, '--eta-grid', DEFAULT_ETA_GRID)
    )
    bases = tuple(name.strip() for name in base_algorithms.split(',') if name.strip())
    bundle = load_dataset(annotations, tasks_path)

    banner('Fairness frontier', fairness=fairness, eps_grid=eps_values, eta_grid=eta_values, out=out)
    rows = cmd_fair_compare(bundle, out, fairness, eps_values, eta_values, bases, cfg, seed, threads)
    banner('Frontier complete', rows=len(rows))
