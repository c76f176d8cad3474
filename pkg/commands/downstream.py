import logging
import os

import click

from commands.common import banner, dataset_options, run_options
from models.downstream_model import DownstreamModel
from utils.dataset_io import load_dataset, load_labels
from utils.report_writer import write_report

logger = logging.getLogger(__name__)

CLASSIFIER = 'logistic_regression'


def cmd_downstream(bundle, labels_path, out, repeats=10, seed=0, threads=1, split_fraction=0.5, algorithm=None):
    """
    Delta protocol for one set of consensus labels; writes delta.json

    Returns:
        DeltaReport: Averaged deltas
    """
    tasks = bundle.tasks
    truth = tasks.require_truth('downstream')
    features = tasks.require_features('downstream')
    tasks.require_groups('downstream')
    td_labels = load_labels(labels_path, tasks.task_ids)

    report = DownstreamModel.delta_experiment(
        features, truth, td_labels, tasks.groups,
        repeats=repeats, seed=seed, split_fraction=split_fraction, threads=threads)
    write_report({
        'classifier': CLASSIFIER,
        'algorithm': algorithm,
        'labels': str(labels_path),
        'seed': seed,
        **report.to_dict()
    }, os.path.join(out, 'delta.json'))
    return report


@click.command('downstream')
@dataset_options
@click.option('--labels', 'labels_path', required=True, type=click.Path(dir_okay=False),
              help='labels.csv written by aggregate')
@click.option('--repeats', type=int, default=10, show_default=True)
@click.option('--split', 'split_fraction', type=float, default=0.5, show_default=True, help='Training fraction')
@run_options
def downstream_cmd(annotations, tasks_path, labels_path, repeats, split_fraction, seed, threads, out):
    """Train on truth vs consensus labels and report the deltas"""
    bundle = load_dataset(annotations, tasks_path)
    banner('Downstream delta', labels=labels_path, repeats=repeats, seed=seed, out=out)
    report = cmd_downstream(bundle, labels_path, out, repeats, seed, threads, split_fraction)
    banner('Downstream complete',
           delta_accuracy=report.delta_accuracy, delta_dp_diff=report.delta_dp_diff,
           delta_eo_diff=report.delta_eo_diff)
