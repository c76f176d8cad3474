import logging
import os

import click

from commands.common import banner, dataset_options, grid, run_options
from models.audit_model import SWEEP_METRICS, AuditModel, default_grid
from utils.dataset_io import load_dataset
from utils.report_writer import write_report

logger = logging.getLogger(__name__)


def cmd_audit(bundle, out, thresholds=None, bucket_edges=None, bins=10, threads=1):
    """
    Worker audit: per-worker reports, histograms, bucket table and both sweeps

    Returns:
        dict: Name -> written path
    """
    matrix, tasks = bundle.matrix, bundle.tasks
    thresholds = thresholds or default_grid()
    reports = AuditModel.audit_workers(matrix, tasks, threads=threads)

    paths = {
        'workers': write_report([report.to_row() for report in reports], os.path.join(out, 'workers.csv')),
        'histograms': write_report({
            'bins': bins,
            'n_workers': len(reports),
            'histograms': AuditModel.histograms(reports, bins),
            'correlation': AuditModel.correlation(reports),
            'not_computable_policy': 'counted as fair in sweeps'
        }, os.path.join(out, 'histograms.json')),
        'bucket_table': write_report(AuditModel.bucket_table(matrix, tasks, reports, bucket_edges),
                                     os.path.join(out, 'bucket_table.csv'))
    }

    domination, removal = [], []
    for metric in SWEEP_METRICS:
        domination += AuditModel.domination_sweep(matrix, reports, metric, thresholds, threads)
        removal += AuditModel.removal_impact(matrix, tasks, reports, metric, thresholds, threads)
    paths['sweep_domination'] = write_report(
        [row.to_row() for row in domination], os.path.join(out, 'sweep_domination.csv'))
    paths['sweep_removal'] = write_report(
        [row.to_row() for row in removal], os.path.join(out, 'sweep_removal.csv'))
    return paths


@click.command('audit')
@dataset_options
@click.option('--threshold-grid', default=None, help='Comma-separated fairness thresholds (default 0,0.1,...,1)')
@click.option('--bins', type=int, default=10, show_default=True, help='Histogram bins over [0, 1]')
@run_options
def audit_cmd(annotations, tasks_path, threshold_grid, bins, seed, threads, out):
    """Per-worker accuracy/fairness audit and unfair-worker sweeps"""
    thresholds = grid(threshold_grid, '--threshold-grid')
    bundle = load_dataset(annotations, tasks_path)
    banner('Auditing workers', workers=bundle.matrix.n_workers, tasks=bundle.matrix.n_tasks, out=out)
    paths = cmd_audit(bundle, out, thresholds=thresholds, bins=bins, threads=threads)
    banner('Audit complete', **paths)
