import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from models.annotation_model import AnnotationModel
from models.metrics_model import REPORT_FIELDS, MetricsModel
from models.truth_discovery_model import TruthDiscoveryModel
from utils.errors import ConfigError
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

HISTOGRAM_METRICS = ('accuracy', 'fpr', 'dp_diff', 'eo_diff')
SWEEP_METRICS = ('dp_diff', 'eo_diff')


def default_grid(step=0.1):
    """0.0, 0.1, ..., 1.0 rounded to the nearest doubles of the decimal values"""
    count = int(round(1.0 / step))
    return [float(value) for value in np.round(np.linspace(0.0, 1.0, count + 1), 10)]


@dataclass(frozen=True)
class WorkerReport:
    worker_id: int
    worker_index: int
    n_labeled: int
    report: object

    def value(self, metric):
        return self.report.metric(metric)

    def to_row(self):
        row = {'worker_id': self.worker_id, 'n_labeled': self.n_labeled}
        for name in REPORT_FIELDS:
            row[name] = getattr(self.report, name)
        row['fairness_computable'] = self.report.fairness_computable
        return row


@dataclass(frozen=True)
class SweepRow:
    metric: str
    threshold: float
    dominated_fraction: Optional[float] = None
    acc_after_removal: Optional[float] = None
    tasks_remaining: Optional[int] = None
    unfair_workers: int = 0
    not_computable_workers: int = 0

    def to_row(self):
        return {
            'metric': self.metric,
            'threshold': self.threshold,
            'dominated_fraction': self.dominated_fraction,
            'acc_after_removal': self.acc_after_removal,
            'tasks_remaining': self.tasks_remaining,
            'unfair_workers': self.unfair_workers,
            'not_computable_workers': self.not_computable_workers
        }


def _check_metric(metric):
    if metric not in SWEEP_METRICS:
        raise ConfigError(f'sweep metric must be one of {SWEEP_METRICS}, got {metric!r}')


def _unfair_mask(reports, metric, threshold, n_workers):
    """Dense worker mask of metric >= threshold; not-computable or unreported workers count as fair"""
    mask = np.zeros(n_workers, dtype=bool)
    for report in reports:
        value = report.value(metric)
        if value is not None and value >= threshold:
            mask[report.worker_index] = True
    return mask


def _not_computable(reports, metric):
    return sum(1 for report in reports if report.value(metric) is None)


class AuditModel:
    """Per-worker accuracy/fairness audit and the unfair-worker sweeps"""

    # ==================== WORKER REPORTS ====================

    @staticmethod
    def audit_workers(matrix, tasks, min_support=1, threads=1):
        """
        Compute one FairnessReport per worker over the tasks that worker labeled

        Args:
            matrix: AnnotationMatrix
            tasks: TaskTable with complete ground truth
            min_support: Passed through to the metric computation
            threads: Parallel workers

        Returns:
            list: WorkerReport per worker, in dense worker order
        """
        AnnotationModel.align(matrix, tasks)
        truth = tasks.require_truth('audit_workers')

        def _audit(worker):
            task_index, labels = matrix.entries_for_worker(worker)
            report = MetricsModel.fairness_report(labels, truth[task_index], tasks.groups[task_index],
                                                  min_support=min_support)
            return WorkerReport(worker_id=matrix.worker_ids[worker], worker_index=worker,
                                n_labeled=int(labels.shape[0]), report=report)

        reports = parallel_map(_audit, range(matrix.n_workers), threads, desc='worker reports')
        logger.info('Audited %d workers (%d without computable fairness)', len(reports),
                    sum(1 for r in reports if not r.report.fairness_computable))
        return reports

    @staticmethod
    def histograms(reports, bins=10):
        """
        Bin counts over [0, 1] for accuracy, FPR, dp_diff and eo_diff

        Returns:
            dict: metric -> {'edges', 'counts', 'not_computable'}
        """
        edges = np.linspace(0.0, 1.0, bins + 1)
        result = {}
        for metric in HISTOGRAM_METRICS:
            values = [report.value(metric) for report in reports]
            present = np.array([v for v in values if v is not None], dtype=float)
            counts, _ = np.histogram(present, bins=edges)
            result[metric] = {
                'edges': [float(edge) for edge in edges],
                'counts': [int(count) for count in counts],
                'not_computable': len(values) - int(present.shape[0])
            }
        return result

    @staticmethod
    def correlation(reports):
        """
        Spearman rank correlation between worker accuracy and each fairness difference

        Returns:
            dict: metric -> {'rho', 'p_value', 'n'} (None values when undefined)
        """
        result = {}
        for metric in SWEEP_METRICS:
            pairs = [(r.value('accuracy'), r.value(metric)) for r in reports
                     if r.value('accuracy') is not None and r.value(metric) is not None]
            entry = {'rho': None, 'p_value': None, 'n': len(pairs)}
            if len(pairs) >= 3:
                accuracy, fairness = np.array(pairs, dtype=float).T
                if np.ptp(accuracy) > 0 and np.ptp(fairness) > 0:
                    rho, p_value = spearmanr(accuracy, fairness)
                    entry['rho'] = float(rho)
                    entry['p_value'] = float(p_value)
            result[metric] = entry
        return result

    # ==================== BUCKETS ====================

    @staticmethod
    def bucket_table(matrix, tasks, reports, edges=None, min_support=1):
        """
        Fairness of accuracy buckets of workers, pooled over all member labels

        Buckets are (lo, hi]; the first one also takes its lower edge.

        Returns:
            list: One row dict per bucket; metric cells are None (NA) for empty buckets
        """
        edges = np.round(np.asarray(edges if edges is not None else default_grid(), dtype=float), 10)
        if edges.ndim != 1 or edges.shape[0] < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigError('bucket edges must be an increasing list of at least two values')
        truth = tasks.require_truth('bucket_table')

        members = [[] for _ in range(edges.shape[0] - 1)]
        for report in reports:
            accuracy = report.value('accuracy')
            if accuracy is None or accuracy < edges[0] or accuracy > edges[-1]:
                continue
            bucket = max(int(np.searchsorted(edges, accuracy, side='left')) - 1, 0)
            members[bucket].append(report)

        rows = []
        for b, bucket_reports in enumerate(members):
            parts = []
            for report in bucket_reports:
                task_index, labels = matrix.entries_for_worker(report.worker_index)
                parts.append((labels, truth[task_index], tasks.groups[task_index]))
            pooled = MetricsModel.pooled_report(parts, min_support=min_support)
            row = {
                'bucket': f'({edges[b]:g}, {edges[b + 1]:g}]',
                'lo': float(edges[b]),
                'hi': float(edges[b + 1]),
                'n_workers': len(bucket_reports),
                'n_labels': int(sum(part[0].shape[0] for part in parts))
            }
            for name in REPORT_FIELDS:
                row[name] = None if pooled is None else getattr(pooled, name)
            rows.append(row)
        return rows

    # ==================== SWEEPS ====================

    @staticmethod
    def domination_sweep(matrix, reports, metric, thresholds=None, threads=1):
        """
        Fraction of tasks whose unfair labelers strictly outnumber the fair ones

        Returns:
            list: SweepRow per threshold
        """
        _check_metric(metric)
        thresholds = default_grid() if thresholds is None else list(thresholds)
        missing = _not_computable(reports, metric)
        total = matrix.task_counts()

        def _row(threshold):
            unfair = _unfair_mask(reports, metric, threshold, matrix.n_workers)
            unfair_votes = np.bincount(matrix.tasks, weights=unfair[matrix.workers].astype(float),
                                       minlength=matrix.n_tasks)
            dominated = unfair_votes > (total - unfair_votes)
            return SweepRow(metric=metric, threshold=float(threshold),
                            dominated_fraction=float(dominated.mean()),
                            unfair_workers=int(unfair.sum()), not_computable_workers=missing)

        return parallel_map(_row, thresholds, threads, desc=f'domination {metric}')

    @staticmethod
    def removal_impact(matrix, tasks, reports, metric, thresholds=None, threads=1):
        """
        Remove unfair workers, rerun majority voting, and score what remains

        Returns:
            list: SweepRow per threshold with acc_after_removal (None when nothing
            is left) and tasks_remaining
        """
        _check_metric(metric)
        AnnotationModel.align(matrix, tasks)
        truth = tasks.require_truth('removal_impact')
        thresholds = default_grid() if thresholds is None else list(thresholds)
        missing = _not_computable(reports, metric)
        position = {task_id: i for i, task_id in enumerate(tasks.task_ids)}

        def _row(threshold):
            unfair = _unfair_mask(reports, metric, threshold, matrix.n_workers)
            remaining = matrix.select_entries(~unfair[matrix.workers])
            if remaining is None:
                return SweepRow(metric=metric, threshold=float(threshold), acc_after_removal=None,
                                tasks_remaining=0, unfair_workers=int(unfair.sum()),
                                not_computable_workers=missing)
            consensus = TruthDiscoveryModel.majority_vote(remaining)
            kept_truth = truth[[position[task_id] for task_id in remaining.task_ids]]
            return SweepRow(metric=metric, threshold=float(threshold),
                            acc_after_removal=MetricsModel.accuracy(consensus.hard_label, kept_truth),
                            tasks_remaining=remaining.n_tasks, unfair_workers=int(unfair.sum()),
                            not_computable_workers=missing)

        return parallel_map(_row, thresholds, threads, desc=f'removal {metric}')
