"""
Tests for the per-worker audit, histograms, bucket table and unfair-worker sweeps
"""

import numpy as np
import pytest

from conftest import random_matrix
from models.annotation_model import AnnotationModel
from models.audit_model import AuditModel, default_grid
from models.metrics_model import REPORT_FIELDS, MetricsModel
from models.truth_discovery_model import TruthDiscoveryModel
from utils.errors import ConfigError, MissingTruthError

# Tasks 0-2 are group A, 3-5 group B
TRUTH = [1, 0, 1, 0, 1, 0]
GROUPS = ['A', 'A', 'A', 'B', 'B', 'B']
ANSWERS = {
    0: {t: TRUTH[t] for t in range(6)},               # always right
    1: {t: 1 for t in range(6)},                      # always positive
    2: {0: 1, 1: 1, 2: 1},                            # group A only
    3: {0: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1}           # flags exactly group B
}


def _hand_dataset(workers=(0, 1, 2, 3)):
    rows = [(task, worker, label) for worker in workers for task, label in ANSWERS[worker].items()]
    matrix = AnnotationModel.build_annotation_matrix(rows)
    tasks = AnnotationModel.build_task_table(range(6), GROUPS, TRUTH)
    return matrix, tasks


@pytest.fixture
def hand_audit():
    matrix, tasks = _hand_dataset()
    return matrix, tasks, AuditModel.audit_workers(matrix, tasks)


def test_default_grid():
    grid = default_grid()
    assert len(grid) == 11
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert grid[3] == 0.3


def test_worker_reports(hand_audit):
    _, _, reports = hand_audit
    assert [r.worker_id for r in reports] == [0, 1, 2, 3]
    assert [r.n_labeled for r in reports] == [6, 6, 3, 6]

    accurate, positive, one_group, biased = reports
    assert accurate.value('accuracy') == 1.0
    assert accurate.value('eo_diff') == 0.0
    assert accurate.value('dp_diff') == pytest.approx(1 / 3)
    assert positive.value('dp_diff') == 0.0
    assert positive.value('accuracy') == 0.5
    assert biased.value('dp_diff') == 1.0
    assert biased.value('accuracy') == pytest.approx(1 / 3)


def test_single_group_worker_is_not_computable(hand_audit):
    _, _, reports = hand_audit
    report = reports[2]
    assert not report.report.fairness_computable
    assert report.value('dp_diff') is None
    assert report.value('accuracy') == pytest.approx(2 / 3)
    row = report.to_row()
    assert row['fairness_computable'] is False
    assert row['dp_diff'] is None


def test_worker_report_is_restricted_to_labeled_tasks(hand_audit):
    _, _, reports = hand_audit
    direct = MetricsModel.fairness_report([0, 0, 0, 1, 1, 1], TRUTH, GROUPS)
    assert reports[3].report.to_dict() == direct.to_dict()


def test_audit_needs_truth():
    matrix, _ = _hand_dataset()
    tasks = AnnotationModel.build_task_table(range(6), GROUPS, [1, 0, None, 0, 1, 0])
    with pytest.raises(MissingTruthError):
        AuditModel.audit_workers(matrix, tasks)


def test_audit_thread_count_does_not_change_reports(unfair_dataset):
    matrix, tasks = unfair_dataset
    single = AuditModel.audit_workers(matrix, tasks, threads=1)
    pooled = AuditModel.audit_workers(matrix, tasks, threads=4)
    assert [r.to_row() for r in single] == [r.to_row() for r in pooled]


def test_planted_unfair_workers_stand_out(unfair_dataset):
    """Workers 5-9 over-flag group B while staying accurate"""
    matrix, tasks = unfair_dataset
    reports = AuditModel.audit_workers(matrix, tasks)
    fair = [r.value('dp_diff') for r in reports[:5]]
    unfair = [r.value('dp_diff') for r in reports[5:]]
    assert np.mean(unfair) > 0.2
    assert np.mean(fair) < 0.08
    assert min(r.value('accuracy') for r in reports[5:]) > 0.7


def test_histograms(hand_audit):
    _, _, reports = hand_audit
    histograms = AuditModel.histograms(reports, bins=2)
    assert set(histograms) == {'accuracy', 'fpr', 'dp_diff', 'eo_diff'}
    assert histograms['accuracy']['edges'] == [0.0, 0.5, 1.0]
    # 1/3 | 0.5, 2/3, 1.0 (the last bin is closed)
    assert histograms['accuracy']['counts'] == [1, 3]
    assert histograms['accuracy']['not_computable'] == 0
    assert sum(histograms['dp_diff']['counts']) == 3
    assert histograms['dp_diff']['not_computable'] == 1


def test_correlation(hand_audit):
    _, _, reports = hand_audit
    correlation = AuditModel.correlation(reports)
    assert correlation['dp_diff']['n'] == 3
    assert correlation['dp_diff']['rho'] == pytest.approx(-0.5)


def test_correlation_needs_three_points(hand_audit):
    _, _, reports = hand_audit
    correlation = AuditModel.correlation(reports[:2])
    assert correlation['dp_diff'] == {'rho': None, 'p_value': None, 'n': 2}


def test_bucket_table_single_worker_matches_its_report(hand_audit):
    matrix, tasks, reports = hand_audit
    rows = AuditModel.bucket_table(matrix, tasks, reports)
    assert len(rows) == 10
    top = rows[-1]
    assert top['bucket'] == '(0.9, 1]'
    assert top['n_workers'] == 1
    for name in REPORT_FIELDS:
        assert top[name] == reports[0].report.metric(name)


def test_bucket_table_empty_bucket_is_na(hand_audit):
    matrix, tasks, reports = hand_audit
    rows = AuditModel.bucket_table(matrix, tasks, reports)
    assert rows[0]['n_workers'] == 0
    assert rows[0]['n_labels'] == 0
    assert all(rows[0][name] is None for name in REPORT_FIELDS)


def test_bucket_table_pools_member_labels(hand_audit):
    """(0, 0.5] holds the biased and the always-positive worker, 0.5 sitting on the closed edge"""
    matrix, tasks, reports = hand_audit
    rows = AuditModel.bucket_table(matrix, tasks, reports, edges=[0.0, 0.5, 1.0])
    assert [row['n_workers'] for row in rows] == [2, 2]
    pooled = MetricsModel.fairness_report([0, 0, 0, 1, 1, 1] + [1] * 6, TRUTH * 2, GROUPS * 2)
    assert rows[0]['n_labels'] == 12
    for name in REPORT_FIELDS:
        assert rows[0][name] == pytest.approx(pooled.metric(name))


def test_bucket_edges_are_validated(hand_audit):
    matrix, tasks, reports = hand_audit
    with pytest.raises(ConfigError):
        AuditModel.bucket_table(matrix, tasks, reports, edges=[0.5, 0.2])


def test_domination_sweep_by_hand(hand_audit):
    matrix, _, reports = hand_audit
    rows = AuditModel.domination_sweep(matrix, reports, 'dp_diff', thresholds=[0.0, 0.3, 0.5, 1.0, 1.1])
    assert [row.dominated_fraction for row in rows] == [1.0, 0.5, 0.0, 0.0, 0.0]
    assert [row.unfair_workers for row in rows] == [3, 2, 1, 1, 0]
    assert all(row.not_computable_workers == 1 for row in rows)


def test_domination_sweep_matches_recount(rng):
    for _ in range(20):
        matrix = random_matrix(rng, 30, 8, 3)
        tasks = AnnotationModel.build_task_table(range(30), rng.choice(['A', 'B'], size=30),
                                                 rng.integers(0, 2, size=30).tolist())
        reports = AuditModel.audit_workers(matrix, tasks)
        rows = AuditModel.domination_sweep(matrix, reports, 'dp_diff')
        fractions = [row.dominated_fraction for row in rows]
        assert fractions == sorted(fractions, reverse=True)
        for row in rows:
            unfair = {r.worker_index for r in reports
                      if r.value('dp_diff') is not None and r.value('dp_diff') >= row.threshold}
            dominated = 0
            for task in range(matrix.n_tasks):
                workers, _ = matrix.answers_for_task(task)
                bad = sum(1 for w in workers if int(w) in unfair)
                dominated += bad > len(workers) - bad
            assert row.dominated_fraction == dominated / matrix.n_tasks


def test_removal_impact_by_hand(hand_audit):
    matrix, tasks, reports = hand_audit
    rows = AuditModel.removal_impact(matrix, tasks, reports, 'dp_diff', thresholds=[0.0, 0.5, 1.1])
    # only the single-group worker survives threshold 0
    assert rows[0].tasks_remaining == 3
    assert rows[0].acc_after_removal == pytest.approx(2 / 3)
    assert rows[1].tasks_remaining == 6
    assert rows[1].acc_after_removal == 0.5
    baseline = MetricsModel.accuracy(TruthDiscoveryModel.majority_vote(matrix).hard_label, tasks.truth)
    assert rows[2].tasks_remaining == 6
    assert rows[2].acc_after_removal == baseline


def test_removal_of_everyone_leaves_nothing():
    matrix, tasks = _hand_dataset(workers=(0, 1, 3))
    reports = AuditModel.audit_workers(matrix, tasks)
    row = AuditModel.removal_impact(matrix, tasks, reports, 'dp_diff', thresholds=[0.0])[0]
    assert row.tasks_remaining == 0
    assert row.acc_after_removal is None
    assert row.to_row()['acc_after_removal'] is None


def test_removal_keeps_more_tasks_as_threshold_grows(unfair_dataset):
    matrix, tasks = unfair_dataset
    reports = AuditModel.audit_workers(matrix, tasks)
    rows = AuditModel.removal_impact(matrix, tasks, reports, 'eo_diff')
    remaining = [row.tasks_remaining for row in rows]
    assert remaining == sorted(remaining)
    assert rows[-1].threshold == 1.0


def test_sweeps_follow_worker_index_not_report_order(hand_audit):
    matrix, tasks, reports = hand_audit
    shuffled = list(reversed(reports))
    thresholds = [0.0, 0.3, 0.5, 1.0]
    assert AuditModel.domination_sweep(matrix, shuffled, 'dp_diff', thresholds) == \
        AuditModel.domination_sweep(matrix, reports, 'dp_diff', thresholds)
    assert AuditModel.removal_impact(matrix, tasks, shuffled, 'dp_diff', thresholds) == \
        AuditModel.removal_impact(matrix, tasks, reports, 'dp_diff', thresholds)


def test_unknown_sweep_metric(hand_audit):
    matrix, _, reports = hand_audit
    with pytest.raises(ConfigError, match='sweep metric'):
        AuditModel.domination_sweep(matrix, reports, 'accuracy')

