"""
Tests for the shared data structures: annotation matrix, task table and TD results
"""

import numpy as np
import pytest

from models.annotation_model import MISSING, AnnotationModel, TDResult, hard_labels
from utils.errors import DataError, IngestionError, MissingTruthError


def test_build_annotation_matrix_counts(tiny_matrix):
    """Three rows over two tasks and two workers"""
    assert tiny_matrix.n_tasks == 2
    assert tiny_matrix.n_workers == 2
    assert tiny_matrix.n_entries == 3
    assert tiny_matrix.task_counts().tolist() == [2, 1]
    assert tiny_matrix.worker_counts().tolist() == [2, 1]
    assert tiny_matrix.positive_counts().tolist() == [1.0, 1.0]


def test_conflicting_duplicate_is_rejected():
    """Same (task, worker) pair with two different labels"""
    with pytest.raises(IngestionError, match='conflicting labels for task 0, worker 0'):
        AnnotationModel.build_annotation_matrix([(0, 0, 1), (0, 0, 0)])


def test_identical_duplicate_is_collapsed():
    matrix = AnnotationModel.build_annotation_matrix([(0, 0, 1), (0, 0, 1), (1, 0, 0)])
    assert matrix.n_entries == 2


@pytest.mark.parametrize('label', [2, -1, 'yes', 0.5])
def test_non_binary_label_is_rejected(label):
    with pytest.raises(IngestionError, match='label must be 0 or 1'):
        AnnotationModel.build_annotation_matrix([(0, 0, label)])


def test_empty_rows_are_rejected():
    with pytest.raises(IngestionError):
        AnnotationModel.build_annotation_matrix([])


def test_sparse_ids_are_reindexed_densely():
    """Original ids survive in task_ids / worker_ids, indexes are dense"""
    matrix = AnnotationModel.build_annotation_matrix([(40, 7, 1), (10, 3, 0), (40, 3, 1)])
    assert matrix.task_ids == (10, 40)
    assert matrix.worker_ids == (3, 7)
    assert matrix.tasks.tolist() == [0, 1, 1]
    assert matrix.workers.tolist() == [0, 0, 1]
    assert sorted(matrix.to_rows()) == sorted([(40, 7, 1), (10, 3, 0), (40, 3, 1)])


def test_row_order_does_not_matter(rng):
    rows = [(t, w, int((t + w) % 2)) for t in range(6) for w in range(4)]
    shuffled = [rows[i] for i in rng.permutation(len(rows))]
    first = AnnotationModel.build_annotation_matrix(rows)
    second = AnnotationModel.build_annotation_matrix(shuffled)
    assert first.equals(second)


def test_block_design_gives_twenty_labels_per_task():
    """1000 tasks, 20 workers per block of 50 tasks"""
    rows = []
    for task in range(1000):
        team = (task // 50) % 5
        for worker in range(team * 20, team * 20 + 20):
            rows.append((task, worker, task % 2))
    matrix = AnnotationModel.build_annotation_matrix(rows)
    assert matrix.n_tasks == 1000
    assert np.all(matrix.task_counts() == 20)


def test_task_universe_rejects_unknown_task():
    with pytest.raises(IngestionError, match='unknown task_id 5'):
        AnnotationModel.build_annotation_matrix([(5, 0, 1)], task_universe=[0, 1])


def test_task_universe_requires_every_task_labeled():
    with pytest.raises(IngestionError, match='tasks without any label'):
        AnnotationModel.build_annotation_matrix([(0, 0, 1)], task_universe=[0, 1])


def test_answers_for_task_and_worker(tiny_matrix):
    workers, labels = tiny_matrix.answers_for_task(0)
    assert workers.tolist() == [0, 1]
    assert labels.tolist() == [1, 0]
    tasks, labels = tiny_matrix.entries_for_worker(0)
    assert tasks.tolist() == [0, 1]
    assert labels.tolist() == [1, 1]


def test_select_entries_drops_empty_workers(tiny_matrix):
    kept = tiny_matrix.select_entries(tiny_matrix.workers == 0)
    assert kept.n_workers == 1
    assert kept.n_tasks == 2
    assert tiny_matrix.select_entries(np.zeros(3, dtype=bool)) is None


def test_matrix_is_read_only(tiny_matrix):
    with pytest.raises(ValueError):
        tiny_matrix.labels[0] = 0


def test_task_table_orders_by_id_and_keeps_missing_truth():
    table = AnnotationModel.build_task_table([2, 0, 1], ['B', 'A', 'A'], [1, None, 0])
    assert table.task_ids == (0, 1, 2)
    assert table.groups.tolist() == ['A', 'A', 'B']
    assert table.truth.tolist() == [MISSING, 0, 1]
    assert not table.has_truth
    with pytest.raises(MissingTruthError, match='1 tasks without truth'):
        table.require_truth('audit')


def test_task_table_checks():
    with pytest.raises(IngestionError, match='duplicate task_id'):
        AnnotationModel.build_task_table([0, 0], ['A', 'B'])
    with pytest.raises(IngestionError, match='features must be'):
        AnnotationModel.build_task_table([0, 1], ['A', 'B'], features=np.zeros((3, 2)))
    table = AnnotationModel.build_task_table([0, 1], ['A', 'A'], [0, 1])
    with pytest.raises(DataError, match='at least two sensitive groups'):
        table.require_groups('fair-td-post')
    with pytest.raises(DataError, match='requires task features'):
        table.require_features('downstream')


def test_align_checks_task_ids(tiny_matrix):
    AnnotationModel.align(tiny_matrix, AnnotationModel.build_task_table([0, 1], ['A', 'B']))
    with pytest.raises(DataError):
        AnnotationModel.align(tiny_matrix, AnnotationModel.build_task_table([0, 2], ['A', 'B']))


def test_tie_goes_to_positive_label():
    assert hard_labels([0.5, 0.4999, 0.9]).tolist() == [1, 0, 1]


def test_td_result_from_posterior_clips_and_thresholds():
    result = TDResult.from_posterior([1.2, 0.5, -0.1], 'mv')
    assert result.posterior.tolist() == [1.0, 0.5, 0.0]
    assert result.hard_label.tolist() == [1, 1, 0]
    assert result.summary()['positive_fraction'] == pytest.approx(2 / 3)
