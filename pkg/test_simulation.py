"""
Tests for the synthetic dataset generator
"""

import numpy as np
import pytest

from conftest import unfair_config
from models.metrics_model import MetricsModel
from models.simulation_model import SimConfig, SimulationModel
from utils.errors import ConfigError


def _worker_reports(matrix, tasks):
    reports = []
    for worker in range(matrix.n_workers):
        task_index, labels = matrix.entries_for_worker(worker)
        reports.append(MetricsModel.fairness_report(labels, tasks.truth[task_index], tasks.groups[task_index]))
    return reports


def test_shapes_and_coverage():
    matrix, tasks = SimulationModel.generate(SimConfig(n_tasks=50, n_workers=6, labels_per_task=3, seed=1))
    assert matrix.n_tasks == 50
    assert matrix.n_entries == 150
    assert np.all(matrix.task_counts() == 3)
    assert tasks.task_ids == tuple(range(50))
    assert tasks.has_truth
    assert tasks.features is None
    assert set(tasks.group_names) <= {'A', 'B'}


def test_perfect_workers_copy_the_truth():
    matrix, tasks = SimulationModel.generate(SimConfig(n_tasks=100, sensitivity=1.0, specificity=1.0, seed=2))
    assert np.array_equal(matrix.labels, tasks.truth[matrix.tasks])


def test_coin_flip_workers_are_half_right():
    cfg = SimConfig(n_tasks=2000, n_workers=10, labels_per_task=5, sensitivity=0.5, specificity=0.5, seed=3)
    matrix, tasks = SimulationModel.generate(cfg)
    accuracy = float(np.mean(matrix.labels == tasks.truth[matrix.tasks]))
    sigma = np.sqrt(0.25 / matrix.n_entries)
    assert abs(accuracy - 0.5) <= 3 * sigma


def test_accurate_yet_unfair_population(unfair_dataset):
    matrix, tasks = unfair_dataset
    reports = _worker_reports(matrix, tasks)
    unfair = reports[5:]
    assert all(r.accuracy >= 0.75 for r in unfair)
    assert np.mean([r.dp_diff for r in unfair]) >= 0.2


def test_expected_accuracy():
    cfg = unfair_config()
    expected = SimulationModel.expected_accuracy(cfg)
    # 0.5 * 0.95 + 0.5 * (0.2 * 0.95 + 0.8 * 0.6)
    assert expected[0] == pytest.approx(0.95)
    assert expected[-1] == pytest.approx(0.81)


def test_same_seed_same_dataset():
    cfg = unfair_config(seed=11)
    first = SimulationModel.generate(cfg)
    second = SimulationModel.generate(cfg)
    assert first[0].equals(second[0])
    assert first[1].equals(second[1])
    other = SimulationModel.generate(unfair_config(seed=12))
    assert not first[0].equals(other[0])


def test_features_follow_label_and_group():
    cfg = SimConfig(n_tasks=2000, feature_dim=2, seed=4)
    _, tasks = SimulationModel.generate(cfg)
    assert tasks.features.shape == (2000, 2)
    label_gap = tasks.features[tasks.truth == 1, 0].mean() - tasks.features[tasks.truth == 0, 0].mean()
    group_gap = tasks.features[tasks.groups == 'B', 1].mean() - tasks.features[tasks.groups == 'A', 1].mean()
    assert label_gap == pytest.approx(1.0, abs=0.15)
    assert group_gap == pytest.approx(1.0, abs=0.15)


def test_block_assignment_uses_fixed_teams():
    cfg = SimConfig(n_tasks=200, n_workers=20, labels_per_task=5, assignment='block', block_size=50, seed=5)
    matrix, _ = SimulationModel.generate(cfg)
    assert np.all(matrix.task_counts() == 5)
    first, _ = matrix.answers_for_task(0)
    same_block, _ = matrix.answers_for_task(49)
    next_block, _ = matrix.answers_for_task(50)
    assert first.tolist() == same_block.tolist()
    assert set(first.tolist()).isdisjoint(next_block.tolist())


def test_more_labels_than_workers_is_rejected():
    with pytest.raises(ConfigError, match='exceeds n_workers'):
        SimConfig(n_workers=3, labels_per_task=4).validate()


def test_problems_are_collected():
    with pytest.raises(ConfigError) as info:
        SimConfig(n_tasks=0, group_proportions=(0.7, 0.7), base_rate=(0.5, 1.5)).validate()
    assert len(info.value.problems) == 3


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown simulation key 'n_task'"):
        SimConfig.from_dict({'n_task': 10})


def test_from_dict_reports_every_problem_at_once():
    with pytest.raises(ConfigError) as info:
        SimConfig.from_dict({'n_task': 10, 'labels_per_task': 20, 'workers': [{'sensitivity': 0.9}]})
    assert info.value.problems == [
        "unknown simulation key 'n_task'",
        'workers[0] needs a count',
        'labels_per_task (20) exceeds n_workers (10)'
    ]


def test_worker_profiles():
    cfg = unfair_config()
    spec = cfg.worker_array()
    assert spec.shape == (10, 2, 2)
    assert spec[0].tolist() == [[0.95, 0.95], [0.95, 0.95]]
    assert spec[9].tolist() == [[0.95, 0.95], [0.95, 0.6]]
    with pytest.raises(ConfigError, match='unknown group'):
        unfair_config(workers=[{'count': 10, 'by_group': {'C': {'sensitivity': 0.5}}}])


def test_scalar_base_rate_applies_to_every_group():
    cfg = SimConfig.from_dict({'base_rate': 0.3, 'group_names': ['x', 'y', 'z'],
                               'group_proportions': [0.2, 0.3, 0.5]})
    assert cfg.base_rate == (0.3, 0.3, 0.3)


def test_to_dict_is_plain():
    record = unfair_config().to_dict()
    assert record['base_rate'] == [0.2, 0.2]
    assert len(record['worker_spec']) == 10
