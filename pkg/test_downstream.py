"""
Tests for logistic regression, the delta protocol, ExpGrad and Prejudice Remover
"""

import numpy as np
import pytest

from models.downstream_model import (DownstreamModel, ExpGradConfig, LogisticModel, RandomizedClassifier,
                                     TrainConfig)
from models.metrics_model import MetricsModel
from utils.errors import ConfigError, DataError, TrainingError


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def _numeric_gradient(fn, theta, h=1e-5):
    gradient = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        step = np.zeros_like(theta)
        step[i] = h
        gradient[i] = (fn(theta + step) - fn(theta - step)) / (2 * h)
    return gradient


def _group_correlated(rng, n=800):
    """Base rate 0.3 in group 0 and 0.7 in group 1; one feature follows the label, one the group"""
    group = rng.integers(0, 2, size=n)
    labels = (rng.random(n) < np.where(group == 1, 0.7, 0.3)).astype(int)
    features = np.column_stack([labels + rng.normal(size=n), group + 0.5 * rng.normal(size=n)])
    return features, labels, np.where(group == 1, 'B', 'A')


def test_logistic_gradient_matches_finite_differences(rng):
    for _ in range(50):
        n, d = int(rng.integers(5, 40)), int(rng.integers(1, 6))
        features = rng.normal(size=(n, d))
        labels = rng.integers(0, 2, size=n).astype(float)
        weight = rng.random(n) + 0.1
        l2 = float(rng.choice([0.0, 1e-4, 0.5]))
        theta = rng.normal(size=d + 1)

        _, analytic = DownstreamModel.logistic_objective(theta, features, labels, weight, l2)
        numeric = _numeric_gradient(
            lambda t: DownstreamModel.logistic_objective(t, features, labels, weight, l2)[0], theta)
        assert _relative_error(analytic, numeric) < 1e-4


def test_prejudice_index_gradient_matches_finite_differences(rng):
    for _ in range(50):
        n, d = int(rng.integers(6, 40)), int(rng.integers(1, 5))
        features = rng.normal(size=(n, d))
        codes = np.concatenate([[0, 1], rng.integers(0, 2, size=n - 2)])
        theta = rng.normal(size=d + 1)

        _, analytic = DownstreamModel.prejudice_index(theta, features, codes, 2)
        numeric = _numeric_gradient(lambda t: DownstreamModel.prejudice_index(t, features, codes, 2)[0], theta)
        assert _relative_error(analytic, numeric) < 1e-4


def test_prejudice_index_is_zero_for_group_blind_predictions():
    features = np.array([[1.0], [2.0], [1.0], [2.0]])
    codes = np.array([0, 0, 1, 1])
    index, _ = DownstreamModel.prejudice_index(np.array([0.7, -0.3]), features, codes, 2)
    assert index == pytest.approx(0.0, abs=1e-12)


def test_minimize_never_increases_loss():
    calls = []

    def objective(theta):
        loss = float(np.sum((theta - 3.0) ** 2))
        calls.append(loss)
        return loss, 2.0 * (theta - 3.0)

    theta, info = DownstreamModel.minimize(objective, np.zeros(2), learning_rate=5.0, max_steps=500, growth=1.2)
    np.testing.assert_allclose(theta, [3.0, 3.0], atol=1e-6)
    assert info['converged']
    assert info['loss'] <= calls[0]


def test_train_logistic_separates_two_points():
    model = DownstreamModel.train_logistic(np.array([[-1.0], [1.0]]), np.array([0, 1]))
    assert model.predict(np.array([[-1.0], [1.0]])).tolist() == [0, 1]


def test_train_logistic_zero_features_predicts_majority():
    model = DownstreamModel.train_logistic(np.zeros((5, 2)), np.array([1, 1, 1, 0, 0]))
    assert model.weights.tolist() == [0.0, 0.0]
    assert model.bias > 0
    assert model.predict(np.zeros((3, 2))).tolist() == [1, 1, 1]


def test_train_logistic_rejects_single_class():
    with pytest.raises(TrainingError):
        DownstreamModel.train_logistic(np.ones((4, 1)), np.zeros(4))


def test_train_logistic_is_deterministic(rng):
    features, labels, _ = _group_correlated(rng, 200)
    first = DownstreamModel.train_logistic(features, labels, TrainConfig())
    second = DownstreamModel.train_logistic(features, labels, TrainConfig())
    assert np.array_equal(first.weights, second.weights)
    assert first.bias == second.bias


def test_train_config_validation():
    with pytest.raises(ConfigError) as info:
        TrainConfig(l2=-1.0, max_steps=0).validate()
    assert len(info.value.problems) == 2


def test_delta_is_exactly_zero_when_consensus_equals_truth(rng):
    features, labels, groups = _group_correlated(rng, 300)
    report = DownstreamModel.delta_experiment(features, labels, labels, groups, repeats=3, seed=1)
    assert report.delta_accuracy == 0.0
    assert report.delta_dp_diff == 0.0
    assert report.delta_eo_diff == 0.0
    assert report.repeats == 3
    assert [row['seed'] for row in report.per_repeat] == [1, 2, 3]


def test_delta_detects_group_targeted_flips():
    rng = np.random.default_rng(2024)
    n = 4000
    is_b = rng.random(n) < 0.5
    truth = (rng.random(n) < np.where(is_b, 0.3, 0.7)).astype(int)
    features = np.column_stack([truth + rng.normal(size=n), is_b.astype(float)])
    groups = np.where(is_b, 'B', 'A')

    # 20% of group-B negatives turned positive
    td_labels = truth.copy()
    candidates = np.flatnonzero(is_b & (truth == 0))
    flipped = rng.choice(candidates, size=int(0.2 * candidates.size), replace=False)
    td_labels[flipped] = 1

    report = DownstreamModel.delta_experiment(features, truth, td_labels, groups, repeats=10, seed=0)
    assert report.delta_accuracy > 0
    assert report.delta_dp_diff > 0


def test_delta_thread_count_does_not_change_results(rng):
    features, labels, groups = _group_correlated(rng, 300)
    noisy = labels.copy()
    noisy[:30] = 1 - noisy[:30]
    single = DownstreamModel.delta_experiment(features, labels, noisy, groups, repeats=4, threads=1)
    pooled = DownstreamModel.delta_experiment(features, labels, noisy, groups, repeats=4, threads=3)
    assert single.to_dict() == pooled.to_dict()


def test_impossible_split_is_reported():
    groups = np.array(['A', 'A', 'A', 'B'])
    labels = np.array([0, 0, 0, 1])
    with pytest.raises(DataError, match='no usable train/test split'):
        DownstreamModel.draw_split(np.random.default_rng(0), groups, 2, labels)


def test_expgrad_inactive_constraint_is_plain_logistic(rng):
    features, labels, groups = _group_correlated(rng, 300)
    cfg = ExpGradConfig()
    mixture = DownstreamModel.exponentiated_gradient(features, labels, groups, 1.0, cfg)
    plain = DownstreamModel.train_logistic(features, labels, cfg.train)
    assert len(mixture.members) == 1
    model, weight = mixture.members[0]
    assert weight == 1.0
    assert np.array_equal(model.weights, plain.weights)


def test_expgrad_meets_training_constraint(rng):
    features, labels, groups = _group_correlated(rng)
    unconstrained = DownstreamModel.train_logistic(features, labels)
    before = MetricsModel.fairness_report(unconstrained.predict(features), labels, groups).dp_diff

    mixture = DownstreamModel.exponentiated_gradient(features, labels, groups, 0.05)
    expected = mixture.predict_expected(features)
    after = MetricsModel.fairness_report(expected, labels, groups).dp_diff
    assert before > 0.1
    assert after <= 0.07
    assert mixture.weights.sum() == pytest.approx(1.0)
    assert mixture.diagnostics['training_dp_diff'] <= 0.05 + 1e-6


def test_mixture_expectation_is_weighted_member_average(rng):
    features = rng.normal(size=(20, 2))
    members = (
        (LogisticModel(weights=np.array([1.0, 0.0]), bias=0.0), 0.25),
        (LogisticModel(weights=np.array([0.0, 1.0]), bias=0.5), 0.75)
    )
    mixture = RandomizedClassifier(members=members)
    brute = 0.25 * members[0][0].predict(features) + 0.75 * members[1][0].predict(features)
    np.testing.assert_allclose(mixture.predict_expected(features), brute)
    sampled = mixture.predict(features, seed=9)
    assert np.array_equal(sampled, mixture.predict(features, seed=9))
    assert set(sampled.tolist()) <= {0, 1}


def test_mixture_weights_must_sum_to_one():
    model = LogisticModel(weights=np.zeros(1), bias=0.0)
    with pytest.raises(TrainingError):
        RandomizedClassifier(members=((model, 0.4), (model, 0.4)))


def test_prejudice_remover_without_regularizer_is_logistic(rng):
    features, labels, groups = _group_correlated(rng, 300)
    plain = DownstreamModel.train_logistic(features, labels)
    remover = DownstreamModel.prejudice_remover(features, labels, groups, 0.0)
    np.testing.assert_allclose(remover.weights, plain.weights, atol=1e-8)
    assert remover.bias == pytest.approx(plain.bias, abs=1e-8)


def test_prejudice_remover_reduces_parity_gap(rng):
    features, labels, groups = _group_correlated(rng)
    gap = {}
    for eta in (0.0, 10.0):
        model = DownstreamModel.prejudice_remover(features, labels, groups, eta)
        gap[eta] = MetricsModel.fairness_report(model.predict(features), labels, groups).dp_diff
    assert gap[10.0] <= gap[0.0]


def test_prejudice_remover_rejects_negative_eta(rng):
    features, labels, groups = _group_correlated(rng, 50)
    with pytest.raises(ConfigError):
        DownstreamModel.prejudice_remover(features, labels, groups, -1.0)
