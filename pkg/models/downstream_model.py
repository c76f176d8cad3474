import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from models.metrics_model import MetricsModel
from utils.errors import ConfigError, DataError, TrainingError
from utils.parallel import parallel_map

logger = logging.getLogger(__name__)

# Logit of the constant classifiers used by ExpGrad (only the sign matters for predictions)
_CONSTANT_LOGIT = 10.0

# Clip for the group-conditional prediction means inside the PI regularizer
_PI_FLOOR = 1e-12

# Split attempts before delta_experiment gives up
_MAX_SPLIT_ATTEMPTS = 20


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-4
    max_steps: int = 2000
    grad_tol: float = 1e-6
    learning_rate: float = 0.1
    # step multiplier after an accepted step; 1.0 keeps the learning rate fixed
    growth: float = 1.2

    def validate(self):
        problems = []
        if not self.l2 >= 0:
            problems.append(f'l2 must be >= 0, got {self.l2!r}')
        if not isinstance(self.max_steps, int) or self.max_steps < 1:
            problems.append(f'max_steps must be an integer >= 1, got {self.max_steps!r}')
        if not self.grad_tol > 0:
            problems.append(f'grad_tol must be > 0, got {self.grad_tol!r}')
        if not self.learning_rate > 0:
            problems.append(f'learning_rate must be > 0, got {self.learning_rate!r}')
        if not self.growth >= 1.0:
            problems.append(f'growth must be >= 1, got {self.growth!r}')
        if problems:
            raise ConfigError(problems)
        return self


@dataclass(frozen=True)
class ExpGradConfig:
    max_rounds: int = 50
    # multiplier bound B; None means 1/epsilon (capped at max_bound)
    bound: float = None
    max_bound: float = 100.0
    eta: float = 2.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_steps=500))

    def validate(self):
        problems = []
        if not isinstance(self.max_rounds, int) or self.max_rounds < 1:
            problems.append(f'max_rounds must be an integer >= 1, got {self.max_rounds!r}')
        if self.bound is not None and not self.bound > 0:
            problems.append(f'bound must be > 0, got {self.bound!r}')
        if not self.eta > 0:
            problems.append(f'eta must be > 0, got {self.eta!r}')
        if problems:
            raise ConfigError(problems)
        self.train.validate()
        return self

    def bound_for(self, epsilon):
        if self.bound is not None:
            return float(self.bound)
        if epsilon <= 0:
            return self.max_bound
        return float(min(self.max_bound, 1.0 / epsilon))


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float

    def decision_function(self, features):
        return np.asarray(features, dtype=float) @ self.weights + self.bias

    def predict_proba(self, features):
        return expit(self.decision_function(features))

    def predict(self, features):
        return (self.predict_proba(features) >= 0.5).astype(np.int8)

    def to_dict(self):
        return {'weights': [float(w) for w in self.weights], 'bias': float(self.bias)}


@dataclass(frozen=True, eq=False)
class RandomizedClassifier:
    """Mixture of hard classifiers; each prediction draws a member by weight"""

    members: tuple
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        weights = np.array([weight for _, weight in self.members], dtype=float)
        if weights.size == 0 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise TrainingError(f'mixture weights must be >= 0 and sum to 1, got {weights.tolist()}')

    @property
    def weights(self):
        return np.array([weight for _, weight in self.members], dtype=float)

    def predict_expected(self, features):
        """Expected prediction P(h(x) = 1) under the mixture"""
        expected = np.zeros(np.asarray(features).shape[0])
        for model, weight in self.members:
            if weight > 0:
                expected += weight * model.predict(features)
        return expected

    def predict(self, features, seed=0):
        """One sampled hard labeling (member drawn independently per example)"""
        features = np.asarray(features, dtype=float)
        rng = np.random.default_rng(seed)
        choice = rng.choice(len(self.members), size=features.shape[0], p=self.weights)
        stacked = np.vstack([model.predict(features) for model, _ in self.members])
        return stacked[choice, np.arange(features.shape[0])].astype(np.int8)


@dataclass(frozen=True)
class DeltaReport:
    delta_accuracy: float
    delta_dp_diff: float
    delta_eo_diff: float
    repeats: int
    split_fraction: float
    truth_model: dict = field(default_factory=dict)
    td_model: dict = field(default_factory=dict)
    per_repeat: tuple = ()

    def to_dict(self):
        return {
            'delta_accuracy': self.delta_accuracy,
            'delta_dp_diff': self.delta_dp_diff,
            'delta_eo_diff': self.delta_eo_diff,
            'repeats': self.repeats,
            'split_fraction': self.split_fraction,
            'truth_model': dict(self.truth_model),
            'td_model': dict(self.td_model),
            'per_repeat': [dict(row) for row in self.per_repeat]
        }


def _check_training_set(features, labels, operation):
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DataError(f'{operation}: features must be (n, d) with one row per label')
    if not np.all(np.isfinite(features)):
        raise DataError(f'{operation}: features must be finite')
    if np.any((labels != 0) & (labels != 1)):
        raise DataError(f'{operation}: labels must be 0 or 1')
    if np.unique(labels).size < 2:
        raise TrainingError(f'{operation} needs at least one example of each class')
    return features, labels


def _group_codes(groups):
    names, codes = np.unique(np.asarray(groups, dtype=object).astype(str), return_inverse=True)
    return names, codes


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


class DownstreamModel:
    """Logistic regression, the delta protocol, and the two fair-ML baselines"""

    # ==================== OPTIMIZATION ====================

    @staticmethod
    def logistic_objective(theta, features, labels, sample_weight=None, l2=0.0):
        """
        Weighted mean log-loss plus (l2 / 2) * ||w||^2; the bias is not penalized

        Args:
            theta: Parameters [w..., b]
            features: (n, d) array
            labels: Targets in [0, 1] (soft targets allowed)
            sample_weight: Optional non-negative weights

        Returns:
            tuple: (loss, gradient)
        """
        logits = features @ theta[:-1] + theta[-1]
        if sample_weight is None:
            weight = np.full(labels.shape[0], 1.0 / labels.shape[0])
        else:
            weight = sample_weight / sample_weight.sum()
        loss = float(np.sum(weight * (labels * np.logaddexp(0.0, -logits)
                                      + (1.0 - labels) * np.logaddexp(0.0, logits))))
        loss += 0.5 * l2 * float(theta[:-1] @ theta[:-1])
        residual = weight * (expit(logits) - labels)
        gradient = np.append(features.T @ residual + l2 * theta[:-1], residual.sum())
        return loss, gradient

    @staticmethod
    def prejudice_index(theta, features, codes, n_groups):
        """
        Mutual information between the probabilistic prediction and the group

        Returns:
            tuple: (PI, gradient w.r.t. theta)
        """
        n = codes.shape[0]
        prob = expit(features @ theta[:-1] + theta[-1])
        support = np.bincount(codes, minlength=n_groups).astype(float)
        pos_group = np.clip(np.bincount(codes, weights=prob, minlength=n_groups) / support, _PI_FLOOR, 1 - _PI_FLOOR)
        pos_all = float(np.clip(prob.mean(), _PI_FLOOR, 1 - _PI_FLOOR))
        neg_group, neg_all = 1.0 - pos_group, 1.0 - pos_all

        index = float(np.sum(support / n * (pos_group * np.log(pos_group) + neg_group * np.log(neg_group)))
                      - (pos_all * np.log(pos_all) + neg_all * np.log(neg_all)))

        d_prob = (np.log(pos_group / pos_all) - np.log(neg_group / neg_all))[codes] / n
        d_logit = d_prob * prob * (1.0 - prob)
        return index, np.append(features.T @ d_logit, d_logit.sum())

    @staticmethod
    def minimize(objective, theta0, learning_rate=0.1, max_steps=2000, grad_tol=1e-6, growth=1.0):
        """
        Batch gradient descent that only accepts improving steps

        A rejected step halves the learning rate; an accepted one multiplies it
        by `growth`. The loss therefore never increases.

        Returns:
            tuple: (theta, info dict with loss, grad_norm, steps, converged)
        """
        theta = np.array(theta0, dtype=float)
        loss, gradient = objective(theta)
        step = learning_rate
        converged = False
        steps = 0
        for steps in range(1, max_steps + 1):
            grad_norm = float(np.linalg.norm(gradient))
            if grad_norm < grad_tol:
                converged = True
                break
            candidate = theta - step * gradient
            candidate_loss, candidate_gradient = objective(candidate)
            if np.isfinite(candidate_loss) and candidate_loss < loss:
                theta, loss, gradient = candidate, candidate_loss, candidate_gradient
                step *= growth
            else:
                step *= 0.5
                if step < 1e-14:
                    converged = grad_norm < grad_tol
                    break
        return theta, {
            'loss': float(loss),
            'grad_norm': float(np.linalg.norm(gradient)),
            'steps': steps,
            'converged': converged
        }

    # ==================== LOGISTIC REGRESSION ====================

    @staticmethod
    def train_logistic(features, labels, cfg=None, sample_weight=None):
        """
        Fit an L2-regularized logistic regression by batch gradient descent

        Args:
            features: (n, d) array
            labels: 0/1 per row
            cfg: TrainConfig
            sample_weight: Optional non-negative per-row weights

        Returns:
            LogisticModel: Fitted model
        """
        cfg = (cfg or TrainConfig()).validate()
        features, labels = _check_training_set(features, labels, 'train_logistic')
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            if np.any(sample_weight < 0) or not sample_weight.sum() > 0:
                raise TrainingError('sample weights must be non-negative with a positive sum')

        theta, info = DownstreamModel.minimize(
            lambda params: DownstreamModel.logistic_objective(params, features, labels, sample_weight, cfg.l2),
            np.zeros(features.shape[1] + 1),
            learning_rate=cfg.learning_rate,
            max_steps=cfg.max_steps,
            grad_tol=cfg.grad_tol,
            growth=cfg.growth
        )
        if not np.all(np.isfinite(theta)):
            raise TrainingError('logistic regression diverged to non-finite parameters')
        logger.debug('train_logistic: %d steps, loss %.6f, converged=%s', info['steps'], info['loss'], info['converged'])
        return LogisticModel(weights=theta[:-1], bias=float(theta[-1]))

    # ==================== DELTA PROTOCOL ====================

    @staticmethod
    def draw_split(rng, groups, n_train, *label_sets):
        """Random train/test split with every group in the test half and both classes of every label set in the train half"""
        n = groups.shape[0]
        all_groups = set(groups.tolist())
        for _ in range(_MAX_SPLIT_ATTEMPTS):
            order = rng.permutation(n)
            train, test = np.sort(order[:n_train]), np.sort(order[n_train:])
            if set(groups[test].tolist()) != all_groups:
                continue
            if any(np.unique(labels[train]).size < 2 for labels in label_sets):
                continue
            return train, test
        raise DataError(f'no usable train/test split after {_MAX_SPLIT_ATTEMPTS} attempts '
                        '(every group must appear in the test half, both classes in the train half)')

    @staticmethod
    def delta_experiment(features, truth, td_labels, groups, repeats=10, seed=0,
                         split_fraction=0.5, cfg=None, threads=1):
        """
        Train on ground truth and on TD labels, evaluate both on the same held-out truth

        Every delta is (model on truth) - (model on TD labels); accuracy in
        percentage points. Repeat r uses seed + r.

        Returns:
            DeltaReport: Deltas averaged over repeats
        """
        cfg = (cfg or TrainConfig()).validate()
        features = np.asarray(features, dtype=float)
        truth = np.asarray(truth).astype(np.int64)
        td_labels = np.asarray(td_labels).astype(np.int64)
        groups = np.asarray(groups, dtype=object).astype(str)
        n = truth.shape[0]
        if not (features.shape[0] == td_labels.shape[0] == groups.shape[0] == n):
            raise DataError('delta_experiment inputs are not aligned per task')
        if repeats < 1:
            raise ConfigError(f'repeats must be >= 1, got {repeats}')
        if not 0.0 < split_fraction < 1.0:
            raise ConfigError(f'split_fraction must be in (0, 1), got {split_fraction}')
        n_train = int(round(n * split_fraction))
        if n_train < 2 or n - n_train < 2:
            raise DataError(f'{n} tasks are too few for a {split_fraction} split')

        def _one_repeat(repeat):
            rng = np.random.default_rng(seed + repeat)
            train, test = DownstreamModel.draw_split(rng, groups, n_train, truth, td_labels)
            on_truth = DownstreamModel.train_logistic(features[train], truth[train], cfg)
            on_td = DownstreamModel.train_logistic(features[train], td_labels[train], cfg)
            report_g = MetricsModel.fairness_report(on_truth.predict(features[test]), truth[test], groups[test])
            report_td = MetricsModel.fairness_report(on_td.predict(features[test]), truth[test], groups[test])
            row = {'repeat': repeat, 'seed': seed + repeat}
            for name, report in (('truth', report_g), ('td', report_td)):
                row[f'{name}_accuracy'] = report.accuracy
                row[f'{name}_dp_diff'] = report.dp_diff
                row[f'{name}_eo_diff'] = report.eo_diff
            row['delta_accuracy'] = 100.0 * (report_g.accuracy - report_td.accuracy)
            row['delta_dp_diff'] = (report_g.dp_diff - report_td.dp_diff
                                    if report_g.dp_diff is not None and report_td.dp_diff is not None else None)
            row['delta_eo_diff'] = (report_g.eo_diff - report_td.eo_diff
                                    if report_g.eo_diff is not None and report_td.eo_diff is not None else None)
            return row

        rows = parallel_map(_one_repeat, range(repeats), threads, desc='delta repeats')
        logger.info('delta_experiment: %d repeats, split %.2f', repeats, split_fraction)
        return DeltaReport(
            delta_accuracy=_mean_or_none([row['delta_accuracy'] for row in rows]),
            delta_dp_diff=_mean_or_none([row['delta_dp_diff'] for row in rows]),
            delta_eo_diff=_mean_or_none([row['delta_eo_diff'] for row in rows]),
            repeats=repeats,
            split_fraction=split_fraction,
            truth_model={key: _mean_or_none([row[f'truth_{key}'] for row in rows])
                         for key in ('accuracy', 'dp_diff', 'eo_diff')},
            td_model={key: _mean_or_none([row[f'td_{key}'] for row in rows])
                      for key in ('accuracy', 'dp_diff', 'eo_diff')},
            per_repeat=tuple(rows)
        )

    # ==================== EXPONENTIATED GRADIENT ====================

    @staticmethod
    def _constant_model(dim, positive):
        return LogisticModel(weights=np.zeros(dim), bias=_CONSTANT_LOGIT if positive else -_CONSTANT_LOGIT)

    @staticmethod
    def _pair_gaps(predictions, codes, support, pairs):
        rates = np.bincount(codes, weights=predictions, minlength=support.shape[0]) / support
        return np.array([rates[a] - rates[b] for a, b in pairs])

    @staticmethod
    def _best_response(features, labels, codes, support, pairs, multipliers, cfg):
        """Cost-sensitive reweighted logistic fit against the current multipliers"""
        n = labels.shape[0]
        # per-group coefficient of predicting 1 in the Lagrangian
        group_cost = np.zeros(support.shape[0])
        for (a, b), lam in zip(pairs, multipliers):
            group_cost[a] += lam / support[a]
            group_cost[b] -= lam / support[b]
        cost_one = (1.0 - labels) / n + group_cost[codes]
        cost_zero = labels / n
        target = (cost_zero > cost_one).astype(float)
        weight = np.abs(cost_zero - cost_one)

        dim = features.shape[1]
        if not weight.sum() > 0:
            return DownstreamModel._constant_model(dim, positive=False)
        active = weight > 0
        if np.unique(target[active]).size < 2:
            return DownstreamModel._constant_model(dim, positive=bool(target[active][0] == 1))
        theta, _ = DownstreamModel.minimize(
            lambda params: DownstreamModel.logistic_objective(params, features, target, weight, cfg.l2),
            np.zeros(dim + 1),
            learning_rate=cfg.learning_rate,
            max_steps=cfg.max_steps,
            grad_tol=cfg.grad_tol,
            growth=cfg.growth
        )
        return LogisticModel(weights=theta[:-1], bias=float(theta[-1]))

    @staticmethod
    def exponentiated_gradient(features, labels, groups, epsilon, cfg=None):
        """
        Exponentiated-gradient reduction for demographic parity

        Runs the Lagrangian game (multiplicative weights on one multiplier per
        ordered group pair, cost-sensitive logistic best responses), then picks
        the error-minimizing mixture of the collected hypotheses and the two
        constant classifiers whose expected training dp_diff is within epsilon.

        Args:
            features: (n, d) array
            labels: 0/1 per row
            groups: Sensitive group per row (>= 2 distinct values)
            epsilon: Allowed dp_diff of the mixture
            cfg: ExpGradConfig

        Returns:
            RandomizedClassifier: Mixture with weights summing to 1
        """
        cfg = (cfg or ExpGradConfig()).validate()
        features, labels = _check_training_set(features, labels, 'exponentiated_gradient')
        names, codes = _group_codes(groups)
        if names.size < 2:
            raise DataError('exponentiated_gradient requires at least two sensitive groups')
        if epsilon < 0:
            raise ConfigError(f'epsilon must be >= 0, got {epsilon}')
        if epsilon >= 1:
            model = DownstreamModel.train_logistic(features, labels, cfg.train)
            return RandomizedClassifier(members=((model, 1.0),), diagnostics={'rounds': 0, 'constraint': 'inactive'})

        support = np.bincount(codes).astype(float)
        pairs = [(a, b) for a in range(names.size) for b in range(names.size) if a != b]
        bound = cfg.bound_for(epsilon)
        theta = np.zeros(len(pairs))
        hypotheses = []
        previous = None
        stalled = False
        for round_index in range(1, cfg.max_rounds + 1):
            # lambda = B * exp(theta) / (1 + sum(exp(theta))), shifted to avoid overflow
            shift = max(0.0, float(theta.max()))
            exp_theta = np.exp(theta - shift)
            multipliers = bound * exp_theta / (np.exp(-shift) + exp_theta.sum())
            model = DownstreamModel._best_response(features, labels, codes, support, pairs, multipliers, cfg.train)
            predictions = model.predict(features).astype(float)
            hypotheses.append(model)
            violation = DownstreamModel._pair_gaps(predictions, codes, support, pairs) - epsilon
            theta = theta + cfg.eta * violation
            logger.debug('expgrad round %d: max violation %.4f', round_index, float(violation.max()))
            if previous is not None and np.array_equal(previous, predictions):
                stalled = True
                break
            previous = predictions

        dim = features.shape[1]
        candidates = hypotheses + [DownstreamModel._constant_model(dim, False), DownstreamModel._constant_model(dim, True)]
        prediction_matrix = np.vstack([model.predict(features).astype(float) for model in candidates])
        errors = np.abs(prediction_matrix - labels).mean(axis=1)
        gaps = np.vstack([DownstreamModel._pair_gaps(row, codes, support, pairs) for row in prediction_matrix])

        diagnostics = {'rounds': len(hypotheses), 'bound': bound, 'stalled': stalled}
        solution = linprog(
            errors,
            A_ub=gaps.T,
            b_ub=np.full(len(pairs), epsilon),
            A_eq=np.ones((1, len(candidates))),
            b_eq=[1.0],
            bounds=[(0.0, None)] * len(candidates),
            method='highs'
        )
        if solution.status == 0:
            weights = np.clip(solution.x, 0.0, None)
            weights = weights / weights.sum()
            diagnostics['solver'] = 'linprog'
        else:
            # best feasible single iterate; the constant classifiers are always feasible
            feasible = np.flatnonzero(np.max(gaps, axis=1) <= epsilon)
            best = int(feasible[np.argmin(errors[feasible])])
            weights = np.zeros(len(candidates))
            weights[best] = 1.0
            diagnostics['solver'] = f'fallback: {solution.message}'
            logger.warning('exponentiated_gradient: mixture LP failed (%s), returning best feasible iterate',
                           solution.message)

        members = tuple((model, float(weight)) for model, weight in zip(candidates, weights) if weight > 0)
        total = sum(weight for _, weight in members)
        members = tuple((model, weight / total) for model, weight in members)
        diagnostics['training_dp_diff'] = float(np.max(weights @ gaps)) if len(pairs) else 0.0
        return RandomizedClassifier(members=members, diagnostics=diagnostics)

    # ==================== PREJUDICE REMOVER ====================

    @staticmethod
    def prejudice_remover(features, labels, groups, eta, cfg=None):
        """
        Logistic regression with an eta-weighted prejudice-index regularizer

        At eta = 0 the optimization is exactly train_logistic's.

        Returns:
            LogisticModel: Fitted model
        """
        cfg = (cfg or TrainConfig()).validate()
        if eta < 0:
            raise ConfigError(f'eta must be >= 0, got {eta}')
        if eta == 0:
            return DownstreamModel.train_logistic(features, labels, cfg)

        features, labels = _check_training_set(features, labels, 'prejudice_remover')
        names, codes = _group_codes(groups)
        if codes.shape[0] != labels.shape[0]:
            raise DataError('prejudice_remover: groups are not aligned with labels')

        def _objective(params):
            loss, gradient = DownstreamModel.logistic_objective(params, features, labels, None, cfg.l2)
            index, index_gradient = DownstreamModel.prejudice_index(params, features, codes, names.size)
            return loss + eta * index, gradient + eta * index_gradient

        theta, info = DownstreamModel.minimize(
            _objective,
            np.zeros(features.shape[1] + 1),
            learning_rate=cfg.learning_rate,
            max_steps=cfg.max_steps,
            grad_tol=cfg.grad_tol,
            growth=cfg.growth
        )
        if not np.all(np.isfinite(theta)):
            raise TrainingError('prejudice_remover diverged to non-finite parameters')
        logger.debug('prejudice_remover eta=%s: %d steps, objective %.6f', eta, info['steps'], info['loss'])
        return LogisticModel(weights=theta[:-1], bias=float(theta[-1]))
