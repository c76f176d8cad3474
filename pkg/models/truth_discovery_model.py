import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from models.annotation_model import TDResult
from models.downstream_model import DownstreamModel, LogisticModel
from utils.errors import ConfigError, DataError
from utils.parallel import chunked_task_sums

logger = logging.getLogger(__name__)

# Floor for log() of estimated probabilities when smoothing is 0
_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 100
    tol: float = 1e-6
    smoothing: float = 0.01
    seed: int = 0
    threads: int = 1
    # logistic prior sub-fit of feature-mode LFC
    inner_steps: int = 200
    inner_learning_rate: float = 0.1
    inner_grad_tol: float = 1e-6

    def validate(self):
        problems = []
        if not isinstance(self.max_iter, int) or self.max_iter < 1:
            problems.append(f'max_iter must be an integer >= 1, got {self.max_iter!r}')
        if not self.tol > 0:
            problems.append(f'tol must be > 0, got {self.tol!r}')
        if not self.smoothing >= 0:
            problems.append(f'smoothing must be >= 0, got {self.smoothing!r}')
        if not isinstance(self.threads, int) or self.threads < 1:
            problems.append(f'threads must be an integer >= 1, got {self.threads!r}')
        if self.inner_steps < 1 or not self.inner_learning_rate > 0:
            problems.append('inner_steps must be >= 1 and inner_learning_rate > 0')
        if problems:
            raise ConfigError(problems)
        return self


@dataclass(frozen=True)
class ConfusionMatrix:
    """pi[a][b] = P(worker reports b | true label a)"""

    worker_id: int
    pi: np.ndarray

    def accuracy(self, prior):
        return float(prior * self.pi[1, 1] + (1.0 - prior) * self.pi[0, 0])


@dataclass(frozen=True)
class TwoCoinParams:
    worker_id: int
    sensitivity: float
    specificity: float
    prevalence: float

    def accuracy(self):
        return float(self.prevalence * self.sensitivity + (1.0 - self.prevalence) * self.specificity)


def _safe_log(values):
    return np.log(np.maximum(values, _LOG_FLOOR))


def _normalize(numerator, denominator):
    # rows with no weight at all (only possible at smoothing 0) fall back to a fair coin
    safe = np.where(denominator > 0, denominator, 1.0)
    return np.where(denominator > 0, numerator / safe, 0.5)


def _e_step(log_prior, class_terms):
    """Posterior P(y=1) per task and the observed-data log-likelihood"""
    joint = class_terms + log_prior
    log_evidence = logsumexp(joint, axis=1)
    posterior = np.exp(joint[:, 1] - log_evidence)
    return posterior, float(log_evidence.sum())


def _check_matrix(matrix, name):
    if matrix.n_workers < 1 or matrix.n_entries < 1:
        raise DataError(f'{name} needs at least one worker label')
    if np.any(matrix.task_counts() == 0):
        raise DataError(f'{name} needs at least one label per task')


class TruthDiscoveryModel:
    """Majority Voting, Dawid-Skene and Learning-from-Crowds aggregation"""

    ALGORITHMS = ('mv', 'ds', 'lfc')

    # ==================== MAJORITY VOTING ====================

    @staticmethod
    def initial_posteriors(matrix):
        """Soft majority vote: the fraction of positive answers per task"""
        return matrix.positive_counts() / matrix.task_counts()

    @staticmethod
    def majority_vote(matrix):
        """
        Aggregate by majority vote

        Args:
            matrix: AnnotationMatrix

        Returns:
            TDResult: posterior = positive-vote fraction, ties resolved to 1
        """
        _check_matrix(matrix, 'majority_vote')
        posterior = TruthDiscoveryModel.initial_posteriors(matrix)
        return TDResult.from_posterior(posterior, 'mv', iterations=0, converged=True)

    # ==================== DAWID-SKENE ====================

    @staticmethod
    def ds_m_step(matrix, posterior, smoothing):
        """
        Re-estimate confusion matrices and the class prior from task posteriors

        Returns:
            tuple: (pi of shape (m, 2, 2), prior P(y=1))
        """
        weight_pos = posterior[matrix.tasks]
        weight_neg = 1.0 - weight_pos
        labels = matrix.labels.astype(float)
        m = matrix.n_workers

        counts = np.empty((m, 2, 2))
        counts[:, 0, 0] = np.bincount(matrix.workers, weights=weight_neg * (1.0 - labels), minlength=m)
        counts[:, 0, 1] = np.bincount(matrix.workers, weights=weight_neg * labels, minlength=m)
        counts[:, 1, 0] = np.bincount(matrix.workers, weights=weight_pos * (1.0 - labels), minlength=m)
        counts[:, 1, 1] = np.bincount(matrix.workers, weights=weight_pos * labels, minlength=m)

        numerator = counts + smoothing
        pi = _normalize(numerator, numerator.sum(axis=2, keepdims=True))
        prior = (posterior.sum() + smoothing) / (matrix.n_tasks + 2.0 * smoothing)
        return pi, float(prior)

    @staticmethod
    def ds_class_terms(matrix, log_pi, threads=1):
        """Per-task sums of log P(answer | y=a) for a in {0, 1}"""
        labels = matrix.labels.astype(np.int64)
        given_neg = log_pi[matrix.workers, 0, labels]
        given_pos = log_pi[matrix.workers, 1, labels]
        return np.column_stack([
            chunked_task_sums(matrix.tasks, given_neg, matrix.n_tasks, threads),
            chunked_task_sums(matrix.tasks, given_pos, matrix.n_tasks, threads)
        ])

    @staticmethod
    def dawid_skene(matrix, cfg=None):
        """
        Dawid-Skene EM over per-worker 2x2 confusion matrices

        Initialized from soft majority votes; each iteration runs an M-step
        (smoothed confusion matrices and class prior) then an E-step (task
        posteriors). The recorded objective is the observed-data log-likelihood
        plus the smoothing log-prior, which EM never decreases.

        Args:
            matrix: AnnotationMatrix
            cfg: EMConfig

        Returns:
            tuple: (TDResult, list of ConfusionMatrix, class prior P(y=1))
        """
        cfg = (cfg or EMConfig()).validate()
        _check_matrix(matrix, 'dawid_skene')
        s = cfg.smoothing

        posterior = TruthDiscoveryModel.initial_posteriors(matrix)
        trace = []
        converged = False
        iteration = 0
        pi, prior = None, None
        for iteration in range(1, cfg.max_iter + 1):
            pi, prior = TruthDiscoveryModel.ds_m_step(matrix, posterior, s)
            log_pi = _safe_log(pi)
            log_prior = _safe_log(np.array([1.0 - prior, prior]))
            terms = TruthDiscoveryModel.ds_class_terms(matrix, log_pi, cfg.threads)
            updated, loglik = _e_step(log_prior, terms)

            objective = loglik + s * (log_pi.sum() + log_prior.sum())
            trace.append(objective)
            change = float(np.max(np.abs(updated - posterior)))
            posterior = updated
            logger.debug('ds iter %d objective %.6f max change %.3e', iteration, objective, change)
            if change < cfg.tol:
                converged = True
                break

        if not converged:
            logger.warning('dawid_skene did not converge in %d iterations', cfg.max_iter)
        logger.info('dawid_skene finished after %d iterations (objective %.4f)', iteration, trace[-1])

        result = TDResult.from_posterior(
            posterior, 'ds',
            iterations=iteration,
            final_loglik=trace[-1],
            converged=converged,
            loglik_trace=tuple(trace),
            diagnostics={'seed': cfg.seed, 'prior': prior}
        )
        confusions = [ConfusionMatrix(worker_id=matrix.worker_ids[j], pi=pi[j].copy())
                      for j in range(matrix.n_workers)]
        return result, confusions, prior

    # ==================== LEARNING FROM CROWDS ====================

    @staticmethod
    def lfc_m_step(matrix, posterior, smoothing):
        """Two-coin re-estimation: (sensitivity, specificity) per worker"""
        weight_pos = posterior[matrix.tasks]
        weight_neg = 1.0 - weight_pos
        labels = matrix.labels.astype(float)
        m = matrix.n_workers

        said_pos_when_pos = np.bincount(matrix.workers, weights=weight_pos * labels, minlength=m)
        said_neg_when_neg = np.bincount(matrix.workers, weights=weight_neg * (1.0 - labels), minlength=m)
        total_pos = np.bincount(matrix.workers, weights=weight_pos, minlength=m)
        total_neg = np.bincount(matrix.workers, weights=weight_neg, minlength=m)

        sensitivity = _normalize(said_pos_when_pos + smoothing, total_pos + 2.0 * smoothing)
        specificity = _normalize(said_neg_when_neg + smoothing, total_neg + 2.0 * smoothing)
        return sensitivity, specificity

    @staticmethod
    def lfc_class_terms(matrix, sensitivity, specificity, threads=1):
        """Per-task log P(answers | y=0) and log P(answers | y=1) under the two coins"""
        labels = matrix.labels.astype(float)
        alpha = sensitivity[matrix.workers]
        beta = specificity[matrix.workers]
        given_pos = labels * _safe_log(alpha) + (1.0 - labels) * _safe_log(1.0 - alpha)
        given_neg = (1.0 - labels) * _safe_log(beta) + labels * _safe_log(1.0 - beta)
        return np.column_stack([
            chunked_task_sums(matrix.tasks, given_neg, matrix.n_tasks, threads),
            chunked_task_sums(matrix.tasks, given_pos, matrix.n_tasks, threads)
        ])

    @staticmethod
    def _coin_log_prior(sensitivity, specificity, smoothing):
        return smoothing * float(
            _safe_log(sensitivity).sum() + _safe_log(1.0 - sensitivity).sum()
            + _safe_log(specificity).sum() + _safe_log(1.0 - specificity).sum())

    @staticmethod
    def learning_from_crowds(matrix, features=None, cfg=None):
        """
        Two-coin Learning-from-Crowds EM

        Feature-free mode estimates one class prevalence. With task features the
        prevalence becomes a logistic model over the features, refit at every
        M-step by gradient ascent started from the previous weights.

        Args:
            matrix: AnnotationMatrix
            features: Optional (n_tasks, d) array
            cfg: EMConfig

        Returns:
            tuple: (TDResult, list of TwoCoinParams, LogisticModel or None)
        """
        cfg = (cfg or EMConfig()).validate()
        _check_matrix(matrix, 'learning_from_crowds')
        s = cfg.smoothing

        if features is not None:
            features = np.asarray(features, dtype=float)
            if features.ndim != 2 or features.shape[0] != matrix.n_tasks:
                raise DataError(f'features must have one row per task ({matrix.n_tasks})')
            if not np.all(np.isfinite(features)):
                raise DataError('features must be finite')

        posterior = TruthDiscoveryModel.initial_posteriors(matrix)
        theta = None if features is None else np.zeros(features.shape[1] + 1)
        trace = []
        diagnostics = {'seed': cfg.seed, 'mode': 'features' if features is not None else 'feature-free'}
        converged = False
        iteration = 0
        sensitivity = specificity = None
        prevalence = float(posterior.mean())
        for iteration in range(1, cfg.max_iter + 1):
            sensitivity, specificity = TruthDiscoveryModel.lfc_m_step(matrix, posterior, s)

            if features is None:
                prevalence = (posterior.sum() + s) / (matrix.n_tasks + 2.0 * s)
                log_prior = _safe_log(np.array([1.0 - prevalence, prevalence]))
                prior_penalty = s * float(log_prior.sum())
            else:
                theta, fit = DownstreamModel.minimize(
                    lambda params: DownstreamModel.logistic_objective(params, features, posterior),
                    theta,
                    learning_rate=cfg.inner_learning_rate,
                    max_steps=cfg.inner_steps,
                    grad_tol=cfg.inner_grad_tol
                )
                if not (np.all(np.isfinite(theta)) and np.isfinite(fit['loss'])):
                    diagnostics['feature_fit'] = f'degenerate logistic prior at iteration {iteration}'
                    logger.warning('learning_from_crowds: %s', diagnostics['feature_fit'])
                    break
                logits = features @ theta[:-1] + theta[-1]
                log_prior = np.column_stack([-np.logaddexp(0.0, logits), -np.logaddexp(0.0, -logits)])
                prevalence = float(expit(logits).mean())
                prior_penalty = 0.0

            terms = TruthDiscoveryModel.lfc_class_terms(matrix, sensitivity, specificity, cfg.threads)
            updated, loglik = _e_step(log_prior, terms)
            objective = loglik + prior_penalty + TruthDiscoveryModel._coin_log_prior(sensitivity, specificity, s)
            trace.append(objective)

            change = float(np.max(np.abs(updated - posterior)))
            posterior = updated
            logger.debug('lfc iter %d objective %.6f max change %.3e', iteration, objective, change)
            if change < cfg.tol:
                converged = True
                break

        if not converged:
            logger.warning('learning_from_crowds did not converge in %d iterations', iteration)
        if not trace:
            trace.append(float('nan'))

        result = TDResult.from_posterior(
            posterior, 'lfc',
            iterations=iteration,
            final_loglik=trace[-1],
            converged=converged,
            loglik_trace=tuple(trace),
            diagnostics=diagnostics
        )
        coins = [TwoCoinParams(worker_id=matrix.worker_ids[j], sensitivity=float(sensitivity[j]),
                               specificity=float(specificity[j]), prevalence=float(prevalence))
                 for j in range(matrix.n_workers)]
        classifier = None
        if features is not None and theta is not None and np.all(np.isfinite(theta)):
            classifier = LogisticModel(weights=theta[:-1].copy(), bias=float(theta[-1]))
        return result, coins, classifier

    # ==================== DISPATCH ====================

    @staticmethod
    def run(name, matrix, features=None, cfg=None):
        """Run a classical algorithm by name and return only its TDResult"""
        if name == 'mv':
            return TruthDiscoveryModel.majority_vote(matrix)
        if name == 'ds':
            return TruthDiscoveryModel.dawid_skene(matrix, cfg)[0]
        if name == 'lfc':
            return TruthDiscoveryModel.learning_from_crowds(matrix, features, cfg)[0]
        raise ConfigError(f'unknown truth-discovery algorithm {name!r} (expected one of {TruthDiscoveryModel.ALGORITHMS})')
