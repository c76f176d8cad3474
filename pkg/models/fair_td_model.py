import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from models.annotation_model import DECISION_THRESHOLD, TDResult
from models.metrics_model import MetricsModel
from models.truth_discovery_model import EMConfig, TruthDiscoveryModel, _e_step, _safe_log
from utils.errors import ConfigError, DataError, MissingTruthError
from utils.parallel import chunked_task_sums, parallel_map

logger = logging.getLogger(__name__)

FAIRNESS_KINDS = ('dp', 'eo')

# Largest double below the decision threshold
_BELOW_THRESHOLD = float(np.nextafter(DECISION_THRESHOLD, 0.0))
# Slack when comparing positive rates against a window
_RATE_SLACK = 1e-12


@dataclass(frozen=True)
class FairnessConstraint:
    kind: str = 'dp'
    epsilon: float = 0.05

    def validate(self):
        problems = []
        if self.kind not in FAIRNESS_KINDS:
            problems.append(f'fairness must be one of {FAIRNESS_KINDS}, got {self.kind!r}')
        if self.epsilon is None or not self.epsilon >= 0:
            problems.append(f'epsilon must be >= 0, got {self.epsilon!r}')
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def active(self):
        return self.epsilon < 1

    @property
    def worker_budget(self):
        """Unfairness scale of the worker weights: epsilon / (1 - epsilon), unbounded at epsilon >= 1"""
        if not self.active:
            return math.inf
        return self.epsilon / (1.0 - self.epsilon)

    def violation(self, report):
        value = report.dp_diff if self.kind == 'dp' else report.eo_diff
        return 0.0 if value is None else float(value)


def _group_codes(groups, n):
    groups = np.asarray(groups, dtype=object).astype(str)
    if groups.shape[0] != n:
        raise DataError(f'{groups.shape[0]} groups for {n} tasks')
    names, codes = np.unique(groups, return_inverse=True)
    return groups, names, codes


def _inactive(posterior, variant, source=None, **kwargs):
    diagnostics = {'method': f'fair-td surrogate ({variant})', 'constraint': 'inactive'}
    if source is not None:
        diagnostics['base_algorithm'] = source
    return TDResult.from_posterior(posterior, f'fair-td-{variant}', diagnostics=diagnostics, **kwargs)


def _candidate_table(posterior, truth=None):
    """
    Every distinct labeling of one group reachable by a threshold (positive iff posterior >= t)

    Thresholds are the group's distinct posteriors plus +inf; `current` indexes the
    threshold that reproduces the 0.5 decision rule.
    """
    order = np.argsort(posterior, kind='stable')
    ascending = posterior[order]
    size = ascending.shape[0]
    thresholds = np.append(np.unique(ascending), np.inf)
    below = np.searchsorted(ascending, thresholds, side='left')
    half = np.searchsorted(ascending, DECISION_THRESHOLD, side='left')
    distance = np.concatenate([[0.0], np.cumsum(np.abs(ascending - DECISION_THRESHOLD))])
    lo, hi = np.minimum(below, half), np.maximum(below, half)

    table = {
        'thresholds': thresholds,
        'positives': size - below,
        'rate': (size - below) / size,
        'flips': hi - lo,
        'moved': distance[hi] - distance[lo],
        'current': int(np.flatnonzero(below == half)[0])
    }
    if truth is not None:
        labels = truth[order].astype(float)
        cumulative = np.concatenate([[0.0], np.cumsum(labels)])
        n_pos = labels.sum()
        n_neg = size - n_pos
        true_pos = n_pos - cumulative[below]
        false_pos = (size - below) - true_pos
        table['tpr'] = true_pos / n_pos if n_pos else np.full(thresholds.shape, np.nan)
        table['fpr'] = false_pos / n_neg if n_neg else np.full(thresholds.shape, np.nan)
    return table


def _cost(tables, choice, scale):
    """Lexicographic (flips, moved) packed in one float; moved / scale < 1 always"""
    return float(sum(table['flips'][j] + table['moved'][j] / scale for table, j in zip(tables, choice)))


def _search_dp(tables, epsilon, scale):
    """Cheapest per-group thresholds whose positive rates fit one window of width epsilon"""
    best_cost, best_choice = math.inf, None
    lows = np.unique(np.concatenate([table['rate'] for table in tables]))
    for low in lows:
        choice = []
        for table in tables:
            inside = (table['rate'] >= low - _RATE_SLACK) & (table['rate'] <= low + epsilon + _RATE_SLACK)
            if not inside.any():
                break
            key = np.where(inside, table['flips'] + table['moved'] / scale, np.inf)
            choice.append(int(np.argmin(key)))
        else:
            cost = _cost(tables, choice, scale)
            if cost < best_cost - _RATE_SLACK:
                best_cost, best_choice = cost, choice
    return best_choice


def _eo_gap(tables, choice):
    gaps = []
    for component in ('tpr', 'fpr'):
        values = [table[component][j] for table, j in zip(tables, choice)]
        values = [v for v in values if np.isfinite(v)]
        if len(values) >= 2:
            gaps.append(max(values) - min(values))
    return max(gaps) if gaps else 0.0


def _search_eo(tables, epsilon, scale):
    """Greedy descent over single-group threshold moves; stops at the first labeling within budget"""
    choice = [table['current'] for table in tables]
    excess = max(_eo_gap(tables, choice) - epsilon, 0.0)
    while excess > 0:
        best_key, best_choice = None, None
        for g, table in enumerate(tables):
            for j in range(table['thresholds'].shape[0]):
                if j == choice[g]:
                    continue
                trial = list(choice)
                trial[g] = j
                key = (max(_eo_gap(tables, trial) - epsilon, 0.0), _cost(tables, trial, scale))
                if best_key is None or key < best_key:
                    best_key, best_choice = key, trial
        if best_key is None or best_key[0] >= excess - _RATE_SLACK:
            break
        choice, excess = best_choice, best_key[0]
    return choice


def _log_odds(p):
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.log(p) - np.log1p(-p)


class FairTDModel:
    """Fairness-aware truth discovery (pre-, in- and post-processing surrogates)"""

    VARIANTS = ('fair-td-pre', 'fair-td-in', 'fair-td-post')

    # ==================== POST-PROCESSING CORE ====================

    @staticmethod
    def select_thresholds(posterior, groups, constraint, truth=None):
        """
        Choose per-group decision thresholds satisfying the constraint at minimal flip cost

        DP is an exact search over windows of candidate positive rates; EO needs
        ground truth and uses a greedy search.

        Returns:
            tuple: (cutoff per group, +inf meaning all negative; info dict)
        """
        posterior = np.asarray(posterior, dtype=float)
        _, names, codes = _group_codes(groups, posterior.shape[0])
        if constraint.kind == 'dp':
            truth = None
        else:
            if truth is None:
                raise MissingTruthError('equalized-odds fair truth discovery')
            truth = np.asarray(truth)
            if np.any(truth < 0):
                raise MissingTruthError('equalized-odds fair truth discovery', int(np.sum(truth < 0)))

        tables = []
        for g in range(names.size):
            members = codes == g
            tables.append(_candidate_table(posterior[members], None if truth is None else truth[members]))

        scale = posterior.shape[0] + 1.0
        if constraint.kind == 'dp':
            choice = _search_dp(tables, constraint.epsilon, scale)
        else:
            choice = _search_eo(tables, constraint.epsilon, scale)

        cutoffs = {str(name): float(table['thresholds'][j]) for name, table, j in zip(names, tables, choice)}
        info = {
            'thresholds': {name: value if math.isfinite(value) else None for name, value in cutoffs.items()},
            'flips': int(sum(table['flips'][j] for table, j in zip(tables, choice)))
        }
        return cutoffs, info

    @staticmethod
    def project(posterior, groups, cutoffs):
        """
        Relabel each group as positive iff posterior >= its cutoff

        Posteriors of a relabeled group are shifted by one additive logit offset that
        moves the cutoff to 0.5, then pinned to the side of 0.5 their label demands.
        Groups whose labeling does not change are untouched.
        """
        posterior = np.asarray(posterior, dtype=float)
        groups, names, codes = _group_codes(groups, posterior.shape[0])
        projected = posterior.copy()
        offsets = {}
        for g, name in enumerate(names):
            members = codes == g
            values = posterior[members]
            labels = values >= cutoffs[str(name)]
            if np.array_equal(labels, values >= DECISION_THRESHOLD):
                offsets[str(name)] = 0.0
                continue
            offset = -float(_log_odds(cutoffs[str(name)]))
            if math.isfinite(offset):
                shifted = expit(_log_odds(values) + offset)
            else:
                shifted, offset = values, None
            projected[members] = np.where(labels, np.maximum(shifted, DECISION_THRESHOLD),
                                          np.minimum(shifted, _BELOW_THRESHOLD))
            offsets[str(name)] = offset
        return projected, offsets

    # ==================== PRE-PROCESSING ====================

    @staticmethod
    def worker_unfairness(matrix, groups, constraint, consensus, threads=1):
        """
        Unsupervised unfairness of every worker, scored against the consensus labels

        Returns:
            tuple: (unfairness array (0 where not computable), count of not-computable workers)
        """
        def _score(worker):
            tasks, labels = matrix.entries_for_worker(worker)
            pseudo_truth = None if constraint.kind == 'dp' else consensus[tasks]
            report = MetricsModel.fairness_report(labels, pseudo_truth, groups[tasks])
            value = report.dp_diff if constraint.kind == 'dp' else report.eo_diff
            return value

        values = parallel_map(_score, range(matrix.n_workers), threads)
        missing = sum(1 for value in values if value is None)
        return np.array([0.0 if value is None else value for value in values]), missing

    @staticmethod
    def worker_weights(unfairness, constraint):
        """weight = max(0, 1 - unfairness / epsilon_w); perfectly fair workers always keep 1"""
        budget = constraint.worker_budget
        if math.isinf(budget):
            return np.ones_like(unfairness)
        if budget == 0:
            return np.where(unfairness > 0, 0.0, 1.0)
        return np.where(unfairness > 0, np.maximum(0.0, 1.0 - unfairness / budget), 1.0)

    @staticmethod
    def fair_td_pre(matrix, groups, constraint, cfg=None):
        """
        Weighted majority vote with workers down-weighted by their estimated unfairness

        Args:
            matrix: AnnotationMatrix
            groups: Sensitive group per task
            constraint: FairnessConstraint
            cfg: EMConfig (threads)

        Returns:
            TDResult: algorithm 'fair-td-pre'
        """
        constraint.validate()
        cfg = (cfg or EMConfig()).validate()
        groups, _, _ = _group_codes(groups, matrix.n_tasks)
        baseline = TruthDiscoveryModel.majority_vote(matrix)
        if not constraint.active:
            return _inactive(baseline.posterior, 'pre', 'mv')

        unfairness, not_computable = FairTDModel.worker_unfairness(
            matrix, groups, constraint, baseline.hard_label, cfg.threads)
        weights = FairTDModel.worker_weights(unfairness, constraint)

        entry_weight = weights[matrix.workers]
        positive = chunked_task_sums(matrix.tasks, entry_weight * matrix.labels, matrix.n_tasks, cfg.threads)
        total = chunked_task_sums(matrix.tasks, entry_weight, matrix.n_tasks, cfg.threads)
        fallback = total <= 0
        posterior = np.where(fallback, baseline.posterior, positive / np.where(fallback, 1.0, total))
        if fallback.any():
            logger.warning('fair_td_pre: %d tasks lost every vote, using plain majority vote there',
                           int(fallback.sum()))

        return TDResult.from_posterior(posterior, 'fair-td-pre', diagnostics={
            'method': 'fair-td surrogate (pre)',
            'constraint': constraint.kind,
            'epsilon': constraint.epsilon,
            'worker_budget': constraint.worker_budget,
            'zero_weight_workers': int(np.sum(weights == 0)),
            'not_computable_workers': not_computable,
            'fallback_tasks': int(fallback.sum()),
            'mean_worker_weight': float(weights.mean())
        })

    # ==================== POST-PROCESSING ====================

    @staticmethod
    def fair_td_post(td, groups, constraint, truth=None):
        """
        Re-threshold an existing consensus per group to satisfy the constraint

        Args:
            td: TDResult to adjust
            groups: Sensitive group per task
            constraint: FairnessConstraint
            truth: Ground truth per task (EO only)

        Returns:
            TDResult: algorithm 'fair-td-post'; diagnostics carry thresholds,
            flips, achieved_violation and feasible
        """
        constraint.validate()
        groups, _, _ = _group_codes(groups, td.n_tasks)
        carried = {'iterations': td.iterations, 'final_loglik': td.final_loglik, 'converged': td.converged}
        if not constraint.active:
            return _inactive(td.posterior, 'post', td.algorithm, **carried)

        cutoffs, info = FairTDModel.select_thresholds(td.posterior, groups, constraint, truth)
        projected, offsets = FairTDModel.project(td.posterior, groups, cutoffs)
        result_truth = None if truth is None else np.asarray(truth)
        report = MetricsModel.fairness_report(
            (projected >= DECISION_THRESHOLD).astype(np.int8), result_truth, groups)
        achieved = constraint.violation(report)
        feasible = achieved <= constraint.epsilon + 1e-9
        if not feasible:
            logger.warning('fair_td_post: %s budget %.4f not reachable, closest violation %.4f',
                           constraint.kind, constraint.epsilon, achieved)

        return TDResult.from_posterior(projected, 'fair-td-post', diagnostics={
            'method': 'fair-td surrogate (post)',
            'base_algorithm': td.algorithm,
            'constraint': constraint.kind,
            'epsilon': constraint.epsilon,
            'thresholds': info['thresholds'],
            'logit_offsets': offsets,
            'flips': info['flips'],
            'achieved_violation': achieved,
            'feasible': bool(feasible)
        }, **carried)

    # ==================== IN-PROCESSING ====================

    @staticmethod
    def fair_td_in(matrix, groups, constraint, cfg=None, truth=None):
        """
        Dawid-Skene EM whose E-step posteriors are projected onto the constraint

        After every E-step, if the implied labeling violates the budget, each
        group is relabeled at the cutoff of the cheapest compliant labeling; the
        next M-step learns from the projected posteriors.

        Returns:
            TDResult: algorithm 'fair-td-in'
        """
        constraint.validate()
        cfg = (cfg or EMConfig()).validate()
        groups, _, _ = _group_codes(groups, matrix.n_tasks)
        if not constraint.active:
            result, _, _ = TruthDiscoveryModel.dawid_skene(matrix, cfg)
            return _inactive(result.posterior, 'in', 'ds', iterations=result.iterations,
                             final_loglik=result.final_loglik, converged=result.converged,
                             loglik_trace=result.loglik_trace)
        if constraint.kind == 'eo' and truth is None:
            raise MissingTruthError('equalized-odds fair truth discovery')

        s = cfg.smoothing
        posterior = TruthDiscoveryModel.initial_posteriors(matrix)
        trace = []
        projections = 0
        converged = False
        iteration = 0
        for iteration in range(1, cfg.max_iter + 1):
            pi, prior = TruthDiscoveryModel.ds_m_step(matrix, posterior, s)
            log_pi = _safe_log(pi)
            log_prior = _safe_log(np.array([1.0 - prior, prior]))
            terms = TruthDiscoveryModel.ds_class_terms(matrix, log_pi, cfg.threads)
            updated, loglik = _e_step(log_prior, terms)
            trace.append(loglik + s * (log_pi.sum() + log_prior.sum()))

            report = MetricsModel.fairness_report(
                (updated >= DECISION_THRESHOLD).astype(np.int8), truth, groups)
            if constraint.violation(report) > constraint.epsilon:
                cutoffs, _ = FairTDModel.select_thresholds(updated, groups, constraint, truth)
                updated, _ = FairTDModel.project(updated, groups, cutoffs)
                projections += 1

            change = float(np.max(np.abs(updated - posterior)))
            posterior = updated
            logger.debug('fair-td-in iter %d objective %.6f max change %.3e', iteration, trace[-1], change)
            if change < cfg.tol:
                converged = True
                break

        if not converged:
            logger.warning('fair_td_in did not converge in %d iterations', cfg.max_iter)
        final = MetricsModel.fairness_report((posterior >= DECISION_THRESHOLD).astype(np.int8), truth, groups)
        achieved = constraint.violation(final)
        return TDResult.from_posterior(
            posterior, 'fair-td-in',
            iterations=iteration,
            final_loglik=trace[-1],
            converged=converged,
            loglik_trace=tuple(trace),
            diagnostics={
                'method': 'fair-td surrogate (in)',
                'constraint': constraint.kind,
                'epsilon': constraint.epsilon,
                'projected_iterations': projections,
                'achieved_violation': achieved,
                'feasible': bool(achieved <= constraint.epsilon + 1e-9)
            }
        )

    # ==================== DISPATCH ====================

    @staticmethod
    def run(name, matrix, groups, constraint, cfg=None, truth=None, base=None):
        """
        Run one fair-TD variant by algorithm name

        `base` is the TDResult post-processing adjusts (Dawid-Skene when omitted).
        """
        if name == 'fair-td-pre':
            return FairTDModel.fair_td_pre(matrix, groups, constraint, cfg)
        if name == 'fair-td-in':
            return FairTDModel.fair_td_in(matrix, groups, constraint, cfg, truth)
        if name == 'fair-td-post':
            if base is None:
                base, _, _ = TruthDiscoveryModel.dawid_skene(matrix, cfg)
            return FairTDModel.fair_td_post(base, groups, constraint, truth)
        raise ConfigError(f'unknown fair truth-discovery variant {name!r} (expected one of {FairTDModel.VARIANTS})')
