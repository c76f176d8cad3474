from dataclasses import dataclass
from typing import Optional

import numpy as np

from models.annotation_model import MISSING
from utils.errors import DataError

REPORT_FIELDS = ('accuracy', 'fpr', 'fnr', 'dp_diff', 'dp_ratio', 'eo_diff', 'eo_ratio')


@dataclass(frozen=True)
class GroupStats:
    group: str
    support: int
    positive_rate: float
    tpr: Optional[float]
    fpr: Optional[float]

    def to_dict(self):
        return {
            'group': self.group,
            'support': self.support,
            'positive_rate': self.positive_rate,
            'tpr': self.tpr,
            'fpr': self.fpr
        }


@dataclass(frozen=True)
class FairnessReport:
    """Accuracy and fairness of one binary predictor; None marks a not-computable cell"""

    accuracy: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    dp_diff: Optional[float]
    dp_ratio: Optional[float]
    eo_diff: Optional[float]
    eo_ratio: Optional[float]
    per_group: tuple = ()
    n_predictions: int = 0
    excluded_groups: tuple = ()

    @property
    def fairness_computable(self):
        return self.dp_diff is not None

    def metric(self, name):
        if name not in REPORT_FIELDS:
            raise ValueError(f'unknown metric {name!r}')
        return getattr(self, name)

    def to_dict(self):
        record = {name: getattr(self, name) for name in REPORT_FIELDS}
        record['n_predictions'] = self.n_predictions
        record['fairness_computable'] = self.fairness_computable
        record['excluded_groups'] = list(self.excluded_groups)
        record['per_group'] = [stats.to_dict() for stats in self.per_group]
        return record


def _ratio(low, high):
    # 0/0 -> 1 (identically all-negative is fair), x/0 cannot occur since low <= high
    if high == 0:
        return 1.0
    return float(low / high)


def _spread(values):
    values = [v for v in values if v is not None]
    if len(values) < 2:
        return None, None
    low, high = min(values), max(values)
    return float(high - low), _ratio(low, high)


def _prediction_mask(predictions):
    predictions = np.asarray(predictions, dtype=float)
    mask = np.isfinite(predictions) & (predictions >= 0)
    if np.any(predictions[mask] > 1):
        raise DataError('predictions must lie in [0, 1]')
    return predictions, mask


class MetricsModel:
    """Accuracy and group-fairness metrics for workers, TD outputs and classifiers"""

    @staticmethod
    def fairness_report(predictions, truth, groups, min_support=1):
        """
        Compute the FairnessReport of a (possibly partial) predictor

        Args:
            predictions: Per-task 0/1 (or expected value in [0, 1]); NaN / MISSING = not predicted
            truth: Per-task 0/1 with MISSING for unknown, or None
            groups: Per-task sensitive-group value
            min_support: Groups with fewer predicted tasks are excluded from the gaps

        Returns:
            FairnessReport: Report over exactly the predicted tasks
        """
        predictions, mask = _prediction_mask(predictions)
        if not mask.any():
            raise DataError('fairness_report needs at least one prediction')
        groups = np.asarray(groups, dtype=object)
        if groups.shape[0] != predictions.shape[0]:
            raise DataError('predictions and groups are not aligned')

        p = predictions[mask]
        g = groups[mask]
        if truth is None:
            t = np.full(p.shape[0], MISSING, dtype=np.int64)
        else:
            truth = np.asarray(truth)
            if truth.shape[0] != predictions.shape[0]:
                raise DataError('predictions and truth are not aligned')
            t = truth[mask].astype(np.int64)

        known = t != MISSING
        positives = known & (t == 1)
        negatives = known & (t == 0)

        accuracy = fpr = fnr = None
        if known.any():
            agree = p[known] * t[known] + (1.0 - p[known]) * (1 - t[known])
            accuracy = float(agree.sum() / known.sum())
        if negatives.any():
            fpr = float(p[negatives].sum() / negatives.sum())
        if positives.any():
            fnr = float((1.0 - p[positives]).sum() / positives.sum())

        per_group = []
        for name in sorted(set(g.tolist())):
            in_group = g == name
            group_pos = in_group & positives
            group_neg = in_group & negatives
            per_group.append(GroupStats(
                group=str(name),
                support=int(in_group.sum()),
                positive_rate=float(p[in_group].sum() / in_group.sum()),
                tpr=float(p[group_pos].sum() / group_pos.sum()) if group_pos.any() else None,
                fpr=float(p[group_neg].sum() / group_neg.sum()) if group_neg.any() else None
            ))

        eligible = [stats for stats in per_group if stats.support >= min_support]
        excluded = tuple(stats.group for stats in per_group if stats.support < min_support)

        dp_diff = dp_ratio = eo_diff = eo_ratio = None
        if len(eligible) >= 2:
            dp_diff, dp_ratio = _spread([stats.positive_rate for stats in eligible])
            tpr_gap, tpr_ratio = _spread([stats.tpr for stats in eligible])
            fpr_gap, fpr_ratio = _spread([stats.fpr for stats in eligible])
            gaps = [gap for gap in (tpr_gap, fpr_gap) if gap is not None]
            ratios = [ratio for ratio in (tpr_ratio, fpr_ratio) if ratio is not None]
            if gaps:
                eo_diff = max(gaps)
                eo_ratio = min(ratios)

        return FairnessReport(
            accuracy=accuracy,
            fpr=fpr,
            fnr=fnr,
            dp_diff=dp_diff,
            dp_ratio=dp_ratio,
            eo_diff=eo_diff,
            eo_ratio=eo_ratio,
            per_group=tuple(per_group),
            n_predictions=int(mask.sum()),
            excluded_groups=excluded
        )

    @staticmethod
    def accuracy(predictions, truth):
        """
        Fraction of agreeing tasks among tasks that have both a prediction and a truth

        Returns:
            float: Accuracy in [0, 1]
        """
        predictions, mask = _prediction_mask(predictions)
        truth = np.asarray(truth)
        both = mask & (truth != MISSING)
        if not both.any():
            raise DataError('accuracy needs at least one task with both a prediction and a truth')
        p = predictions[both]
        t = truth[both].astype(float)
        return float((p * t + (1.0 - p) * (1.0 - t)).sum() / both.sum())

    @staticmethod
    def pooled_report(parts, min_support=1):
        """
        Report over the concatenation of several (predictions, truth, groups) parts

        Used for bucket tables, where metrics are pooled over member labels rather
        than averaged over member reports.
        """
        parts = list(parts)
        if not parts:
            return None
        predictions = np.concatenate([np.asarray(part[0], dtype=float) for part in parts])
        truth = np.concatenate([np.asarray(part[1]) for part in parts])
        groups = np.concatenate([np.asarray(part[2], dtype=object) for part in parts])
        return MetricsModel.fairness_report(predictions, truth, groups, min_support=min_support)
