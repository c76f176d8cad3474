from dataclasses import dataclass, field

import numpy as np

from utils.errors import DataError, IngestionError, MissingTruthError

# Posterior at or above this is a positive consensus label (ties go to 1)
DECISION_THRESHOLD = 0.5

# Sentinel for "no value" in integer label/truth arrays
MISSING = -1


def hard_labels(posterior):
    """Apply the global decision rule to an array of P(y=1)"""
    return (np.asarray(posterior, dtype=float) >= DECISION_THRESHOLD).astype(np.int8)


def _frozen(array, dtype=None):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class AnnotationMatrix:
    """Sparse worker x task binary answers, entries sorted by (task, worker)"""

    tasks: np.ndarray
    workers: np.ndarray
    labels: np.ndarray
    n_tasks: int
    n_workers: int
    task_ids: tuple
    worker_ids: tuple

    @property
    def n_entries(self):
        return int(self.labels.shape[0])

    def task_counts(self):
        return np.bincount(self.tasks, minlength=self.n_tasks)

    def worker_counts(self):
        return np.bincount(self.workers, minlength=self.n_workers)

    def positive_counts(self):
        return np.bincount(self.tasks, weights=self.labels, minlength=self.n_tasks)

    def answers_for_task(self, task):
        """The answer vector of one task: (worker indexes, labels)"""
        start, stop = np.searchsorted(self.tasks, [task, task + 1])
        return self.workers[start:stop], self.labels[start:stop]

    def entries_for_worker(self, worker):
        """(task indexes, labels) answered by one worker, in task order"""
        mask = self.workers == worker
        return self.tasks[mask], self.labels[mask]

    def select_entries(self, mask):
        """
        Keep only the masked entries, dropping tasks and workers left without labels

        Returns:
            AnnotationMatrix: re-indexed matrix, or None when nothing is left
        """
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            return None
        rows = zip(
            np.asarray(self.task_ids)[self.tasks[mask]].tolist(),
            np.asarray(self.worker_ids)[self.workers[mask]].tolist(),
            self.labels[mask].tolist()
        )
        return AnnotationModel.build_annotation_matrix(list(rows))

    def to_rows(self):
        """(task_id, worker_id, label) triples with the original identifiers"""
        task_ids = np.asarray(self.task_ids)[self.tasks].tolist()
        worker_ids = np.asarray(self.worker_ids)[self.workers].tolist()
        return list(zip(task_ids, worker_ids, self.labels.tolist()))

    def equals(self, other):
        return (
            isinstance(other, AnnotationMatrix)
            and self.n_tasks == other.n_tasks
            and self.n_workers == other.n_workers
            and self.task_ids == other.task_ids
            and self.worker_ids == other.worker_ids
            and np.array_equal(self.tasks, other.tasks)
            and np.array_equal(self.workers, other.workers)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class TaskTable:
    """Per-task sensitive group, optional truth (MISSING when unknown) and optional features"""

    task_ids: tuple
    groups: np.ndarray
    truth: np.ndarray
    features: np.ndarray = None

    @property
    def n_tasks(self):
        return len(self.task_ids)

    @property
    def group_names(self):
        return tuple(np.unique(self.groups).tolist())

    @property
    def has_truth(self):
        return bool(np.all(self.truth != MISSING))

    @property
    def has_features(self):
        return self.features is not None

    def require_truth(self, operation):
        missing = int(np.sum(self.truth == MISSING))
        if missing:
            raise MissingTruthError(operation, missing)
        return self.truth

    def require_features(self, operation):
        if self.features is None:
            raise DataError(f'{operation} requires task features (feat_0..feat_d columns)')
        return self.features

    def require_groups(self, operation):
        if len(self.group_names) < 2:
            raise DataError(f'{operation} requires at least two sensitive groups, found {len(self.group_names)}')
        return self.groups

    def equals(self, other):
        if not isinstance(other, TaskTable) or self.task_ids != other.task_ids:
            return False
        if not (np.array_equal(self.groups, other.groups) and np.array_equal(self.truth, other.truth)):
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)


@dataclass(frozen=True, eq=False)
class TDResult:
    """Consensus of one truth-discovery run"""

    posterior: np.ndarray
    hard_label: np.ndarray
    algorithm: str
    iterations: int = 0
    final_loglik: float = float('nan')
    converged: bool = True
    loglik_trace: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_posterior(cls, posterior, algorithm, **kwargs):
        posterior = np.clip(np.asarray(posterior, dtype=float), 0.0, 1.0)
        return cls(posterior=_frozen(posterior), hard_label=_frozen(hard_labels(posterior)),
                   algorithm=algorithm, **kwargs)

    @property
    def n_tasks(self):
        return int(self.posterior.shape[0])

    def summary(self):
        return {
            'algorithm': self.algorithm,
            'iterations': self.iterations,
            'final_loglik': self.final_loglik,
            'converged': self.converged,
            'positive_fraction': float(np.mean(self.hard_label)) if self.n_tasks else None
        }


def _sorted_ids(ids, kind):
    unique = set()
    for raw in ids:
        unique.add(parse_identifier(raw, kind))
    return tuple(sorted(unique))


def parse_identifier(raw, kind, line=None):
    if isinstance(raw, (bool, np.bool_)):
        raise IngestionError(f'{kind} must be a non-negative integer, got {raw!r}', line=line)
    if isinstance(raw, (int, np.integer)):
        value = int(raw)
    else:
        text = str(raw).strip()
        if not text.isdigit():
            raise IngestionError(f'{kind} must be a non-negative integer, got {raw!r}', line=line)
        value = int(text)
    if value < 0:
        raise IngestionError(f'{kind} must be a non-negative integer, got {raw!r}', line=line)
    return value


def parse_binary(raw, kind, line=None):
    if isinstance(raw, (bool, np.bool_)):
        return int(raw)
    if isinstance(raw, (int, np.integer)) and int(raw) in (0, 1):
        return int(raw)
    if isinstance(raw, (float, np.floating)) and float(raw) in (0.0, 1.0):
        return int(raw)
    if isinstance(raw, str) and raw.strip() in ('0', '1'):
        return int(raw.strip())
    raise IngestionError(f'{kind} must be 0 or 1, got {raw!r}', line=line)


class AnnotationModel:
    """Construction and validation of the shared data structures"""

    @staticmethod
    def build_annotation_matrix(rows, task_universe=None, line_numbers=None):
        """
        Build an AnnotationMatrix from (task, worker, label) rows

        Args:
            rows: Sequence of (task_id, worker_id, label)
            task_universe: Optional task ids that must all be present (dense order follows it)
            line_numbers: Optional source line per row, used in error messages

        Returns:
            AnnotationMatrix: Matrix with dense ids in ascending original-id order
        """
        rows = list(rows)
        if not rows:
            raise IngestionError('annotation rows are empty')

        answers = {}
        for position, row in enumerate(rows):
            line = line_numbers[position] if line_numbers is not None else None
            if len(row) != 3:
                raise IngestionError(f'expected (task, worker, label), got {row!r}', line=line)
            task = parse_identifier(row[0], 'task_id', line)
            worker = parse_identifier(row[1], 'worker_id', line)
            label = parse_binary(row[2], 'label', line)
            previous = answers.get((task, worker))
            if previous is not None and previous[0] != label:
                where = f' (first seen at line {previous[1]})' if previous[1] is not None else ''
                raise IngestionError(
                    f'conflicting labels for task {task}, worker {worker}{where}', line=line)
            if previous is None:
                answers[(task, worker)] = (label, line)

        if task_universe is None:
            task_ids = _sorted_ids((task for task, _ in answers), 'task_id')
        else:
            task_ids = _sorted_ids(task_universe, 'task_id')
            known = set(task_ids)
            for (task, _), (_, line) in answers.items():
                if task not in known:
                    raise IngestionError(f'annotation references unknown task_id {task}', line=line)
        worker_ids = _sorted_ids((worker for _, worker in answers), 'worker_id')

        task_index = {task: i for i, task in enumerate(task_ids)}
        worker_index = {worker: j for j, worker in enumerate(worker_ids)}
        keys = sorted(answers, key=lambda key: (task_index[key[0]], worker_index[key[1]]))
        tasks = np.array([task_index[task] for task, _ in keys], dtype=np.int64)
        workers = np.array([worker_index[worker] for _, worker in keys], dtype=np.int64)
        labels = np.array([answers[key][0] for key in keys], dtype=np.int8)

        counts = np.bincount(tasks, minlength=len(task_ids))
        if np.any(counts == 0):
            unlabeled = [task_ids[i] for i in np.flatnonzero(counts == 0)[:5]]
            raise IngestionError(f'tasks without any label: {unlabeled}')

        return AnnotationMatrix(
            tasks=_frozen(tasks),
            workers=_frozen(workers),
            labels=_frozen(labels),
            n_tasks=len(task_ids),
            n_workers=len(worker_ids),
            task_ids=task_ids,
            worker_ids=worker_ids
        )

    @staticmethod
    def build_task_table(task_ids, groups, truth=None, features=None):
        """
        Build a TaskTable ordered by ascending task id

        Args:
            task_ids: Task identifiers
            groups: Sensitive-group value per task (stored as strings)
            truth: Optional 0/1 per task; None or MISSING entries mean unknown
            features: Optional (n_tasks, d) array

        Returns:
            TaskTable: Validated table
        """
        ids = [parse_identifier(task, 'task_id') for task in task_ids]
        if len(set(ids)) != len(ids):
            raise IngestionError('duplicate task_id in task table')
        n = len(ids)
        if len(groups) != n:
            raise IngestionError(f'{len(groups)} groups for {n} tasks')

        if truth is None:
            truth_values = np.full(n, MISSING, dtype=np.int8)
        else:
            if len(truth) != n:
                raise IngestionError(f'{len(truth)} truth values for {n} tasks')
            truth_values = np.array(
                [MISSING if value is None or value == MISSING else parse_binary(value, 'truth') for value in truth],
                dtype=np.int8)

        feature_values = None
        if features is not None:
            feature_values = np.asarray(features, dtype=float)
            if feature_values.ndim != 2 or feature_values.shape[0] != n:
                raise IngestionError(f'features must be a ({n}, d) array, got shape {feature_values.shape}')
            if not np.all(np.isfinite(feature_values)):
                raise IngestionError('features must be finite')

        order = np.argsort(ids, kind='stable')
        return TaskTable(
            task_ids=tuple(ids[i] for i in order),
            groups=_frozen(np.asarray([str(g) for g in groups], dtype=object)[order]),
            truth=_frozen(truth_values[order]),
            features=None if feature_values is None else _frozen(feature_values[order])
        )

    @staticmethod
    def align(matrix, tasks):
        """Check that an AnnotationMatrix and a TaskTable describe the same tasks"""
        if matrix.task_ids != tasks.task_ids:
            raise DataError('annotation matrix and task table cover different task ids')
        return matrix, tasks
