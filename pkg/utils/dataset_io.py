import logging
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from models.annotation_model import MISSING, AnnotationModel, parse_binary, parse_identifier
from utils.errors import IngestionError, ReportWriteError
from utils.report_writer import write_report

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ('task_id', 'worker_id', 'label')
TASK_COLUMNS = ('task_id', 'group', 'truth')
LABEL_COLUMNS = ('task_id', 'posterior', 'label')
_FEATURE = re.compile(r'^feat_(\d+)$')

# Header is line 1, so data row i sits on line i + 2
_FIRST_DATA_LINE = 2


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    matrix: object
    tasks: object
    provenance: dict = field(default_factory=dict)

    def equals(self, other):
        return self.matrix.equals(other.matrix) and self.tasks.equals(other.tasks)


def _first_bad_line(path):
    with open(path, 'rb') as handle:
        for number, raw in enumerate(handle, start=1):
            try:
                raw.decode('utf-8')
            except UnicodeDecodeError:
                return number
    return None


def _read_csv(path):
    """Read a CSV as strings with blank cells kept as ''"""
    if not os.path.exists(path):
        raise IngestionError('file not found', path=path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except UnicodeDecodeError:
        raise IngestionError('file is not valid UTF-8', path=path, line=_first_bad_line(path))
    except pd.errors.EmptyDataError:
        raise IngestionError('file is empty', path=path)
    except pd.errors.ParserError as e:
        raise IngestionError(f'malformed CSV: {e}', path=path)
    frame.columns = [str(column).strip() for column in frame.columns]
    return frame


def _feature_columns(columns, path):
    extra = [c for c in columns if c not in TASK_COLUMNS]
    indexes = []
    for column in extra:
        match = _FEATURE.match(column)
        if match is None:
            raise IngestionError(f'unexpected column {column!r} (expected task_id, group, truth, feat_0..feat_d)',
                                 path=path, line=1)
        indexes.append(int(match.group(1)))
    if sorted(indexes) != list(range(len(indexes))):
        raise IngestionError(f'feature columns must be feat_0..feat_{len(indexes) - 1} without gaps', path=path, line=1)
    return [f'feat_{i}' for i in range(len(indexes))]


def _parse_features(frame, columns, path):
    values = np.empty((len(frame), len(columns)))
    for position, row in enumerate(frame[columns].itertuples(index=False)):
        line = position + _FIRST_DATA_LINE
        for j, text in enumerate(row):
            text = text.strip()
            if text == '':
                raise IngestionError(f'missing feature {columns[j]} (feature vectors must all have '
                                     f'{len(columns)} values)', path=path, line=line)
            try:
                value = float(text)
            except ValueError:
                raise IngestionError(f'{columns[j]} must be a number, got {text!r}', path=path, line=line)
            if not math.isfinite(value):
                raise IngestionError(f'{columns[j]} must be finite, got {text!r}', path=path, line=line)
            values[position, j] = value
    return values


def load_tasks(tasks_path):
    """
    Read the task table CSV (task_id, group[, truth][, feat_0..feat_d])

    Returns:
        TaskTable: Table ordered by task id
    """
    frame = _read_csv(tasks_path)
    for column in ('task_id', 'group'):
        if column not in frame.columns:
            raise IngestionError(f'missing required column {column!r}', path=tasks_path, line=1)
    feature_columns = _feature_columns(frame.columns, tasks_path)
    if frame.empty:
        raise IngestionError('task table has no rows', path=tasks_path)

    seen = {}
    truth = []
    for position, row in enumerate(frame.itertuples(index=False)):
        line = position + _FIRST_DATA_LINE
        record = row._asdict()
        try:
            task = parse_identifier(record['task_id'], 'task_id', line)
            if record['group'].strip() == '':
                raise IngestionError('group must not be blank', line=line)
            raw_truth = record.get('truth', '').strip()
            truth.append(None if raw_truth == '' else parse_binary(raw_truth, 'truth', line))
        except IngestionError as e:
            raise IngestionError(e.detail, path=tasks_path, line=e.line)
        if task in seen:
            raise IngestionError(f'duplicate task_id {task} (first seen at line {seen[task]})', path=tasks_path, line=line)
        seen[task] = line

    features = _parse_features(frame, feature_columns, tasks_path) if feature_columns else None
    return AnnotationModel.build_task_table(
        list(seen),
        [group.strip() for group in frame['group']],
        truth,
        features)


def load_dataset(annotations_path, tasks_path):
    """
    Load and validate the two-file dataset schema

    Args:
        annotations_path: CSV with header task_id,worker_id,label
        tasks_path: CSV with header task_id,group[,truth][,feat_0..feat_d]

    Returns:
        DatasetBundle: Matrix, task table and provenance
    """
    tasks = load_tasks(tasks_path)

    frame = _read_csv(annotations_path)
    missing = [c for c in ANNOTATION_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestionError(f'missing required column(s) {missing}', path=annotations_path, line=1)
    if frame.empty:
        raise IngestionError('annotation file has no rows', path=annotations_path)

    rows = list(zip(frame['task_id'], frame['worker_id'], frame['label']))
    lines = list(range(_FIRST_DATA_LINE, _FIRST_DATA_LINE + len(rows)))
    try:
        matrix = AnnotationModel.build_annotation_matrix(rows, task_universe=tasks.task_ids, line_numbers=lines)
    except IngestionError as e:
        raise IngestionError(e.detail, path=annotations_path, line=e.line)

    provenance = {
        'annotations_path': str(annotations_path),
        'tasks_path': str(tasks_path),
        'annotation_rows': len(rows),
        'task_rows': tasks.n_tasks,
        'n_entries': matrix.n_entries,
        'n_tasks': matrix.n_tasks,
        'n_workers': matrix.n_workers,
        'feature_dim': 0 if tasks.features is None else int(tasks.features.shape[1]),
        'missing_truth': int(np.sum(tasks.truth == MISSING)),
        'groups': list(tasks.group_names)
    }
    logger.info('Loaded %d labels on %d tasks from %d workers', matrix.n_entries, matrix.n_tasks, matrix.n_workers)
    return DatasetBundle(matrix=matrix, tasks=tasks, provenance=provenance)


def write_dataset(matrix, tasks, annotations_path, tasks_path):
    """Write a matrix and task table in the ingestion schema (features at full precision)"""
    annotations = pd.DataFrame(matrix.to_rows(), columns=list(ANNOTATION_COLUMNS))
    table = pd.DataFrame({
        'task_id': list(tasks.task_ids),
        'group': list(tasks.groups),
        'truth': ['' if value == MISSING else str(int(value)) for value in tasks.truth]
    })
    if tasks.features is not None:
        for j in range(tasks.features.shape[1]):
            table[f'feat_{j}'] = tasks.features[:, j]

    try:
        for path in (annotations_path, tasks_path):
            directory = os.path.dirname(str(path))
            if directory:
                os.makedirs(directory, exist_ok=True)
        annotations.to_csv(annotations_path, index=False, lineterminator='\n')
        table.to_csv(tasks_path, index=False, float_format='%.17g', lineterminator='\n')
    except OSError as e:
        raise ReportWriteError(f'cannot write dataset: {e}')
    return str(annotations_path), str(tasks_path)


def write_labels(result, task_ids, path):
    """labels.csv: one row per task with the posterior and the consensus label"""
    rows = [{'task_id': task, 'posterior': float(p), 'label': int(label)}
            for task, p, label in zip(task_ids, result.posterior, result.hard_label)]
    return write_report(rows, path, 'csv')


def load_labels(path, task_ids):
    """
    Read a labels.csv and align its hard labels to the given task ids

    Returns:
        np.ndarray: 0/1 label per task id
    """
    frame = _read_csv(path)
    for column in ('task_id', 'label'):
        if column not in frame.columns:
            raise IngestionError(f'missing required column {column!r}', path=path, line=1)
    labels = {}
    for position, (raw_task, raw_label) in enumerate(zip(frame['task_id'], frame['label'])):
        line = position + _FIRST_DATA_LINE
        try:
            labels[parse_identifier(raw_task, 'task_id', line)] = parse_binary(raw_label, 'label', line)
        except IngestionError as e:
            raise IngestionError(e.detail, path=path, line=e.line)
    absent = [task for task in task_ids if task not in labels]
    if absent:
        raise IngestionError(f'labels missing for {len(absent)} tasks (first: {absent[:5]})', path=path)
    return np.array([labels[task] for task in task_ids], dtype=np.int8)
