import logging
from dataclasses import dataclass, fields, replace

import numpy as np

from models.annotation_model import AnnotationModel
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

ASSIGNMENTS = ('uniform', 'block')

# Mean shift of the synthetic features (unit-variance Gaussians)
FEATURE_SHIFT = 1.0


@dataclass(frozen=True)
class SimConfig:
    """
    Synthetic crowdsourcing population

    worker_spec[j][g] = (sensitivity, specificity) of worker j on tasks of group g.
    When it is omitted every worker gets `sensitivity` / `specificity` on every group.
    """

    n_tasks: int = 200
    n_workers: int = 10
    labels_per_task: int = 5
    group_names: tuple = ('A', 'B')
    group_proportions: tuple = (0.5, 0.5)
    base_rate: tuple = (0.5, 0.5)
    worker_spec: tuple = None
    sensitivity: float = 0.8
    specificity: float = 0.8
    feature_dim: int = 0
    seed: int = 0
    assignment: str = 'uniform'
    block_size: int = 50

    @classmethod
    def from_dict(cls, data):
        """
        Build a config from a YAML mapping

        Besides the field names, a `workers` list of profiles is accepted:
        each has `count`, optional `sensitivity` / `specificity` and an optional
        `by_group` mapping of group name to overrides.
        """
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        profiles = data.pop('workers', None)
        problems = [f'unknown simulation key {key!r}' for key in sorted(set(data) - known)]
        data = {key: value for key, value in data.items() if key in known}

        for key in ('group_names', 'group_proportions', 'base_rate'):
            if key in data and isinstance(data[key], (list, tuple)):
                data[key] = tuple(data[key])
        if 'base_rate' in data and not isinstance(data['base_rate'], tuple):
            names = data.get('group_names', cls.group_names)
            data['base_rate'] = tuple([data['base_rate']] * len(names))

        config = cls(**data)
        if profiles is not None:
            try:
                config = config._with_profiles(profiles)
            except ConfigError as e:
                problems += e.problems
        try:
            config.validate()
        except ConfigError as e:
            problems += e.problems
        if problems:
            raise ConfigError(problems)
        return config

    def _with_profiles(self, profiles):
        problems = []
        spec = []
        for position, profile in enumerate(profiles):
            if not isinstance(profile, dict) or 'count' not in profile:
                problems.append(f'workers[{position}] needs a count')
                continue
            default = (float(profile.get('sensitivity', self.sensitivity)),
                       float(profile.get('specificity', self.specificity)))
            overrides = profile.get('by_group', {}) or {}
            for name in overrides:
                if name not in self.group_names:
                    problems.append(f'workers[{position}].by_group names unknown group {name!r}')
            row = []
            for name in self.group_names:
                override = overrides.get(name, {}) or {}
                row.append((float(override.get('sensitivity', default[0])),
                            float(override.get('specificity', default[1]))))
            spec.extend([tuple(row)] * int(profile['count']))
        if problems:
            raise ConfigError(problems)
        return replace(self, worker_spec=tuple(spec))

    def worker_array(self):
        """(n_workers, n_groups, 2) array of (sensitivity, specificity)"""
        if self.worker_spec is None:
            return np.tile(np.array([self.sensitivity, self.specificity], dtype=float),
                           (self.n_workers, len(self.group_names), 1))
        return np.asarray(self.worker_spec, dtype=float)

    def validate(self):
        problems = []
        if not isinstance(self.n_tasks, int) or self.n_tasks < 1:
            problems.append(f'n_tasks must be an integer >= 1, got {self.n_tasks!r}')
        if not isinstance(self.n_workers, int) or self.n_workers < 1:
            problems.append(f'n_workers must be an integer >= 1, got {self.n_workers!r}')
        if not isinstance(self.labels_per_task, int) or self.labels_per_task < 1:
            problems.append(f'labels_per_task must be an integer >= 1, got {self.labels_per_task!r}')
        elif isinstance(self.n_workers, int) and self.labels_per_task > self.n_workers:
            problems.append(f'labels_per_task ({self.labels_per_task}) exceeds n_workers ({self.n_workers})')

        n_groups = len(self.group_names)
        if n_groups < 1 or len(set(self.group_names)) != n_groups:
            problems.append('group_names must be distinct and non-empty')
        if len(self.group_proportions) != n_groups:
            problems.append(f'group_proportions needs {n_groups} values')
        elif any(p < 0 for p in self.group_proportions) or abs(sum(self.group_proportions) - 1.0) > 1e-9:
            problems.append(f'group_proportions must be >= 0 and sum to 1, got {list(self.group_proportions)}')
        if len(self.base_rate) != n_groups:
            problems.append(f'base_rate needs {n_groups} values')
        elif any(not 0.0 <= p <= 1.0 for p in self.base_rate):
            problems.append(f'base_rate values must lie in [0, 1], got {list(self.base_rate)}')

        try:
            spec = self.worker_array()
        except (TypeError, ValueError):
            problems.append('worker_spec must be an (n_workers, n_groups, 2) table of probabilities')
        else:
            if spec.shape != (self.n_workers, n_groups, 2):
                problems.append(f'worker_spec has shape {spec.shape}, expected ({self.n_workers}, {n_groups}, 2)')
            elif np.any(spec < 0) or np.any(spec > 1):
                problems.append('sensitivities and specificities must lie in [0, 1]')

        if not isinstance(self.feature_dim, int) or self.feature_dim < 0:
            problems.append(f'feature_dim must be an integer >= 0, got {self.feature_dim!r}')
        if self.assignment not in ASSIGNMENTS:
            problems.append(f'assignment must be one of {ASSIGNMENTS}, got {self.assignment!r}')
        elif self.assignment == 'block':
            if not isinstance(self.block_size, int) or self.block_size < 1:
                problems.append(f'block_size must be an integer >= 1, got {self.block_size!r}')
            if isinstance(self.n_workers, int) and isinstance(self.labels_per_task, int) \
                    and self.labels_per_task >= 1 and self.n_workers % self.labels_per_task:
                problems.append('block assignment needs n_workers to be a multiple of labels_per_task')

        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        record = {f.name: getattr(self, f.name) for f in fields(self)}
        record['group_names'] = list(self.group_names)
        record['group_proportions'] = list(self.group_proportions)
        record['base_rate'] = list(self.base_rate)
        record['worker_spec'] = self.worker_array().tolist()
        return record


class SimulationModel:
    """Synthetic datasets with known truth and planted per-group worker behavior"""

    @staticmethod
    def assign_workers(rng, cfg):
        """(n_tasks, labels_per_task) array of distinct worker indexes per task"""
        n, m, k = cfg.n_tasks, cfg.n_workers, cfg.labels_per_task
        if cfg.assignment == 'uniform':
            return np.argsort(rng.random((n, m)), axis=1)[:, :k]

        # block mode: fixed teams of k workers label consecutive blocks of tasks
        teams = rng.permutation(m).reshape(m // k, k)
        blocks = np.arange(n) // cfg.block_size
        return teams[blocks % teams.shape[0]]

    @staticmethod
    def generate(cfg):
        """
        Draw a dataset from the configured population

        Args:
            cfg: SimConfig

        Returns:
            tuple: (AnnotationMatrix, TaskTable)
        """
        cfg.validate()
        rng = np.random.default_rng(cfg.seed)
        spec = cfg.worker_array()

        group_index = rng.choice(len(cfg.group_names), size=cfg.n_tasks, p=np.asarray(cfg.group_proportions))
        base_rate = np.asarray(cfg.base_rate, dtype=float)
        truth = (rng.random(cfg.n_tasks) < base_rate[group_index]).astype(np.int8)

        assigned = SimulationModel.assign_workers(rng, cfg)
        tasks = np.repeat(np.arange(cfg.n_tasks), assigned.shape[1])
        workers = assigned.ravel()
        entry_groups = group_index[tasks]
        sensitivity = spec[workers, entry_groups, 0]
        specificity = spec[workers, entry_groups, 1]
        draw = rng.random(tasks.shape[0])
        labels = np.where(truth[tasks] == 1, draw < sensitivity, draw >= specificity).astype(np.int8)

        features = None
        if cfg.feature_dim > 0:
            features = rng.normal(size=(cfg.n_tasks, cfg.feature_dim))
            # even columns carry the label, odd columns the group
            features[:, 0::2] += FEATURE_SHIFT * truth[:, None]
            features[:, 1::2] += FEATURE_SHIFT * group_index[:, None]

        matrix = AnnotationModel.build_annotation_matrix(
            list(zip(tasks.tolist(), workers.tolist(), labels.tolist())),
            task_universe=range(cfg.n_tasks))
        table = AnnotationModel.build_task_table(
            range(cfg.n_tasks),
            [cfg.group_names[g] for g in group_index],
            truth.tolist(),
            features)
        logger.info('Simulated %d tasks x %d workers (%d labels, seed %d)',
                    cfg.n_tasks, cfg.n_workers, matrix.n_entries, cfg.seed)
        return matrix, table

    @staticmethod
    def expected_accuracy(cfg):
        """Planted per-worker accuracy under the configured group mix and base rates"""
        spec = cfg.worker_array()
        proportions = np.asarray(cfg.group_proportions, dtype=float)
        base_rate = np.asarray(cfg.base_rate, dtype=float)
        per_group = base_rate * spec[:, :, 0] + (1.0 - base_rate) * spec[:, :, 1]
        return per_group @ proportions
