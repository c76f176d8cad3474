import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field, fields

import click

from commands.aggregate import ALGORITHMS, cmd_aggregate
from commands.audit import cmd_audit
from commands.common import banner
from commands.downstream import CLASSIFIER, cmd_downstream
from commands.fair_compare import DEFAULT_EPS_GRID, DEFAULT_ETA_GRID, cmd_fair_compare
from commands.simulate import cmd_simulate
from models.audit_model import default_grid
from models.fair_td_model import FAIRNESS_KINDS, FairnessConstraint, FairTDModel
from models.simulation_model import SimConfig
from models.truth_discovery_model import EMConfig, TruthDiscoveryModel
from utils.config import load_yaml, settings
from utils.dataset_io import load_dataset
from utils.errors import ConfigError, ToolkitError
from utils.report_writer import write_report

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Everything one end-to-end run needs; either `dataset` paths or a `simulation` block"""

    dataset: dict = None
    simulation: dict = None
    algorithms: list = field(default_factory=lambda: ['mv', 'ds', 'lfc'])
    base_algorithms: list = field(default_factory=lambda: ['mv', 'ds'])
    fairness: str = 'dp'
    epsilon: float = 0.05
    threshold_grid: list = field(default_factory=default_grid)
    eps_grid: list = field(default_factory=lambda: list(DEFAULT_EPS_GRID))
    eta_grid: list = field(default_factory=lambda: list(DEFAULT_ETA_GRID))
    repeats: int = 10
    split_fraction: float = 0.5
    bins: int = 10
    seed: int = 0
    threads: int = 1
    output_dir: str = None
    em: dict = field(default_factory=dict)

    @classmethod
    def from_yaml(cls, path, **overrides):
        """
        Load a pipeline config, apply the overrides that are not None and validate

        Unknown keys are reported together with every other problem.
        """
        data = load_yaml(path)
        known = {f.name for f in fields(cls)}
        problems = [f'unknown pipeline key {key!r}' for key in sorted(set(data) - known)]
        data = {key: value for key, value in data.items() if key in known}
        data.setdefault('seed', settings.seed)
        data.setdefault('threads', settings.threads)
        data.update({key: value for key, value in overrides.items() if value is not None})
        config = cls(**data)
        try:
            config.validate()
        except ConfigError as e:
            problems += e.problems
        if problems:
            raise ConfigError(problems)
        return config

    def em_config(self):
        return EMConfig(seed=self.seed, threads=self.threads, **(self.em or {}))

    def sim_config(self):
        return SimConfig.from_dict({'seed': self.seed, **(self.simulation or {})})

    def validate(self):
        """Collect every problem before anything runs"""
        problems = []
        if (self.dataset is None) == (self.simulation is None):
            problems.append('exactly one of dataset or simulation must be given')
        if self.dataset is not None:
            if not isinstance(self.dataset, dict) or not {'annotations', 'tasks'} <= set(self.dataset):
                problems.append('dataset needs annotations and tasks paths')
        if self.simulation is not None:
            try:
                self.sim_config()
            except ConfigError as e:
                problems += [f'simulation: {problem}' for problem in e.problems]
            except TypeError as e:
                problems.append(f'simulation: {e}')

        for name in self.algorithms or []:
            if name not in ALGORITHMS:
                problems.append(f'unknown algorithm {name!r} (expected one of {ALGORITHMS})')
        if not self.algorithms:
            problems.append('algorithms must not be empty')
        for name in self.base_algorithms or []:
            if name not in TruthDiscoveryModel.ALGORITHMS:
                problems.append(f'unknown base algorithm {name!r}')
        if self.fairness not in FAIRNESS_KINDS:
            problems.append(f'fairness must be one of {FAIRNESS_KINDS}, got {self.fairness!r}')
        if not isinstance(self.epsilon, (int, float)) or self.epsilon < 0:
            problems.append(f'epsilon must be >= 0, got {self.epsilon!r}')
        for key in ('threshold_grid', 'eps_grid', 'eta_grid'):
            values = getattr(self, key)
            if not isinstance(values, list) or not values \
                    or any(not isinstance(v, (int, float)) or v < 0 for v in values):
                problems.append(f'{key} must be a non-empty list of numbers >= 0')
        if not isinstance(self.repeats, int) or self.repeats < 1:
            problems.append(f'repeats must be an integer >= 1, got {self.repeats!r}')
        if not isinstance(self.split_fraction, (int, float)) or not 0 < self.split_fraction < 1:
            problems.append(f'split_fraction must be in (0, 1), got {self.split_fraction!r}')
        if not isinstance(self.bins, int) or self.bins < 1:
            problems.append(f'bins must be an integer >= 1, got {self.bins!r}')
        if not isinstance(self.threads, int) or self.threads < 1:
            problems.append(f'threads must be an integer >= 1, got {self.threads!r}')
        try:
            self.em_config().validate()
        except ConfigError as e:
            problems += [f'em: {problem}' for problem in e.problems]
        except TypeError as e:
            problems.append(f'em: {e}')

        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'), default=str)
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class _Stages:
    """Times each stage for the manifest"""

    def __init__(self):
        self.timings = {}

    def run(self, name, fn, *args, **kwargs):
        logger.info('Stage %s started', name)
        started = time.perf_counter()
        result = fn(*args, **kwargs)
        self.timings[name] = round(time.perf_counter() - started, 3)
        logger.info('Stage %s finished in %.2fs', name, self.timings[name])
        return result


def cmd_pipeline(config, out):
    """
    Run simulate/load, audit, aggregate, downstream and fair-compare into `out`

    Every stage reads its inputs back from the previous stage's files.
    Only manifest.json carries timings.

    Returns:
        dict: The manifest
    """
    from app import VERSION

    config.validate()
    cfg = config.em_config()
    stages = _Stages()

    if config.simulation is not None:
        annotations, tasks_path = stages.run('simulate', cmd_simulate, config.sim_config(), os.path.join(out, 'dataset'))
    else:
        annotations, tasks_path = config.dataset['annotations'], config.dataset['tasks']
    bundle = stages.run('load', load_dataset, annotations, tasks_path)
    bundle.tasks.require_truth('pipeline')
    bundle.tasks.require_groups('pipeline')

    stages.run('audit', cmd_audit, bundle, os.path.join(out, 'audit'),
               thresholds=config.threshold_grid, bins=config.bins, threads=config.threads)

    constraint = FairnessConstraint(kind=config.fairness, epsilon=config.epsilon)
    comparison = []
    for name in config.algorithms:
        result, report = stages.run(f'aggregate:{name}', cmd_aggregate, bundle, name,
                                    os.path.join(out, 'aggregate', name), cfg,
                                    constraint if name in FairTDModel.VARIANTS else None)
        comparison.append({
            'algorithm': name,
            'accuracy': report.accuracy,
            'dp_diff': report.dp_diff,
            'dp_ratio': report.dp_ratio,
            'eo_diff': report.eo_diff,
            'eo_ratio': report.eo_ratio,
            'iterations': result.iterations,
            'converged': result.converged
        })
    write_report(comparison, os.path.join(out, 'td_comparison.csv'))

    if bundle.tasks.has_features:
        deltas = []
        for name in config.algorithms:
            report = stages.run(f'downstream:{name}', cmd_downstream, bundle,
                                os.path.join(out, 'aggregate', name, 'labels.csv'),
                                os.path.join(out, 'downstream', name),
                                repeats=config.repeats, seed=config.seed, threads=config.threads,
                                split_fraction=config.split_fraction, algorithm=name)
            deltas.append({
                'classifier': CLASSIFIER,
                'algorithm': name,
                'delta_accuracy': report.delta_accuracy,
                'delta_dp_diff': report.delta_dp_diff,
                'delta_eo_diff': report.delta_eo_diff,
                'repeats': report.repeats
            })
        write_report(deltas, os.path.join(out, 'delta_table.csv'))
    else:
        logger.warning('pipeline: no task features, skipping the downstream stage')

    stages.run('fair_compare', cmd_fair_compare, bundle, out, config.fairness, config.eps_grid, config.eta_grid,
               config.base_algorithms, cfg, config.seed, config.threads, config.split_fraction)

    manifest = {
        'tool': 'tdaudit',
        'version': VERSION,
        'config_sha256': config.digest(),
        'seed': config.seed,
        'threads': config.threads,
        'dataset': bundle.provenance,
        'stage_seconds': stages.timings
    }
    write_report(manifest, os.path.join(out, 'manifest.json'))
    return manifest


@click.command('pipeline')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='YAML pipeline config')
@click.option('--seed', type=int, default=None, help='Overrides the config seed')
@click.option('--threads', type=int, default=None, help='Overrides the config thread count')
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Output directory (config output_dir, then TDAUDIT_OUTPUT_DIR)')
def pipeline_cmd(config_path, seed, threads, out):
    """Run every analysis end to end from one config"""
    config = PipelineConfig.from_yaml(config_path, seed=seed, threads=threads)
    out = out or config.output_dir or settings.output_dir

    banner('Running pipeline', config=config_path, algorithms=','.join(config.algorithms), seed=config.seed, out=out)
    try:
        manifest = cmd_pipeline(config, out)
    except ToolkitError:
        logger.error('pipeline stopped; partial results are in %s', out)
        raise
    banner('Pipeline complete', **{name: f'{seconds}s' for name, seconds in manifest['stage_seconds'].items()})
