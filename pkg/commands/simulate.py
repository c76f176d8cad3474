import logging
import os

import click

from commands.common import banner
from models.simulation_model import SimConfig, SimulationModel
from utils.config import load_yaml, settings
from utils.dataset_io import write_dataset
from utils.report_writer import write_report

logger = logging.getLogger(__name__)


def cmd_simulate(cfg, out):
    """
    Generate a synthetic dataset into `out`

    Returns:
        tuple: (annotations path, tasks path)
    """
    matrix, tasks = SimulationModel.generate(cfg)
    paths = write_dataset(matrix, tasks, os.path.join(out, 'annotations.csv'), os.path.join(out, 'tasks.csv'))
    write_report({
        'config': cfg.to_dict(),
        'expected_worker_accuracy': SimulationModel.expected_accuracy(cfg)
    }, os.path.join(out, 'simulation.json'))
    return paths


@click.command('simulate')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='YAML simulation config (SimConfig keys, optional workers profiles)')
@click.option('--seed', type=int, default=None, help='Overrides the config seed')
@click.option('--out', type=click.Path(file_okay=False), default=lambda: settings.output_dir)
def simulate_cmd(config_path, seed, out):
    """Write a synthetic dataset (annotations.csv, tasks.csv, simulation.json)"""
    data = load_yaml(config_path) if config_path else {}
    if seed is not None:
        data['seed'] = seed
    elif 'seed' not in data:
        data['seed'] = settings.seed
    cfg = SimConfig.from_dict(data)

    banner('Simulating dataset', tasks=cfg.n_tasks, workers=cfg.n_workers, seed=cfg.seed, out=out)
    annotations, tasks = cmd_simulate(cfg, out)
    banner('Simulation complete', annotations=annotations, tasks=tasks)
