import numpy as np
import pytest

from models.annotation_model import AnnotationModel
from models.simulation_model import SimConfig, SimulationModel
from utils.dataset_io import DatasetBundle


def random_matrix(rng, n_tasks, n_workers, per_task):
    """Every task labeled by `per_task` distinct random workers with coin-flip labels"""
    rows = []
    for task in range(n_tasks):
        for worker in rng.choice(n_workers, size=per_task, replace=False):
            rows.append((task, int(worker), int(rng.integers(0, 2))))
    return AnnotationModel.build_annotation_matrix(rows)


def unfair_config(**overrides):
    """Half the workers are fair, half over-flag group B (specificity 0.6 there)"""
    data = {
        'n_tasks': 1000,
        'n_workers': 10,
        'labels_per_task': 5,
        'base_rate': 0.2,
        'seed': 7,
        'workers': [
            {'count': 5, 'sensitivity': 0.95, 'specificity': 0.95},
            {'count': 5, 'sensitivity': 0.95, 'specificity': 0.95, 'by_group': {'B': {'specificity': 0.6}}}
        ]
    }
    data.update(overrides)
    return SimConfig.from_dict(data)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_matrix():
    return AnnotationModel.build_annotation_matrix([(0, 0, 1), (0, 1, 0), (1, 0, 1)])


@pytest.fixture
def unfair_dataset():
    return SimulationModel.generate(unfair_config())


@pytest.fixture
def featured_bundle():
    matrix, tasks = SimulationModel.generate(SimConfig(n_tasks=300, n_workers=8, labels_per_task=5,
                                                       feature_dim=4, seed=3))
    return DatasetBundle(matrix=matrix, tasks=tasks, provenance={})
