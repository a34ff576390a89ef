import logging

import numpy as np
import pytest

from src.core.cohort import stratified_kfold, synthesize_cohort, write_cohort_csv
from src.core.models import ExperimentConfig, FoldPlan
from src.utils.config import load_synthetic_spec

# Initialize logger for tests
logger = logging.getLogger(__name__)


@pytest.fixture(autouse=True)
def reset_singletons():
    """Reset all singleton instances before each test."""
    from src.reporting import csv_exporter
    csv_exporter._exporter_instance = None
    yield


@pytest.fixture(scope="session")
def baseline_spec():
    """The bundled synthetic spec built from the baseline characteristics table."""
    return load_synthetic_spec()


@pytest.fixture(scope="session")
def cohort(baseline_spec):
    """A seeded 150-record synthetic cohort with both stages."""
    return synthesize_cohort(baseline_spec, 150, seed=3)


@pytest.fixture(scope="session")
def full_cohort(baseline_spec):
    """Cohort the size of the enrolled study (218 records)."""
    return synthesize_cohort(baseline_spec, 218, seed=7)


@pytest.fixture
def cohort_csv(tmp_path, cohort):
    path = tmp_path / "cohort.csv"
    write_cohort_csv(cohort, str(path))
    return path


@pytest.fixture
def fast_config():
    """Small grids so a whole nested-CV run finishes in seconds; RFE keeps every feature."""
    return ExperimentConfig(
        outer_folds=3,
        inner_folds=2,
        validation_sizes=(12, 12),
        n_models=[8, 10],
        sample_fractions=[0.8],
        alphas=[0.5],
        lambdas=[0.05],
        std_thresholds=[0.02, 0.05, 0.1],
        midway_thresholds=[0.0, 0.05, 0.1],
        s_grid=[1.0, 4.0],
        rfe_sizes=[100],
        seed=11,
    )


@pytest.fixture
def fold_plan(cohort, fast_config) -> FoldPlan:
    return stratified_kfold(cohort, fast_config.outer_folds, fast_config.seed)


@pytest.fixture
def logistic_data():
    """Well-conditioned standardized design with a known linear signal."""
    rng = np.random.default_rng(42)
    X = rng.standard_normal((200, 5))
    beta = np.array([1.0, -0.8, 0.5, 0.0, 0.3])
    prob = 1.0 / (1.0 + np.exp(-(0.2 + X @ beta)))
    y = (rng.random(200) < prob).astype(int)
    return X, y
