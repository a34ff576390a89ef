"""
End-to-end runs on the seeded 218-record synthetic cohort.
These tests use every available core and take minutes; deselect with -m "not slow".

The default run is pinned against golden/default_cv_summary.json. After an
intentional change to the numerics, re-record it with
CASCADE_UQ_UPDATE_GOLDEN=1 pytest -m slow tests/integration/test_cv_pipeline.py
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from src.core.models import MODEL_NAMES, ExperimentConfig
from src.core.pipeline import run_experiment
from src.core.simulation import DEFAULT_FRACTIONS, sample_size_simulation
from src.reporting.csv_exporter import get_csv_exporter

GOLDEN_PATH = Path(__file__).parent / "golden" / "default_cv_summary.json"
GOLDEN_TOLERANCE = 1e-3


def _summary(report) -> dict:
    return {
        "seed": report.config.seed,
        "metrics": {
            model: {metric: round(value.mean, 6) for metric, value in metrics.items()}
            for model, metrics in report.aggregate.items()
        },
        "pooled_auc": {model: round(result.estimate, 6) for model, result in report.auc_ci.items()},
        "escalation_fraction": round(report.escalation.overall_fraction, 6),
    }


@pytest.fixture(scope="module")
def default_report(full_cohort):
    return run_experiment(full_cohort, ExperimentConfig(seed=7, n_jobs=-1)).report


@pytest.mark.slow
def test_default_nested_cv_shape(default_report, full_cohort):
    report = default_report

    assert report.failed_folds == []
    assert report.errors == []
    auc = {model: report.aggregate[model]["auc"].mean for model in ("multi_stage", "ensemble1", "ensemble2")}
    assert auc["ensemble2"] >= auc["ensemble1"]
    assert auc["multi_stage"] >= auc["ensemble1"] - 0.03
    assert 0.05 < report.escalation.overall_fraction < 0.95
    assert report.escalation.total == len(full_cohort)


@pytest.mark.slow
def test_default_nested_cv_matches_golden_summary(default_report):
    summary = _summary(default_report)
    if os.environ.get("CASCADE_UQ_UPDATE_GOLDEN"):
        GOLDEN_PATH.parent.mkdir(parents=True, exist_ok=True)
        GOLDEN_PATH.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not GOLDEN_PATH.exists():
        pytest.skip(f"no golden summary at {GOLDEN_PATH}; record it with CASCADE_UQ_UPDATE_GOLDEN=1")

    golden = json.loads(GOLDEN_PATH.read_text())
    assert summary["seed"] == golden["seed"]
    assert set(summary["metrics"]) == set(golden["metrics"]) == set(MODEL_NAMES)
    for model, metrics in golden["metrics"].items():
        assert summary["metrics"][model] == pytest.approx(metrics, abs=GOLDEN_TOLERANCE), model
    assert summary["pooled_auc"] == pytest.approx(golden["pooled_auc"], abs=GOLDEN_TOLERANCE)
    assert summary["escalation_fraction"] == pytest.approx(golden["escalation_fraction"], abs=GOLDEN_TOLERANCE)


@pytest.mark.slow
def test_simulation_trend(full_cohort):
    config = ExperimentConfig(
        seed=7,
        outer_folds=5,
        inner_folds=3,
        n_models=[25],
        sample_fractions=[0.8],
        alphas=[0.5],
        lambdas=[0.01],
        rfe_sizes=[100],
        n_jobs=-1,
    )
    report = sample_size_simulation(full_cohort, config, repeats=3)

    runs = get_csv_exporter().simulation_runs_frame(report)
    grid = runs[["fraction", "repeat"]].drop_duplicates()
    assert sorted(grid.fraction.unique()) == DEFAULT_FRACTIONS
    assert len(grid) == len(DEFAULT_FRACTIONS) * 3

    # cells too small for inner-CV tuning are flagged, not dropped
    assert len(report.cells) == len(DEFAULT_FRACTIONS) * 3 * config.outer_folds
    assert all(c.error for c in report.cells if c.status == "failed")

    auc = {row.fraction: row.mean for row in report.summary if row.metric == "auc"}
    assert 1.0 in auc
    assert auc[1.0] >= auc[min(auc)]
    assert np.isfinite(list(auc.values())).all()
