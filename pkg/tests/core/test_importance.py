import math

import numpy as np
import pytest

from src.core.errors import DataValidationError
from src.core.importance import (
    CascadeTarget,
    EnsembleTarget,
    build_report,
    coefficient_importance,
    permutation_drops,
    permutation_importance,
    permutation_importance_folds,
)
from src.core.models import (
    CascadeModel,
    CascadeThresholds,
    ElasticNetConfig,
    Ensemble,
    EnsembleConfig,
    LogisticModel,
)
from src.core.preprocess import fit_scaler, transform
from src.core.uq_ensemble import fit_ensemble


def _fixed_ensemble(features, coefficient_rows):
    models = [
        LogisticModel(
            feature_names=features, intercept=0.0, coefficients=list(row),
            config=ElasticNetConfig(), converged=True, iterations=0,
        )
        for row in coefficient_rows
    ]
    return Ensemble(
        models=models,
        subsamples=[[0]] * len(models),
        config=EnsembleConfig(n_models=len(models), sample_fraction=1.0),
        features=features,
    )


def _signal_data(seed, n=200):
    """Column 'signal' drives the label, 'noise' does not."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    y = (X[:, 0] + rng.normal(0.0, 0.5, n) > 0).astype(int)
    return X, y


# ---------- coefficient aggregation ----------

def test_coefficient_means_then_absolute_across_folds():
    fold1 = _fixed_ensemble(["a", "b"], [[1.0, -2.0], [3.0, -2.0]])
    fold2 = _fixed_ensemble(["a", "b"], [[-4.0, 0.0], [-2.0, 0.0]])
    report = coefficient_importance([fold1, fold2])

    a = report.entries[0]
    assert a.feature == "a"
    assert a.per_fold == [2.0, -3.0]
    assert a.overall == pytest.approx(2.5)
    assert report.value("b") == pytest.approx(1.0)
    assert [e.rank for e in report.entries] == [1, 2]


def test_features_missing_from_a_fold_count_as_zero():
    fold1 = _fixed_ensemble(["a", "b"], [[1.0, 2.0]])
    fold2 = _fixed_ensemble(["a"], [[1.0]])
    report = coefficient_importance([fold1, fold2], universe=["a", "b", "c"])

    b = next(e for e in report.entries if e.feature == "b")
    assert b.per_fold == [2.0, 0.0]
    assert report.value("c") == 0.0


def test_coefficient_importance_needs_ensembles():
    with pytest.raises(DataValidationError):
        coefficient_importance([])


def test_ties_keep_universe_order():
    report = build_report("permutation", np.array([[0.1, 0.3, 0.1]]), ["x", "y", "z"])
    assert [e.feature for e in report.entries] == ["y", "x", "z"]
    assert [e.rank for e in report.entries] == [1, 2, 3]


# ---------- permutation ----------

@pytest.fixture(scope="module")
def signal_target():
    X, y = _signal_data(1)
    scaler = fit_scaler(X, ["signal", "noise"])
    ensemble = fit_ensemble(transform(scaler, X), y, ["signal", "noise"], EnsembleConfig(n_models=5, sample_fraction=0.8))
    return EnsembleTarget(ensemble=ensemble, scaler=scaler)


def test_signal_feature_dominates(signal_target):
    X, y = _signal_data(2)
    report = permutation_importance(signal_target, X, y, ["signal", "noise"], repeats=5, seed=3)
    assert report.entries[0].feature == "signal"
    assert report.value("signal") > 0.1
    assert abs(report.value("noise")) < 0.05


def test_unused_feature_gets_exactly_zero(signal_target):
    X, y = _signal_data(3)
    extra = np.column_stack([X, np.random.default_rng(0).standard_normal(len(y))])
    drops = permutation_drops(signal_target, extra, y, ["signal", "noise", "unused"], ["signal", "noise", "unused"])
    assert drops[2] == 0.0


def test_permutation_is_reproducible(signal_target):
    X, y = _signal_data(4)
    first = permutation_drops(signal_target, X, y, ["signal", "noise"], ["signal", "noise"], repeats=3, seed=9)
    second = permutation_drops(signal_target, X, y, ["signal", "noise"], ["signal", "noise"], repeats=3, seed=9)
    assert np.array_equal(first, second)


def test_column_order_of_input_does_not_matter(signal_target):
    X, y = _signal_data(5)
    forward = permutation_drops(signal_target, X, y, ["signal", "noise"], ["signal", "noise"], seed=1)
    backward = permutation_drops(signal_target, X[:, ::-1], y, ["noise", "signal"], ["signal", "noise"], seed=1)
    assert np.allclose(forward, backward)


def test_missing_input_column_is_rejected(signal_target):
    X, y = _signal_data(6)
    with pytest.raises(DataValidationError):
        permutation_drops(signal_target, X[:, :1], y, ["signal"], ["signal"])


def test_repeats_must_be_positive(signal_target):
    X, y = _signal_data(6)
    with pytest.raises(DataValidationError):
        permutation_drops(signal_target, X, y, ["signal", "noise"], ["signal"], repeats=0)


def test_fold_reports_average_drops(signal_target):
    X1, y1 = _signal_data(7)
    X2, y2 = _signal_data(8)
    columns = ["signal", "noise"]
    report = permutation_importance_folds(
        [(signal_target, X1, y1), (signal_target, X2, y2)], columns, columns, repeats=2, seed=4,
    )
    signal = report.entries[0]
    assert signal.feature == "signal"
    assert len(signal.per_fold) == 2
    assert signal.overall == pytest.approx(sum(signal.per_fold) / 2)
    assert report.method == "permutation"


def test_fold_reports_need_folds():
    with pytest.raises(DataValidationError):
        permutation_importance_folds([], ["a"], ["a"])


def test_cascade_target_shuffles_shared_feature_in_both_stages():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((200, 2))
    y = (X[:, 0] + X[:, 1] + rng.normal(0.0, 0.5, 200) > 0).astype(int)
    scaler2 = fit_scaler(X, ["a", "b"])
    scaler1 = scaler2.restrict(["a"])
    config = EnsembleConfig(n_models=4, sample_fraction=0.8)
    ensemble1 = fit_ensemble(transform(scaler1, X[:, :1]), y, ["a"], config)
    ensemble2 = fit_ensemble(transform(scaler2, X), y, ["a", "b"], config)
    model = CascadeModel(
        ensemble1=ensemble1, ensemble2=ensemble2,
        thresholds=CascadeThresholds(std_threshold=0.0, midway_threshold=0.5, scaling_weight=1.0),
        stage1_schema=["a"], stage2_schema=["a", "b"],
    )
    target = CascadeTarget(model=model, scaler1=scaler1, scaler2=scaler2)

    assert target.locate("a") == [(0, 0), (1, 0)]
    assert target.locate("b") == [(1, 1)]
    assert target.locate("c") == []

    drops = permutation_drops(target, X, y, ["a", "b"], ["a", "b", "c"], repeats=3)
    assert drops[0] > 0.05
    assert drops[1] > 0.05
    assert drops[2] == 0.0
    assert all(math.isfinite(d) for d in drops)
