import math

import numpy as np
import pytest

from src.core.errors import FitError, SchemaError
from src.core.models import ElasticNetConfig, InnerCVConfig, ScalerParams
from src.core.preprocess import fit_scaler, rfe_select, spatial_sign, standardize, transform

RFE_CONFIG = ElasticNetConfig(alpha=0.5, lambda_=0.01)


# ---------- scaler ----------

def test_two_point_column():
    params = fit_scaler(np.array([[1.0], [3.0]]), ["a"])
    assert params.center == [2.0]
    assert params.scale[0] == pytest.approx(math.sqrt(2.0))


def test_constant_column_gets_unit_scale():
    params = fit_scaler(np.array([[5.0], [5.0], [5.0]]), ["a"])
    assert params.center == [5.0]
    assert params.scale == [1.0]


def test_standard_normal_sample_is_nearly_identity():
    X = np.random.default_rng(1).standard_normal((1000, 3))
    params = fit_scaler(X, ["a", "b", "c"])
    assert np.allclose(params.center, 0.0, atol=0.1)
    assert np.allclose(params.scale, 1.0, atol=0.1)


def test_scaler_needs_two_rows():
    with pytest.raises(FitError):
        fit_scaler(np.array([[1.0, 2.0]]), ["a", "b"])


def test_scaler_rejects_name_mismatch():
    with pytest.raises(SchemaError):
        fit_scaler(np.zeros((3, 2)), ["a"])


def test_restrict_keeps_requested_order():
    params = fit_scaler(np.array([[1.0, 10.0, 100.0], [3.0, 30.0, 300.0]]), ["a", "b", "c"])
    restricted = params.restrict(["c", "a"])
    assert restricted.features == ["c", "a"]
    assert restricted.center == [200.0, 2.0]


# ---------- transform ----------

def test_three_four_five_row():
    params = ScalerParams(features=["a", "b"], center=[0.0, 0.0], scale=[1.0, 1.0])
    assert np.allclose(transform(params, np.array([[3.0, 4.0]])), [[0.6, 0.8]])


def test_row_at_training_mean_maps_to_zero():
    X = np.array([[1.0, 2.0], [3.0, 6.0]])
    params = fit_scaler(X, ["a", "b"])
    assert np.array_equal(transform(params, np.array([[2.0, 4.0]])), np.zeros((1, 2)))


def test_transformed_rows_have_unit_or_zero_norm():
    rng = np.random.default_rng(3)
    X = rng.normal(50.0, 10.0, size=(40, 6))
    X[7] = X.mean(axis=0)
    norms = np.linalg.norm(transform(fit_scaler(X, list("abcdef")), X), axis=1)
    for norm in norms:
        assert norm == pytest.approx(1.0, abs=1e-12) or norm == 0.0


def test_spatial_sign_leaves_zero_rows_alone():
    Z = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert np.array_equal(spatial_sign(Z), np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_transform_depends_only_on_fitted_parameters():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    params = fit_scaler(X, ["a", "b", "c"])
    shifted = X + 10.0
    assert not np.allclose(transform(params, shifted), transform(params, X))
    assert np.allclose(standardize(params, shifted), standardize(params, X) + 10.0 / np.asarray(params.scale))


def test_transform_rejects_column_mismatch():
    params = fit_scaler(np.zeros((3, 2)) + np.arange(3)[:, None], ["a", "b"])
    with pytest.raises(SchemaError):
        transform(params, np.zeros((2, 3)))
    with pytest.raises(SchemaError):
        transform(params, np.zeros((2, 2)), features=["b", "a"])


# ---------- recursive feature elimination ----------

def _signal_and_noise(seed, n=400):
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-2.0 * signal))).astype(int)
    return np.column_stack([noise, signal]), y


def test_noise_feature_is_removed_first():
    noise_first = 0
    for seed in range(100):
        Z, y = _signal_and_noise(seed)
        subset = rfe_select(Z, y, ["noise", "signal"], RFE_CONFIG, InnerCVConfig(folds=5, seed=seed), [1])
        noise_first += subset.trace[0].removed == "noise"
    assert noise_first >= 95


def test_identical_copies_select_a_single_feature():
    rng = np.random.default_rng(9)
    z = rng.standard_normal(60)
    y = (z + rng.normal(0, 0.5, 60) > 0).astype(int)
    Z = np.column_stack([z, z, z])
    subset = rfe_select(Z, y, ["a", "b", "c"], RFE_CONFIG, InnerCVConfig(folds=3, seed=0))
    assert len(subset.features) == 1


def test_full_size_only_returns_every_feature():
    Z, y = _signal_and_noise(0, n=100)
    subset = rfe_select(Z, y, ["noise", "signal"], RFE_CONFIG, InnerCVConfig(), [2])
    assert subset.features == ["noise", "signal"]
    assert subset.trace == []


def test_oversized_candidates_are_clipped_to_feature_count():
    Z, y = _signal_and_noise(0, n=100)
    subset = rfe_select(Z, y, ["noise", "signal"], RFE_CONFIG, InnerCVConfig(), [10, 50])
    assert subset.features == ["noise", "signal"]


def test_trace_removes_one_feature_per_step():
    rng = np.random.default_rng(12)
    Z = rng.standard_normal((150, 6))
    y = (Z[:, 0] - Z[:, 1] + rng.normal(0, 1, 150) > 0).astype(int)
    names = [f"f{j}" for j in range(6)]
    subset = rfe_select(Z, y, names, RFE_CONFIG, InnerCVConfig(folds=3, seed=1))

    assert len(subset.trace) == len(names) - len(subset.features)
    remaining = [step.remaining for step in subset.trace]
    assert remaining == list(range(5, 5 - len(remaining), -1))
    assert set(subset.features) | {s.removed for s in subset.trace} == set(names)
    assert sorted(subset.size_scores) == list(range(1, 7))
    best = max(subset.size_scores.values())
    assert subset.size_scores[len(subset.features)] == best
    assert all(size_score < best for size, size_score in subset.size_scores.items() if size < len(subset.features))


def test_kept_features_preserve_input_order():
    rng = np.random.default_rng(13)
    Z = rng.standard_normal((120, 4))
    y = (Z[:, 3] + Z[:, 0] > 0).astype(int)
    subset = rfe_select(Z, y, ["d", "c", "b", "a"], RFE_CONFIG, InnerCVConfig(folds=3), [2])
    assert subset.features == [n for n in ["d", "c", "b", "a"] if n in subset.features]


def test_rfe_fails_when_inner_cv_is_impossible():
    Z = np.random.default_rng(0).standard_normal((20, 3))
    y = np.zeros(20, dtype=int)
    y[0] = 1
    with pytest.raises(FitError):
        rfe_select(Z, y, ["a", "b", "c"], RFE_CONFIG, InnerCVConfig(folds=5), [1])
