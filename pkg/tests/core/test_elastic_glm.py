import math

import numpy as np
import pytest

from src.core.elastic_glm import (
    _active_set_solve,
    _coordinate_descent,
    fit_elastic_net,
    penalized_objective,
    predict_proba,
    predict_proba_matrix,
    smooth_gradient,
)
from src.core.errors import DataValidationError, FitError
from src.core.models import ElasticNetConfig, LogisticModel


def _standardized(rng, n, p):
    X = rng.standard_normal((n, p))
    return (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)


def _labels(rng, X, scale=1.0):
    beta = rng.uniform(-1.0, 1.0, X.shape[1]) * scale
    prob = 1.0 / (1.0 + np.exp(-(X @ beta)))
    y = (rng.random(len(X)) < prob).astype(int)
    y[0], y[1] = 0, 1
    return y


def _irls_oracle(X, y, iterations=100):
    """Plain Newton-Raphson for the unpenalized logistic MLE."""
    X1 = np.hstack([np.ones((len(X), 1)), X])
    beta = np.zeros(X1.shape[1])
    for _ in range(iterations):
        prob = 1.0 / (1.0 + np.exp(-(X1 @ beta)))
        W = prob * (1.0 - prob)
        step = np.linalg.solve((X1.T * W) @ X1, X1.T @ (y - prob))
        beta = beta + step
        if np.max(np.abs(step)) < 1e-12:
            break
    return beta


def _zero_model(p, intercept=0.0, config=None):
    return LogisticModel(
        feature_names=[f"x{j}" for j in range(p)],
        intercept=intercept,
        coefficients=[0.0] * p,
        config=config or ElasticNetConfig(),
        converged=True,
        iterations=0,
    )


# ---------- fitting ----------

def test_huge_lambda_gives_intercept_only_model(logistic_data):
    X, y = logistic_data
    model = fit_elastic_net(X, y, ElasticNetConfig(alpha=0.5, lambda_=1e6))

    assert all(c == 0.0 for c in model.coefficients)
    assert model.intercept == pytest.approx(math.log(y.mean() / (1 - y.mean())), abs=1e-8)


def test_unpenalized_fit_matches_irls_oracle(logistic_data):
    X, y = logistic_data
    model = fit_elastic_net(X, y, ElasticNetConfig(alpha=0.5, lambda_=0.0))
    oracle = _irls_oracle(X, y)

    assert model.converged
    fitted = np.concatenate([[model.intercept], model.coefficients])
    assert np.max(np.abs(fitted - oracle)) < 1e-4


def test_lasso_dead_zone_zeroes_every_coefficient(logistic_data):
    X, y = logistic_data
    threshold = np.max(np.abs(X.T @ (y - y.mean()))) / len(y)
    model = fit_elastic_net(X, y, ElasticNetConfig(alpha=1.0, lambda_=threshold * 1.01))

    assert model.coefficients == [0.0] * X.shape[1]


def test_just_below_dead_zone_activates_a_coefficient(logistic_data):
    X, y = logistic_data
    threshold = np.max(np.abs(X.T @ (y - y.mean()))) / len(y)
    model = fit_elastic_net(X, y, ElasticNetConfig(alpha=1.0, lambda_=threshold * 0.8))

    assert any(c != 0.0 for c in model.coefficients)


def test_solver_properties_on_random_instances():
    """KKT conditions, descent and the unpenalized oracle over many random problems."""
    rng = np.random.default_rng(2024)
    for instance in range(50):
        n = int(rng.integers(40, 301))
        p = int(rng.integers(1, 11))
        X = _standardized(rng, n, p)
        y = _labels(rng, X)
        alpha = float(rng.choice([0.1, 0.5, 0.9, 1.0]))
        lam = float(rng.choice([1e-3, 1e-2, 5e-2]))

        config = ElasticNetConfig(alpha=alpha, lambda_=lam)
        model = fit_elastic_net(X, y, config)
        assert model.converged, f"instance {instance} did not converge"

        path = np.array(model.objective_path)
        assert np.all(np.diff(path) <= 0.0), f"objective increased on instance {instance}"

        grad = smooth_gradient(model, X, y)
        assert abs(grad[0]) <= 1e-4
        for j, beta in enumerate(model.coefficients):
            g = grad[j + 1]
            if beta != 0.0:
                residual = g + lam * (1 - alpha) * beta + lam * alpha * np.sign(beta)
                assert abs(residual) <= 1e-4, f"active KKT violated on instance {instance}"
            else:
                assert abs(g) <= lam * alpha + 1e-4, f"zero KKT violated on instance {instance}"

        if instance % 5 == 0:
            unpenalized = fit_elastic_net(X, y, ElasticNetConfig(alpha=alpha, lambda_=0.0))
            fitted = np.concatenate([[unpenalized.intercept], unpenalized.coefficients])
            assert np.max(np.abs(fitted - _irls_oracle(X, y))) < 1e-4


def test_warm_start_reaches_same_solution(logistic_data):
    X, y = logistic_data
    config = ElasticNetConfig(alpha=0.5, lambda_=0.01)
    cold = fit_elastic_net(X, y, config)
    warm_from = fit_elastic_net(X, y, ElasticNetConfig(alpha=0.5, lambda_=0.1))
    warm = fit_elastic_net(X, y, config, initial=(warm_from.intercept, warm_from.coefficients))

    assert np.allclose(cold.coefficients, warm.coefficients, atol=1e-5)


def _one_hot_design(rng, n, groups, levels):
    """Standardized full one-hot blocks: each block sums to a near-intercept column."""
    blocks = []
    for _ in range(groups):
        codes = rng.integers(0, levels, n)
        blocks.append((codes[:, None] == np.arange(levels)).astype(float))
    return _standardized_columns(np.hstack(blocks))


def _standardized_columns(X):
    return (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)


def test_small_lambda_on_collinear_one_hot_design_converges_quickly():
    rng = np.random.default_rng(77)
    X = _one_hot_design(rng, 180, groups=6, levels=4)
    y = _labels(rng, X, scale=0.5)
    lam, alpha = 1e-4, 0.1

    model = fit_elastic_net(X, y, ElasticNetConfig(alpha=alpha, lambda_=lam))

    assert model.converged
    assert model.iterations < 2000
    grad = smooth_gradient(model, X, y)
    assert abs(grad[0]) <= 1e-4
    for j, beta in enumerate(model.coefficients):
        g = grad[j + 1]
        if beta != 0.0:
            assert abs(g + lam * (1 - alpha) * beta + lam * alpha * np.sign(beta)) <= 1e-4
        else:
            assert abs(g) <= lam * alpha + 1e-4


def test_active_set_and_coordinate_descent_agree_on_quadratic():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((60, 8))
    G = A.T @ A / 60
    c = rng.standard_normal(8) * 0.5
    l1, l2 = 0.2, 0.05
    H = G + l2 * np.diag(np.r_[0.0, np.ones(7)])

    exact, _, exact_done = _active_set_solve(H, c, np.zeros(8), l1, 1000)
    cyclic, _, cyclic_done = _coordinate_descent(G, c, np.zeros(8), l1, l2, 1e-12, 100_000)

    assert exact_done and cyclic_done
    assert np.allclose(exact, cyclic, atol=1e-6)
    assert np.all(exact[1:][np.abs(cyclic[1:]) < 1e-12] == 0.0)


def test_feature_names_are_kept(logistic_data):
    X, y = logistic_data
    names = ["a", "b", "c", "d", "e"]
    model = fit_elastic_net(X, y, feature_names=names)
    assert model.feature_names == names


def test_fit_rejects_single_class(logistic_data):
    X, _ = logistic_data
    with pytest.raises(FitError):
        fit_elastic_net(X, np.ones(len(X), dtype=int))


def test_fit_rejects_non_finite_input(logistic_data):
    X, y = logistic_data
    X = X.copy()
    X[3, 2] = np.nan
    with pytest.raises(DataValidationError):
        fit_elastic_net(X, y)


def test_fit_rejects_name_count_mismatch(logistic_data):
    X, y = logistic_data
    with pytest.raises(DataValidationError):
        fit_elastic_net(X, y, feature_names=["only", "two"])


def test_model_round_trips_through_json(logistic_data):
    X, y = logistic_data
    model = fit_elastic_net(X, y)
    restored = LogisticModel.model_validate_json(model.to_json())
    assert np.allclose(predict_proba_matrix(restored, X), predict_proba_matrix(model, X))


# ---------- prediction ----------

def test_zero_model_predicts_one_half():
    assert predict_proba(_zero_model(3), [4.0, -2.0, 7.5]) == 0.5


def test_intercept_log_three_gives_three_quarters():
    assert predict_proba(_zero_model(2, intercept=math.log(3.0)), [0.0, 0.0]) == pytest.approx(0.75)


def test_saturated_score_is_clamped():
    model = LogisticModel(
        feature_names=["x0"], intercept=0.0, coefficients=[1.0],
        config=ElasticNetConfig(), converged=True, iterations=0,
    )
    assert predict_proba(model, [1e4]) == 1.0 - 1e-12
    assert predict_proba(model, [-1e4]) == 1e-12


def test_predict_rejects_length_mismatch():
    with pytest.raises(DataValidationError):
        predict_proba(_zero_model(3), [1.0, 2.0])


# ---------- objective ----------

def test_zero_model_objective_is_log_two():
    y = np.array([0, 1, 0, 1])
    X = np.zeros((4, 2))
    assert penalized_objective(_zero_model(2), X, y) == pytest.approx(math.log(2.0))


def test_unpenalized_objective_is_mean_logistic_loss():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 3))
    y = (rng.random(30) < 0.5).astype(int)
    model = LogisticModel(
        feature_names=["a", "b", "c"], intercept=0.3, coefficients=[0.5, -1.0, 0.2],
        config=ElasticNetConfig(lambda_=0.0), converged=True, iterations=0,
    )
    eta = 0.3 + X @ np.array([0.5, -1.0, 0.2])
    expected = np.mean(np.log1p(np.exp(eta)) - y * eta)
    assert penalized_objective(model, X, y) == pytest.approx(expected, rel=1e-12)


def test_fitted_objective_beats_zero_model():
    rng = np.random.default_rng(17)
    for _ in range(10):
        X = _standardized(rng, 80, 4)
        y = _labels(rng, X, scale=2.0)
        config = ElasticNetConfig(alpha=0.5, lambda_=0.02)
        model = fit_elastic_net(X, y, config)
        assert penalized_objective(model, X, y) <= penalized_objective(_zero_model(4, config=config), X, y)


def test_objective_rejects_shape_mismatch():
    with pytest.raises(DataValidationError):
        penalized_objective(_zero_model(3), np.zeros((4, 2)), np.array([0, 1, 0, 1]))


def test_smooth_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((25, 3))
    y = (rng.random(25) < 0.5).astype(int)
    params = rng.standard_normal(4) * 0.5

    def loss(theta):
        eta = theta[0] + X @ theta[1:]
        return np.mean(np.logaddexp(0.0, eta) - y * eta)

    model = LogisticModel(
        feature_names=["a", "b", "c"], intercept=float(params[0]), coefficients=params[1:].tolist(),
        config=ElasticNetConfig(), converged=True, iterations=0,
    )
    h = 1e-6
    numeric = np.array([
        (loss(params + h * np.eye(4)[k]) - loss(params - h * np.eye(4)[k])) / (2 * h) for k in range(4)
    ])
    np.testing.assert_allclose(smooth_gradient(model, X, y), numeric, rtol=1e-5, atol=1e-9)
