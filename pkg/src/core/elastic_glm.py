"""
Elastic-net penalized logistic regression, the ensembles' base learner.

Minimizes
    (1/n) sum_i [log(1 + exp(eta_i)) - y_i eta_i]
        + lambda * (alpha * ||beta||_1 + (1 - alpha) / 2 * ||beta||_2^2)
with an unpenalized intercept, by IRLS outer iterations around an exact
active-set solve of each weighted least-squares approximation. Cyclic
coordinate descent finishes any subproblem the active-set steps leave short
of its optimality conditions.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.core.errors import DataValidationError, FitError
from src.core.models import ElasticNetConfig, LogisticModel

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12
WEIGHT_FLOOR = 1e-5
MAX_HALVINGS = 30
KKT_TOLERANCE = 1e-9


def _as_design(X: np.ndarray, y: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataValidationError(f"design matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataValidationError("design matrix contains non-finite values")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise DataValidationError(f"labels of shape {y.shape} do not match {X.shape[0]} rows")
    if not np.all((y == 0) | (y == 1)):
        raise DataValidationError("labels must be 0 or 1")
    return X, y


def _objective(beta: np.ndarray, X1: np.ndarray, y: np.ndarray, l1: float, l2: float) -> float:
    eta = X1 @ beta
    loss = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    coefs = beta[1:]
    return loss + l1 * float(np.abs(coefs).sum()) + 0.5 * l2 * float(coefs @ coefs)


def _soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def _coordinate_descent(
    G: np.ndarray,
    c: np.ndarray,
    b: np.ndarray,
    l1: float,
    l2: float,
    tolerance: float,
    budget: int,
) -> Tuple[np.ndarray, int, bool]:
    """
    Minimize 1/2 b'Gb - c'b + penalty by cyclic coordinate descent.

    Full sweeps alternate with sweeps over the nonzero coordinates until a full
    sweep moves nothing by more than `tolerance`. Returns (b, sweeps, converged).
    """
    b = b.copy()
    Gb = G @ b
    diag = np.diag(G)
    sweeps = 0

    def sweep(coords) -> float:
        largest = 0.0
        for j in coords:
            rho = c[j] - Gb[j] + diag[j] * b[j]
            if j == 0:
                new = rho / diag[0]
            else:
                denom = diag[j] + l2
                new = _soft_threshold(rho, l1) / denom if denom > 0 else 0.0
            delta = new - b[j]
            if delta != 0.0:
                Gb[:] += G[:, j] * delta
                b[j] = new
                largest = max(largest, abs(delta))
        return largest

    everything = range(len(b))
    while sweeps < budget:
        sweeps += 1
        if sweep(everything) < tolerance:
            return b, sweeps, True
        active = [0] + [j for j in range(1, len(b)) if b[j] != 0.0]
        while sweeps < budget:
            sweeps += 1
            if sweep(active) < tolerance:
                break
    return b, sweeps, False


def _solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, rhs)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def _quadratic_value(H: np.ndarray, c: np.ndarray, b: np.ndarray, l1: float) -> float:
    return 0.5 * float(b @ H @ b) - float(c @ b) + l1 * float(np.abs(b[1:]).sum())


def _kkt_violation(H: np.ndarray, c: np.ndarray, b: np.ndarray, l1: float) -> float:
    grad = H @ b - c
    sign = np.sign(b)
    sign[0] = 0.0
    excess = np.where(b != 0.0, np.abs(grad + l1 * sign), np.maximum(np.abs(grad) - l1, 0.0))
    excess[0] = abs(grad[0])
    return float(excess.max())


def _signed_step(
    H: np.ndarray,
    c: np.ndarray,
    b: np.ndarray,
    sign: np.ndarray,
    active: np.ndarray,
    l1: float,
) -> np.ndarray:
    """
    Solve the quadratic on the active coordinates with their signs fixed, then
    return the lowest-objective point among that solution and every point on
    the way where an active coefficient crosses zero.
    """
    idx = np.flatnonzero(active)
    target = np.zeros_like(b)
    target[idx] = _solve(H[np.ix_(idx, idx)], c[idx] - l1 * sign[idx])

    candidates = [target]
    for k in idx[1:]:
        if b[k] != 0.0 and np.sign(target[k]) != np.sign(b[k]):
            t = b[k] / (b[k] - target[k])
            point = b + t * (target - b)
            point[k] = 0.0
            candidates.append(point)
    values = [_quadratic_value(H, c, point, l1) for point in candidates]
    return candidates[int(np.argmin(values))]


def _active_set_solve(
    H: np.ndarray,
    c: np.ndarray,
    b: np.ndarray,
    l1: float,
    budget: int,
) -> Tuple[np.ndarray, int, bool]:
    """
    Minimize 1/2 b'Hb - c'b + l1 * ||b[1:]||_1 by signed active-set steps.

    Zero coefficients whose gradient exceeds l1 enter together with the sign
    that reduces the objective; when the joint step does not descend, only
    the largest violator enters. Every accepted step strictly lowers the
    objective. Returns (b, steps, converged).
    """
    if l1 == 0.0:
        return _solve(H, c), 1, True

    b = b.copy()
    value = _quadratic_value(H, c, b, l1)
    steps = 0
    while steps < budget:
        active = b != 0.0
        active[0] = True
        sign = np.sign(b)
        sign[0] = 0.0
        grad = H @ b - c

        if np.max(np.abs(grad + l1 * sign)[active]) <= KKT_TOLERANCE:
            excess = np.where(active, -np.inf, np.abs(grad) - l1)
            if excess.max() <= KKT_TOLERANCE:
                return b, steps, True
            entering = excess > KKT_TOLERANCE
            attempts = [entering]
            if entering.sum() > 1:
                single = np.zeros_like(entering)
                single[int(np.argmax(excess))] = True
                attempts.append(single)
            for new in attempts:
                steps += 1
                trial_sign = sign.copy()
                trial_sign[new] = -np.sign(grad[new])
                point = _signed_step(H, c, b, trial_sign, active | new, l1)
                point_value = _quadratic_value(H, c, point, l1)
                if point_value < value:
                    break
        else:
            steps += 1
            point = _signed_step(H, c, b, sign, active, l1)
            point_value = _quadratic_value(H, c, point, l1)

        if not point_value < value:
            break
        b, value = point, point_value

    return b, steps, _kkt_violation(H, c, b, l1) <= KKT_TOLERANCE


def fit_elastic_net(
    X: np.ndarray,
    y: np.ndarray,
    config: Optional[ElasticNetConfig] = None,
    feature_names: Optional[Sequence[str]] = None,
    initial: Optional[Tuple[float, Sequence[float]]] = None,
) -> LogisticModel:
    """
    Fit an elastic-net logistic regression on standardized inputs.

    Each IRLS step solves the penalized weighted least-squares problem with
    signed active-set steps (coordinate descent as fallback), then accepts
    the move with step halving so the penalized objective never increases.
    The fit is converged when an IRLS step changes no coefficient by
    `tolerance` or more; `max_iterations` caps the total number of inner
    steps and coordinate sweeps.

    Args:
        X: (n, p) standardized design
        y: Binary labels
        config: Penalty and convergence settings
        feature_names: Column names (default x0..x{p-1})
        initial: Warm start as (intercept, coefficients)

    Raises:
        FitError: y holds a single class
        DataValidationError: non-finite or misshapen input
    """
    config = config or ElasticNetConfig()
    X, y = _as_design(X, y)
    n, p = X.shape
    if n == 0 or y.min() == y.max():
        raise FitError("elastic-net fit needs both classes in y")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise DataValidationError(f"{len(names)} feature names for {p} columns")

    l1 = config.lambda_ * config.alpha
    l2 = config.lambda_ * (1.0 - config.alpha)
    X1 = np.hstack([np.ones((n, 1)), X])
    ridge = np.diag(np.r_[0.0, np.ones(p)])

    beta = np.zeros(p + 1)
    if initial is not None:
        beta[0] = float(initial[0])
        beta[1:] = np.asarray(initial[1], dtype=float)
    else:
        mean = y.mean()
        beta[0] = np.log(mean / (1.0 - mean))

    current = _objective(beta, X1, y, l1, l2)
    path = [current]
    sweeps = 0
    outer = 0
    converged = False

    while sweeps < config.max_iterations:
        outer += 1
        eta = X1 @ beta
        prob = expit(eta)
        w = np.maximum(prob * (1.0 - prob), WEIGHT_FLOOR)
        z = eta + (y - prob) / w
        G = (X1.T * w) @ X1 / n
        c = X1.T @ (w * z) / n

        H = G + l2 * ridge
        target, used, inner_done = _active_set_solve(H, c, beta, l1, config.max_iterations - sweeps)
        sweeps += used
        if not inner_done and sweeps < config.max_iterations:
            target, used, inner_done = _coordinate_descent(
                G, c, target, l1, l2, config.tolerance, config.max_iterations - sweeps
            )
            sweeps += used
        direction = target - beta
        step_size = float(np.max(np.abs(direction)))

        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            candidate = beta + step * direction
            value = _objective(candidate, X1, y, l1, l2)
            if value <= current:
                beta, current, accepted = candidate, value, True
                break
            step *= 0.5
        path.append(current)

        if step_size < config.tolerance and inner_done:
            converged = True
            break
        if not accepted:
            # No descent along the IRLS direction; beta is a fixed point up to rounding
            converged = inner_done and step_size < np.sqrt(config.tolerance)
            break

    if not converged:
        logger.warning(
            "Elastic-net fit did not converge",
            extra={"extra_data": {"sweeps": sweeps, "outer": outer, "lambda": config.lambda_, "alpha": config.alpha}},
        )

    return LogisticModel(
        feature_names=names,
        intercept=float(beta[0]),
        coefficients=beta[1:].tolist(),
        config=config,
        converged=converged,
        iterations=sweeps,
        objective_path=path,
    )


def _linear_predictor(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise DataValidationError(
            f"input of shape {X.shape} does not match {len(model.coefficients)} model features"
        )
    return model.intercept + X @ np.asarray(model.coefficients)


def predict_proba_matrix(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    """Clamped probabilities for every row of X."""
    return np.clip(expit(_linear_predictor(model, X)), PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)


def predict_proba(model: LogisticModel, x: Sequence[float]) -> float:
    """sigmoid(intercept + beta.x), clamped to [1e-12, 1 - 1e-12]."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataValidationError(f"expected a feature vector, got shape {x.shape}")
    return float(predict_proba_matrix(model, x[None, :])[0])


def penalized_objective(
    model: LogisticModel,
    X: np.ndarray,
    y: np.ndarray,
    config: Optional[ElasticNetConfig] = None,
) -> float:
    """Exact value of the fitted objective at the model's parameters."""
    config = config or model.config
    X, y = _as_design(X, y)
    if X.shape[1] != len(model.coefficients):
        raise DataValidationError(f"X has {X.shape[1]} columns, model has {len(model.coefficients)}")
    beta = np.concatenate([[model.intercept], model.coefficients])
    X1 = np.hstack([np.ones((X.shape[0], 1)), X])
    return _objective(beta, X1, y, config.lambda_ * config.alpha, config.lambda_ * (1.0 - config.alpha))


def smooth_gradient(model: LogisticModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the mean logistic loss; index 0 is the intercept."""
    X, y = _as_design(X, y)
    prob = expit(_linear_predictor(model, X))
    X1 = np.hstack([np.ones((X.shape[0], 1)), X])
    return X1.T @ (prob - y) / X.shape[0]
