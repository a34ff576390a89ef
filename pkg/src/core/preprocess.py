"""
Preprocessing for cascade-uq.
Train-only standardization, spatial sign projection and recursive feature elimination.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.cohort import inner_fold_indices
from src.core.elastic_glm import fit_elastic_net, predict_proba_matrix
from src.core.errors import DegenerateDataError, FitError, SchemaError
from src.core.models import ElasticNetConfig, EliminationStep, FeatureSubset, InnerCVConfig, ScalerParams

logger = logging.getLogger(__name__)

# Columns with a smaller sample sd are treated as constant
ZERO_VARIANCE = 1e-12


def fit_scaler(X: np.ndarray, features: Sequence[str]) -> ScalerParams:
    """
    Column means and sample standard deviations of the training rows.

    Constant columns get scale 1.

    Raises:
        FitError: fewer than two rows
        SchemaError: column count differs from `features`
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise FitError(f"fit_scaler needs at least 2 rows, got shape {X.shape}")
    if X.shape[1] != len(features):
        raise SchemaError(f"matrix has {X.shape[1]} columns for {len(features)} features")
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    scale = np.where(scale > ZERO_VARIANCE, scale, 1.0)
    return ScalerParams(features=list(features), center=center.tolist(), scale=scale.tolist())


def _check_columns(params: ScalerParams, X: np.ndarray, features: Optional[Sequence[str]]) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if features is not None and list(features) != params.features:
        raise SchemaError(f"columns {list(features)} do not match scaler features {params.features}")
    if X.shape[1] != len(params.features):
        raise SchemaError(f"matrix has {X.shape[1]} columns, scaler expects {len(params.features)}")
    return X


def standardize(params: ScalerParams, X: np.ndarray, features: Optional[Sequence[str]] = None) -> np.ndarray:
    """Center and scale columns with fitted parameters."""
    X = _check_columns(params, X, features)
    return (X - np.asarray(params.center)) / np.asarray(params.scale)


def spatial_sign(Z: np.ndarray) -> np.ndarray:
    """Project each row onto the unit sphere; all-zero rows stay zero."""
    Z = np.asarray(Z, dtype=float)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    return np.divide(Z, norms, out=np.zeros_like(Z), where=norms > 0)


def transform(params: ScalerParams, X: np.ndarray, features: Optional[Sequence[str]] = None) -> np.ndarray:
    """Standardize with train-fitted parameters, then apply the spatial sign."""
    return spatial_sign(standardize(params, X, features))


def _evaluate_subset(
    S: np.ndarray,
    y: np.ndarray,
    folds: List[np.ndarray],
    config: ElasticNetConfig,
) -> Tuple[float, np.ndarray]:
    """Mean held-out AUC and mean |coefficient| of one candidate subset."""
    from src.core.stats import auc

    scores = []
    magnitude = np.zeros(S.shape[1])
    everything = np.arange(len(y))
    for held_out in folds:
        train = np.setdiff1d(everything, held_out, assume_unique=True)
        model = fit_elastic_net(S[train], y[train], config)
        scores.append(auc(y[held_out], predict_proba_matrix(model, S[held_out])))
        magnitude += np.abs(np.asarray(model.coefficients))
    return float(np.mean(scores)), magnitude / len(folds)


def rfe_select(
    Z: np.ndarray,
    y: np.ndarray,
    features: Sequence[str],
    config: ElasticNetConfig,
    inner: InnerCVConfig,
    candidate_sizes: Optional[Sequence[int]] = None,
) -> FeatureSubset:
    """
    Recursive feature elimination on standardized training data.

    Each step fits the base model on the spatial sign projection of the active
    subset across inner folds, scores it by mean held-out AUC and drops the
    feature with the smallest mean |coefficient| (earliest on ties). The subset
    size with the best score among `candidate_sizes` wins, smaller on ties.

    Args:
        Z: Standardized training matrix, columns aligned with `features`
        y: Binary labels
        features: Column names
        config: Base elastic-net configuration
        inner: Inner cross-validation folds and seed
        candidate_sizes: Allowed subset sizes (default: every size); clipped to [1, #features]

    Raises:
        FitError: no features, or inner CV infeasible even after reducing folds
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=int)
    features = list(features)
    p = len(features)
    if p == 0 or Z.shape[1] != p:
        raise FitError(f"rfe_select needs a non-empty matrix matching {p} features")

    if candidate_sizes is None:
        sizes = set(range(1, p + 1))
    else:
        sizes = {min(max(int(s), 1), p) for s in candidate_sizes}
    if sizes == {p}:
        return FeatureSubset(features=features)

    try:
        folds = inner_fold_indices(y, inner.folds, inner.seed)
    except DegenerateDataError as exc:
        raise FitError(f"RFE inner cross-validation infeasible: {exc}") from exc

    active = list(range(p))
    removed: List[str] = []
    size_scores = {}
    smallest = min(sizes)
    while True:
        score, magnitude = _evaluate_subset(spatial_sign(Z[:, active]), y, folds, config)
        size_scores[len(active)] = score
        if len(active) <= smallest:
            break
        drop = int(np.argmin(magnitude))
        removed.append(features[active[drop]])
        del active[drop]

    best = max(sorted(sizes), key=lambda s: (size_scores[s], -s))
    dropped = removed[:p - best]
    trace = [
        EliminationStep(removed=name, remaining=p - i - 1, score=size_scores[p - i - 1])
        for i, name in enumerate(dropped)
    ]
    kept = [name for name in features if name not in dropped]
    logger.debug(
        f"RFE kept {len(kept)} of {p} features",
        extra={"extra_data": {"kept": kept, "score": size_scores[best]}},
    )
    return FeatureSubset(features=kept, trace=trace, size_scores=size_scores)
