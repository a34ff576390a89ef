"""
Pseudo-bootstrapped elastic-net ensembles.
Each base model sees a seeded row subsample drawn without replacement; the spread
of base-model probabilities is the uncertainty estimate.
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.cohort import inner_fold_indices
from src.core.elastic_glm import fit_elastic_net, predict_proba_matrix
from src.core.errors import DataValidationError, DegenerateDataError, FitError
from src.core.models import (
    ElasticNetConfig,
    Ensemble,
    EnsembleConfig,
    EnsembleGrid,
    InnerCVConfig,
    LogisticModel,
    UncertainPrediction,
)

logger = logging.getLogger(__name__)

MIN_SUBSAMPLE = 10
MAX_REDRAWS = 100


@dataclass(frozen=True)
class BatchPrediction:
    """Row-wise ensemble output: mean, sample std and the (n, M) probability matrix."""
    mean: np.ndarray
    std: np.ndarray
    probabilities: np.ndarray


def subsample_size(n: int, fraction: float) -> int:
    """ceil(fraction * n), robust to binary rounding of the product."""
    return int(math.ceil(round(fraction * n, 9)))


def draw_subsample(y: np.ndarray, size: int, seed: int, member: int) -> np.ndarray:
    """
    Sorted row indices for base model `member`, drawn without replacement.

    Depends only on (seed, member), so the first M members of a larger ensemble
    are the members of the smaller one. Single-class draws are redrawn.

    Raises:
        FitError: no two-class subsample after MAX_REDRAWS redraws
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, member]))
    n = len(y)
    for _ in range(MAX_REDRAWS + 1):
        rows = np.sort(rng.choice(n, size=size, replace=False))
        picked = y[rows]
        if picked.min() != picked.max():
            return rows
    raise FitError(f"model {member}: every subsample of {size}/{n} rows held a single class")


def _check_inputs(X: np.ndarray, y: np.ndarray, features: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] != len(features):
        raise DataValidationError(f"matrix of shape {X.shape} does not match {len(features)} features")
    if len(y) != X.shape[0]:
        raise DataValidationError("labels must align with rows")
    if len(y) == 0 or y.min() == y.max():
        raise FitError("ensemble training data must contain both classes")
    return X, y


def _fit_members(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[str],
    base: ElasticNetConfig,
    subsamples: Sequence[np.ndarray],
    warm: Optional[List[Optional[LogisticModel]]] = None,
) -> List[LogisticModel]:
    models = []
    for member, rows in enumerate(subsamples):
        start = None
        if warm is not None and warm[member] is not None:
            start = (warm[member].intercept, warm[member].coefficients)
        try:
            models.append(fit_elastic_net(X[rows], y[rows], base, features, initial=start))
        except FitError as exc:
            raise FitError(f"base model {member}: {exc}") from exc
    return models


def fit_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[str],
    config: EnsembleConfig,
) -> Ensemble:
    """
    Fit M base learners on ceil(phi * n) row subsamples.

    Args:
        X: Preprocessed training matrix, columns aligned with `features`
        y: Binary labels
        features: The ensemble's feature subset
        config: M, phi, base elastic-net settings and seed

    Raises:
        FitError: phi * n < 10, single-class data or persistent single-class subsamples
    """
    X, y = _check_inputs(X, y, features)
    size = subsample_size(len(y), config.sample_fraction)
    if size < MIN_SUBSAMPLE:
        raise FitError(f"subsample of {size} rows is below the minimum of {MIN_SUBSAMPLE}")
    subsamples = [draw_subsample(y, size, config.seed, m) for m in range(config.n_models)]
    models = _fit_members(X, y, features, config.base, subsamples)
    return Ensemble(
        models=models,
        subsamples=[rows.tolist() for rows in subsamples],
        config=config,
        features=list(features),
    )


def _aggregate(P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = np.clip(P.mean(axis=1), P.min(axis=1), P.max(axis=1))
    if P.shape[1] > 1:
        std = P.std(axis=1, ddof=1)
    else:
        std = np.zeros(P.shape[0])
    return mean, std


def predict_uncertain_batch(ensemble: Ensemble, X: np.ndarray) -> BatchPrediction:
    """Mean and sample std of base-model probabilities for every row of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(ensemble.features):
        raise DataValidationError(
            f"input of shape {X.shape} does not match {len(ensemble.features)} ensemble features"
        )
    P = np.column_stack([predict_proba_matrix(model, X) for model in ensemble.models])
    mean, std = _aggregate(P)
    return BatchPrediction(mean=mean, std=std, probabilities=P)


def predict_uncertain(ensemble: Ensemble, x: Sequence[float]) -> UncertainPrediction:
    """Aggregated probability, sample std (0 when M = 1) and per-model probabilities."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataValidationError(f"expected a feature vector, got shape {x.shape}")
    batch = predict_uncertain_batch(ensemble, x[None, :])
    return UncertainPrediction(
        mean=float(batch.mean[0]),
        std=float(batch.std[0]),
        probabilities=batch.probabilities[0].tolist(),
    )


def tune_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    features: Sequence[str],
    grid: EnsembleGrid,
    inner: InnerCVConfig,
    seed: int = 0,
) -> EnsembleConfig:
    """
    Grid search (M, phi, alpha, lambda) by mean inner-CV AUC of the aggregated probability.

    The largest M is fit once per (inner fold, phi, alpha) along a descending
    lambda path with warm starts; every smaller M is scored on the first M
    members. Cells whose subsample falls below 10 rows, or cannot hold both
    classes, in any inner fold are skipped. Ties go to smaller M, then larger
    phi, larger lambda and larger alpha.

    Args:
        X: Preprocessed training matrix
        y: Binary labels
        features: Column names of X
        grid: Candidate values
        inner: Inner cross-validation settings
        seed: Subsample seed shared with the final fit

    Raises:
        FitError: inner CV infeasible or no feasible grid cell
    """
    from src.core.stats import auc

    X, y = _check_inputs(X, y, features)
    try:
        folds = inner_fold_indices(y, inner.folds, inner.seed)
    except DegenerateDataError as exc:
        raise FitError(f"ensemble tuning infeasible: {exc}") from exc

    sizes = sorted(set(grid.n_models))
    largest = sizes[-1]
    lambdas = sorted(set(grid.lambdas), reverse=True)
    scores: Dict[Tuple[int, float, float, float], List[float]] = {}
    infeasible = set()
    everything = np.arange(len(y))

    for held_out in folds:
        train = np.setdiff1d(everything, held_out, assume_unique=True)
        X_train, y_train = X[train], y[train]
        for fraction in grid.sample_fractions:
            if fraction in infeasible:
                continue
            size = subsample_size(len(train), fraction)
            try:
                if size < MIN_SUBSAMPLE:
                    raise FitError(f"{size} rows")
                subsamples = [draw_subsample(y_train, size, seed, m) for m in range(largest)]
            except FitError:
                infeasible.add(fraction)
                continue
            for alpha in grid.alphas:
                warm: List[Optional[LogisticModel]] = [None] * largest
                for lam in lambdas:
                    base = ElasticNetConfig(alpha=alpha, lambda_=lam)
                    warm = _fit_members(X_train, y_train, features, base, subsamples, warm)
                    P = np.column_stack([predict_proba_matrix(m, X[held_out]) for m in warm])
                    for count in sizes:
                        mean, _ = _aggregate(P[:, :count])
                        scores.setdefault((count, fraction, alpha, lam), []).append(
                            auc(y[held_out], mean)
                        )

    cells = {
        key: float(np.mean(values)) for key, values in scores.items()
        if key[1] not in infeasible and len(values) == len(folds)
    }
    if not cells:
        raise FitError("no feasible ensemble grid cell (subsamples below 10 rows in every cell)")

    def preference(key):
        count, fraction, alpha, lam = key
        return (cells[key], -count, fraction, lam, alpha)

    count, fraction, alpha, lam = max(sorted(cells), key=preference)
    logger.info(
        f"Ensemble tuned: M={count}, phi={fraction}, alpha={alpha}, lambda={lam}",
        extra={"extra_data": {"inner_auc": cells[(count, fraction, alpha, lam)], "cells": len(cells)}},
    )
    return EnsembleConfig(
        n_models=count,
        sample_fraction=fraction,
        base=ElasticNetConfig(alpha=alpha, lambda_=lam),
        seed=seed,
        tuning_score=cells[(count, fraction, alpha, lam)],
    )
