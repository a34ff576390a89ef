"""
Feature importance for cascade-uq.

Coefficient aggregation averages base-model coefficients within each fold's
ensemble and then averages their absolute values across folds. Permutation
importance measures the AUC drop when one preprocessed column is shuffled.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from src.core.cascade import predict_cascade_batch
from src.core.errors import DataValidationError
from src.core.models import CascadeModel, Ensemble, FeatureImportance, ImportanceReport, ScalerParams
from src.core.preprocess import transform
from src.core.stats import auc
from src.core.uq_ensemble import predict_uncertain_batch

logger = logging.getLogger(__name__)


def _universe(ensembles: Sequence[Ensemble], universe: Optional[Sequence[str]]) -> List[str]:
    if universe is not None:
        return list(universe)
    names: List[str] = []
    for ensemble in ensembles:
        names.extend(f for f in ensemble.features if f not in names)
    return names


def build_report(
    method: str,
    per_fold: np.ndarray,
    universe: Sequence[str],
    model: Optional[str] = None,
    absolute: bool = False,
) -> ImportanceReport:
    """
    Rank features by their overall value across folds.

    Args:
        per_fold: (folds, features) importance values
        absolute: Average |value| across folds instead of the signed value

    Ranks are descending; equal values keep universe order.
    """
    per_fold = np.atleast_2d(np.asarray(per_fold, dtype=float))
    overall = np.mean(np.abs(per_fold) if absolute else per_fold, axis=0)
    order = sorted(range(len(universe)), key=lambda j: -overall[j])
    entries = [
        FeatureImportance(
            feature=universe[j],
            per_fold=per_fold[:, j].tolist(),
            overall=float(overall[j]),
            rank=rank,
        )
        for rank, j in enumerate(order, start=1)
    ]
    return ImportanceReport(method=method, model=model, entries=entries)


def coefficient_importance(
    ensembles: Sequence[Ensemble],
    universe: Optional[Sequence[str]] = None,
    model: Optional[str] = None,
) -> ImportanceReport:
    """
    Per fold: mean coefficient across base models. Overall: mean of absolute
    per-fold values. Features an ensemble never saw contribute 0.

    Raises:
        DataValidationError: no ensembles given
    """
    if not ensembles:
        raise DataValidationError("coefficient_importance needs at least one ensemble")
    names = _universe(ensembles, universe)
    index = {name: j for j, name in enumerate(names)}
    per_fold = np.zeros((len(ensembles), len(names)))
    for fold, ensemble in enumerate(ensembles):
        means = np.mean([m.coefficients for m in ensemble.models], axis=0)
        for name, value in zip(ensemble.features, means):
            if name in index:
                per_fold[fold, index[name]] = value
    return build_report("coefficient", per_fold, names, model, absolute=True)


class PermutationTarget(Protocol):
    """A fitted predictor evaluated on preprocessed column blocks."""

    def blocks(self, X: np.ndarray, columns: Sequence[str]) -> List[np.ndarray]:
        ...

    def locate(self, feature: str) -> List[Tuple[int, int]]:
        ...

    def predict(self, blocks: List[np.ndarray]) -> np.ndarray:
        ...


def _columns(X: np.ndarray, columns: Sequence[str], wanted: Sequence[str]) -> np.ndarray:
    index = {name: j for j, name in enumerate(columns)}
    missing = [w for w in wanted if w not in index]
    if missing:
        raise DataValidationError(f"input lacks columns: {', '.join(missing)}")
    return np.asarray(X, dtype=float)[:, [index[w] for w in wanted]]


@dataclass(frozen=True)
class EnsembleTarget:
    """One ensemble with its train-fitted scaler."""
    ensemble: Ensemble
    scaler: ScalerParams

    def blocks(self, X: np.ndarray, columns: Sequence[str]) -> List[np.ndarray]:
        return [transform(self.scaler, _columns(X, columns, self.scaler.features))]

    def locate(self, feature: str) -> List[Tuple[int, int]]:
        if feature in self.ensemble.features:
            return [(0, self.ensemble.features.index(feature))]
        return []

    def predict(self, blocks: List[np.ndarray]) -> np.ndarray:
        return predict_uncertain_batch(self.ensemble, blocks[0]).mean


@dataclass(frozen=True)
class CascadeTarget:
    """The gated model; a feature used by both stages is shuffled in both with one permutation."""
    model: CascadeModel
    scaler1: ScalerParams
    scaler2: ScalerParams

    def blocks(self, X: np.ndarray, columns: Sequence[str]) -> List[np.ndarray]:
        return [
            transform(self.scaler1, _columns(X, columns, self.scaler1.features)),
            transform(self.scaler2, _columns(X, columns, self.scaler2.features)),
        ]

    def locate(self, feature: str) -> List[Tuple[int, int]]:
        found = []
        for block, features in enumerate((self.model.ensemble1.features, self.model.ensemble2.features)):
            if feature in features:
                found.append((block, features.index(feature)))
        return found

    def predict(self, blocks: List[np.ndarray]) -> np.ndarray:
        return predict_cascade_batch(self.model, blocks[0], blocks[1]).final


def permutation_drops(
    target: PermutationTarget,
    X: np.ndarray,
    y: Sequence[int],
    columns: Sequence[str],
    universe: Sequence[str],
    repeats: int = 5,
    seed: int = 0,
) -> np.ndarray:
    """
    Mean AUC drop per universe feature over `repeats` seeded shuffles.

    Shuffling happens after preprocessing. Features the target does not use
    get exactly 0. Feature j draws from SeedSequence([seed, j]).
    """
    if repeats < 1:
        raise DataValidationError(f"repeats must be >= 1, got {repeats}")
    y = np.asarray(y, dtype=int)
    blocks = target.blocks(X, columns)
    baseline = auc(y, target.predict(blocks))
    drops = np.zeros(len(universe))
    for j, feature in enumerate(universe):
        places = target.locate(feature)
        if not places:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, j]))
        total = 0.0
        for _ in range(repeats):
            order = rng.permutation(len(y))
            shuffled = [b.copy() for b in blocks]
            for block, col in places:
                shuffled[block][:, col] = blocks[block][order, col]
            total += baseline - auc(y, target.predict(shuffled))
        drops[j] = total / repeats
    return drops


def permutation_importance(
    target: PermutationTarget,
    X: np.ndarray,
    y: Sequence[int],
    columns: Sequence[str],
    universe: Optional[Sequence[str]] = None,
    repeats: int = 5,
    seed: int = 0,
    model: Optional[str] = None,
) -> ImportanceReport:
    """Single-fold permutation report; `universe` defaults to `columns`."""
    names = list(universe) if universe is not None else list(columns)
    drops = permutation_drops(target, X, y, columns, names, repeats, seed)
    return build_report("permutation", drops[None, :], names, model)


def permutation_importance_folds(
    folds: Sequence[Tuple[PermutationTarget, np.ndarray, Sequence[int]]],
    columns: Sequence[str],
    universe: Sequence[str],
    repeats: int = 5,
    seed: int = 0,
    model: Optional[str] = None,
) -> ImportanceReport:
    """Permutation importance per fold (on that fold's test rows), averaged across folds."""
    if not folds:
        raise DataValidationError("permutation importance needs at least one fold")
    per_fold = np.vstack([
        permutation_drops(target, X, y, columns, universe, repeats, seed)
        for target, X, y in folds
    ])
    logger.info(
        f"Permutation importance over {len(folds)} folds",
        extra={"extra_data": {"model": model, "repeats": repeats}},
    )
    return build_report("permutation", per_fold, list(universe), model)
