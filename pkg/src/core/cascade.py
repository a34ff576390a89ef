"""
Two-stage uncertainty-gated classification.

Ensemble 1 scores every sample from stage-1 features; a sample is escalated to
Ensemble 2 (stage-1 + stage-2 features) when its base-model spread is above the
std threshold or its mean probability sits within the midway threshold of 0.5.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import AcquisitionRequiredError, ConfigError, DataValidationError
from src.core.models import (
    CascadeModel,
    CascadeThresholds,
    Ensemble,
    PatientRecord,
    RoutingDecision,
    StagePreprocessor,
    ThresholdCandidate,
    ThresholdGrid,
    UncertainPrediction,
)
from src.core.preprocess import transform
from src.core.stats import auc
from src.core.uq_ensemble import BatchPrediction, predict_uncertain, predict_uncertain_batch

logger = logging.getLogger(__name__)

MIDPOINT = 0.5
S_RANGE = (0.5, 9.0)


def route(
    pred: UncertainPrediction,
    thresholds: CascadeThresholds,
    record_id: Optional[str] = None,
) -> RoutingDecision:
    """
    Decide whether a stage-1 prediction is kept or escalated.

    Escalates iff std > std_threshold (checked first) or |mean - 0.5| < midway_threshold.
    For escalated samples the final probability stays provisional (the stage-1
    mean) until stage 2 runs.
    """
    if pred.std > thresholds.std_threshold:
        stage, reason = 2, "high_std"
    elif abs(pred.mean - MIDPOINT) < thresholds.midway_threshold:
        stage, reason = 2, "near_midway"
    else:
        stage, reason = 1, "low_uncertainty"
    return RoutingDecision(
        record_id=record_id,
        stage_used=stage,
        stage1_mean=pred.mean,
        stage1_std=pred.std,
        final_probability=pred.mean,
        reason=reason,
    )


def escalation_mask(mean: np.ndarray, std: np.ndarray, std_threshold: float, midway_threshold: float) -> np.ndarray:
    """Vectorized escalation predicate of `route`."""
    return (np.asarray(std) > std_threshold) | (np.abs(np.asarray(mean) - MIDPOINT) < midway_threshold)


def escalation_reasons(mean: np.ndarray, std: np.ndarray, thresholds: CascadeThresholds) -> List[str]:
    high_std = np.asarray(std) > thresholds.std_threshold
    near = np.abs(np.asarray(mean) - MIDPOINT) < thresholds.midway_threshold
    return [
        "high_std" if h else ("near_midway" if m else "low_uncertainty")
        for h, m in zip(high_std, near)
    ]


def _stage_vector(record: PatientRecord, preprocessor: StagePreprocessor) -> np.ndarray:
    x = record.vector(preprocessor.features)
    return transform(preprocessor.scaler, x[None, :])[0]


def predict_cascade(
    model: CascadeModel,
    record: PatientRecord,
    preprocessors: Dict[int, StagePreprocessor],
) -> RoutingDecision:
    """
    Route one record through the cascade.

    Args:
        model: Fitted ensembles and thresholds
        record: Stage-2 values are only read if the record is escalated
        preprocessors: Stage number -> train-fitted scaler for that stage's features

    Raises:
        AcquisitionRequiredError: escalated but stage-2 features were never acquired
    """
    first = predict_uncertain(model.ensemble1, _stage_vector(record, preprocessors[1]))
    decision = route(first, model.thresholds, record.id)
    if decision.stage_used == 1:
        return decision

    missing = [name for name in preprocessors[2].features if not record.has(name)]
    if missing:
        raise AcquisitionRequiredError(record.id, missing)
    second = predict_uncertain(model.ensemble2, _stage_vector(record, preprocessors[2]))
    return decision.model_copy(update={"stage2_mean": second.mean, "final_probability": second.mean})


@dataclass(frozen=True)
class CascadeBatch:
    """Cascade output for a matrix of samples."""
    stage1: BatchPrediction
    stage2: Optional[BatchPrediction]
    escalated: np.ndarray
    reasons: List[str]
    final: np.ndarray

    @property
    def escalation_fraction(self) -> float:
        return float(self.escalated.mean()) if len(self.escalated) else 0.0


def predict_cascade_batch(
    model: CascadeModel,
    T1: np.ndarray,
    T2: Optional[np.ndarray] = None,
    ids: Optional[Sequence[str]] = None,
) -> CascadeBatch:
    """
    Cascade predictions for preprocessed stage matrices.

    Kept samples carry the stage-1 mean bit for bit; escalated ones carry the
    Ensemble 2 mean. T2 may be omitted only when nothing escalates.
    """
    first = predict_uncertain_batch(model.ensemble1, T1)
    mask = escalation_mask(first.mean, first.std, model.thresholds.std_threshold, model.thresholds.midway_threshold)
    reasons = escalation_reasons(first.mean, first.std, model.thresholds)
    if T2 is None:
        if mask.any():
            index = int(np.flatnonzero(mask)[0])
            record_id = ids[index] if ids is not None else f"row {index}"
            raise AcquisitionRequiredError(record_id, model.ensemble2.features)
        return CascadeBatch(stage1=first, stage2=None, escalated=mask, reasons=reasons, final=first.mean.copy())
    second = predict_uncertain_batch(model.ensemble2, T2)
    if len(second.mean) != len(first.mean):
        raise DataValidationError("stage matrices must have the same rows")
    final = np.where(mask, second.mean, first.mean)
    return CascadeBatch(stage1=first, stage2=second, escalated=mask, reasons=reasons, final=final)


def weight_function(f: float, s: float) -> float:
    """Retention weight f^(1/s): 1 at f = 1, increasing in f and in s."""
    if not 0.0 <= f <= 1.0:
        raise ConfigError(f"retained fraction must lie in [0, 1], got {f}")
    if not S_RANGE[0] <= s <= S_RANGE[1]:
        raise ConfigError(f"scaling weight must lie in [0.5, 9], got {s}")
    return f ** (1.0 / s)


def scaled_weighted_auc(
    labels: Sequence[int],
    probabilities: Sequence[float],
    retained_fraction: float,
    s: float,
) -> float:
    """Plain AUC times weight_function(retained_fraction, s)."""
    return auc(labels, probabilities) * weight_function(retained_fraction, s)


@dataclass(frozen=True)
class ValidationSlice:
    """Preprocessed stage matrices and labels of one validation slice."""
    T1: np.ndarray
    T2: np.ndarray
    labels: np.ndarray


def _threshold_table(
    ensemble1: Ensemble,
    ensemble2: Ensemble,
    data: ValidationSlice,
    grid: ThresholdGrid,
) -> List[Tuple[float, float, float, float]]:
    """(std_threshold, midway_threshold, final AUC, retained fraction) for every grid cell."""
    first = predict_uncertain_batch(ensemble1, data.T1)
    second = predict_uncertain_batch(ensemble2, data.T2)
    table = []
    for sigma in grid.std_thresholds:
        for tau in grid.midway_thresholds:
            mask = escalation_mask(first.mean, first.std, sigma, tau)
            final = np.where(mask, second.mean, first.mean)
            table.append((sigma, tau, auc(data.labels, final), 1.0 - float(mask.mean())))
    return table


def threshold_candidates(
    ensemble1: Ensemble,
    ensemble2: Ensemble,
    val1: ValidationSlice,
    val2: ValidationSlice,
    s_grid: Sequence[float],
    grid: ThresholdGrid,
) -> List[ThresholdCandidate]:
    """
    Best (std, midway) thresholds on validation slice 1 for each scaling weight s.

    Val1 cells are ranked by scaled weighted AUC, then larger retained fraction,
    larger std threshold and smaller midway threshold. Each winner is then scored
    by plain AUC on validation slice 2.

    Raises:
        DegenerateDataError: a validation slice holds a single class
    """
    val1_table = _threshold_table(ensemble1, ensemble2, val1, grid)
    first2 = predict_uncertain_batch(ensemble1, val2.T1)
    second2 = predict_uncertain_batch(ensemble2, val2.T2)

    candidates = []
    for s in s_grid:
        def preference(row):
            sigma, tau, value, retained = row
            return (value * weight_function(retained, s), retained, sigma, -tau)

        sigma, tau, value, retained = max(val1_table, key=preference)
        mask = escalation_mask(first2.mean, first2.std, sigma, tau)
        val2_auc = auc(val2.labels, np.where(mask, second2.mean, first2.mean))
        candidates.append(ThresholdCandidate(
            scaling_weight=s,
            std_threshold=sigma,
            midway_threshold=tau,
            val1_score=value * weight_function(retained, s),
            retained_fraction=retained,
            val2_auc=val2_auc,
        ))
    return candidates


def select_candidate(candidates: Sequence[ThresholdCandidate]) -> CascadeThresholds:
    """Highest val2 AUC wins; ties go to the smaller scaling weight."""
    if not candidates:
        raise ConfigError("no threshold candidates to select from")
    best = max(candidates, key=lambda c: (c.val2_auc, -c.scaling_weight))
    return CascadeThresholds(
        std_threshold=best.std_threshold,
        midway_threshold=best.midway_threshold,
        scaling_weight=best.scaling_weight,
    )


def tune_thresholds(
    ensemble1: Ensemble,
    ensemble2: Ensemble,
    val1: ValidationSlice,
    val2: ValidationSlice,
    s_grid: Sequence[float],
    grid: ThresholdGrid,
) -> CascadeThresholds:
    """Tune (std, midway) per s on val1 and pick s by val2 AUC."""
    thresholds = select_candidate(threshold_candidates(ensemble1, ensemble2, val1, val2, s_grid, grid))
    logger.info(
        "Cascade thresholds tuned",
        extra={"extra_data": thresholds.to_dict()},
    )
    return thresholds
