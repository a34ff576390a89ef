"""
Nested cross-validation experiment for cascade-uq.

Per outer fold: slice two validation sets from the training side; on the
remaining core rows fit the stage-1 and stage-2 scalers, RFE subsets and tuned
ensembles; tune cascade thresholds on the validation slices; evaluate the
cascade, both ensembles and the guideline on the untouched test fold.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.core.cascade import (
    ValidationSlice,
    predict_cascade_batch,
    select_candidate,
    threshold_candidates,
)
from src.core.cohort import slice_validation, stratified_kfold
from src.core.errors import DataValidationError, FitError, FoldError, SchemaError
from src.core.guideline import guideline_batch
from src.core.models import (
    MODEL_NAMES,
    CascadeModel,
    Cohort,
    EscalationSummary,
    ExperimentConfig,
    ExperimentReport,
    FoldArtifacts,
    FoldPlan,
    FoldResult,
    InnerCVConfig,
    MeanSd,
    ModelMetrics,
    PairwiseComparison,
    SamplePrediction,
    StageArtifacts,
    TestResult,
)
from src.core.preprocess import fit_scaler, rfe_select, standardize, transform
from src.core.stats import auc, classification_metrics, delong_ci, delong_paired_test, mcnemar, metrics_from_predictions
from src.core.uq_ensemble import fit_ensemble, tune_ensemble

logger = logging.getLogger(__name__)

METRICS = ("auc", "accuracy", "sensitivity", "specificity")
SCORED_MODELS = ("multi_stage", "ensemble1", "ensemble2")
PURPOSES = {"validation": 0, "rfe": 1, "tuning": 2, "ensemble": 3, "resample": 4}
MAX_RESAMPLE_REDRAWS = 100


def derive_seed(master: int, fold: int, stage: int, purpose: str, *extra: int) -> int:
    """Independent seed per (master, fold, stage, purpose), stable across processes."""
    entropy = [master, fold, stage, PURPOSES[purpose], *extra]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@contextmanager
def _stage(fold: int, name: str) -> Iterator[None]:
    try:
        yield
    except FoldError:
        raise
    except Exception as exc:
        raise FoldError(fold, name, exc) from exc


@dataclass(frozen=True)
class ExperimentRun:
    """A report plus the fitted artifacts of every successful fold (None for failed ones)."""
    report: ExperimentReport
    artifacts: List[Optional[FoldArtifacts]]


def _fit_stage(
    X: np.ndarray,
    y: np.ndarray,
    features: List[str],
    config: ExperimentConfig,
    fold: int,
    stage: int,
) -> StageArtifacts:
    scaler = fit_scaler(X, features)
    subset = rfe_select(
        standardize(scaler, X),
        y,
        features,
        config.rfe_config,
        InnerCVConfig(folds=config.inner_folds, seed=derive_seed(config.seed, fold, stage, "rfe")),
        config.rfe_sizes,
    )
    restricted = scaler.restrict(subset.features)
    columns = [features.index(name) for name in subset.features]
    T = transform(restricted, X[:, columns])
    tuned = tune_ensemble(
        T,
        y,
        subset.features,
        config.ensemble_grid,
        InnerCVConfig(folds=config.inner_folds, seed=derive_seed(config.seed, fold, stage, "tuning")),
        seed=derive_seed(config.seed, fold, stage, "ensemble"),
    )
    ensemble = fit_ensemble(T, y, subset.features, tuned)
    return StageArtifacts(scaler=restricted, subset=subset, ensemble=ensemble)


def _apply(artifacts: StageArtifacts, X: np.ndarray, features: List[str]) -> np.ndarray:
    columns = [features.index(name) for name in artifacts.scaler.features]
    return transform(artifacts.scaler, X[:, columns])


def _resample_core(core: np.ndarray, labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """ceil(fraction * |core|) rows drawn with replacement, redrawn while single-class."""
    size = int(np.ceil(round(fraction * len(core), 9)))
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESAMPLE_REDRAWS + 1):
        drawn = rng.choice(core, size=size, replace=True)
        if labels[drawn].min() != labels[drawn].max():
            return drawn
    raise FitError(f"resampled core of {size} rows held a single class in every draw")


def _model_metrics(labels: np.ndarray, probabilities: np.ndarray, threshold: float) -> ModelMetrics:
    metrics = classification_metrics(labels, probabilities, threshold)
    return ModelMetrics(
        auc=auc(labels, probabilities),
        accuracy=metrics.accuracy,
        sensitivity=metrics.sensitivity,
        specificity=metrics.specificity,
    )


def run_fold(
    cohort: Cohort,
    plan: FoldPlan,
    fold: int,
    config: ExperimentConfig,
    core_fraction: Optional[float] = None,
    resample_seed: Optional[int] = None,
) -> Tuple[FoldResult, FoldArtifacts]:
    """
    Train and evaluate one outer fold.

    Args:
        cohort: Full cohort with stage-2 data
        plan: Outer fold assignment
        fold: Fold to hold out
        config: Experiment settings
        core_fraction: When set, resample the core training rows with
            replacement at this fraction (validation slices and test fold unchanged)
        resample_seed: Seed for that resample

    Raises:
        FoldError: naming the stage that failed
    """
    schema = cohort.feature_schema
    features1 = schema.model_features(1)
    features2 = schema.model_features(2)
    X = cohort.matrix(features2)
    y = cohort.labels()
    ids = cohort.ids()
    position = {rid: i for i, rid in enumerate(ids)}

    test = np.array([position[rid] for rid in plan.fold_ids(fold)], dtype=int)
    train = np.array([i for i, rid in enumerate(ids) if plan.assignments[rid] != fold], dtype=int)

    with _stage(fold, "validation"):
        core_ids, val1_ids, val2_ids = slice_validation(
            [ids[i] for i in train],
            config.validation_sizes,
            derive_seed(config.seed, fold, 0, "validation"),
            y[train],
        )
        core = np.array([position[rid] for rid in core_ids], dtype=int)
        val1 = np.array([position[rid] for rid in val1_ids], dtype=int)
        val2 = np.array([position[rid] for rid in val2_ids], dtype=int)
        if core_fraction is not None:
            core = _resample_core(core, y, core_fraction, resample_seed or 0)

    logger.info(
        f"Fold {fold}: core={len(core)} val1={len(val1)} val2={len(val2)} test={len(test)}",
        extra={"extra_data": {"fold": fold, "core_fraction": core_fraction}},
    )

    stage1_columns = [features2.index(name) for name in features1]
    with _stage(fold, "stage1"):
        stage1 = _fit_stage(X[core][:, stage1_columns], y[core], features1, config, fold, 1)
    with _stage(fold, "stage2"):
        stage2 = _fit_stage(X[core], y[core], features2, config, fold, 2)

    def slice_of(rows: np.ndarray) -> ValidationSlice:
        return ValidationSlice(
            T1=_apply(stage1, X[rows], features2),
            T2=_apply(stage2, X[rows], features2),
            labels=y[rows],
        )

    with _stage(fold, "thresholds"):
        candidates = threshold_candidates(
            stage1.ensemble,
            stage2.ensemble,
            slice_of(val1),
            slice_of(val2),
            config.s_grid,
            config.threshold_grid,
        )
        thresholds = select_candidate(candidates)
        cascade = CascadeModel(
            ensemble1=stage1.ensemble,
            ensemble2=stage2.ensemble,
            thresholds=thresholds,
            stage1_schema=features1,
            stage2_schema=features2,
        )

    with _stage(fold, "evaluation"):
        test_slice = slice_of(test)
        test_ids = [ids[i] for i in test]
        batch = predict_cascade_batch(cascade, test_slice.T1, test_slice.T2, test_ids)
        labels = test_slice.labels
        classes, guideline = guideline_batch([cohort.records[i] for i in test])
        guide = metrics_from_predictions(labels, guideline)
        threshold = config.classification_threshold
        metrics = {
            "multi_stage": _model_metrics(labels, batch.final, threshold),
            "ensemble1": _model_metrics(labels, batch.stage1.mean, threshold),
            "ensemble2": _model_metrics(labels, batch.stage2.mean, threshold),
            "guideline": ModelMetrics(
                auc=None, accuracy=guide.accuracy, sensitivity=guide.sensitivity, specificity=guide.specificity
            ),
        }
        samples = [
            SamplePrediction(
                id=test_ids[r],
                fold=fold,
                label=int(labels[r]),
                stage_used=2 if batch.escalated[r] else 1,
                reason=batch.reasons[r],
                ensemble1_mean=float(batch.stage1.mean[r]),
                ensemble1_std=float(batch.stage1.std[r]),
                ensemble2_mean=float(batch.stage2.mean[r]),
                final_probability=float(batch.final[r]),
                guideline_class=classes[r].recommendation,
                guideline_prediction=int(guideline[r]),
            )
            for r in range(len(test_ids))
        ]

    result = FoldResult(
        fold=fold,
        thresholds=thresholds,
        threshold_candidates=candidates,
        ensemble1_config=stage1.ensemble.config,
        ensemble2_config=stage2.ensemble.config,
        stage1_features=stage1.subset.features,
        stage2_features=stage2.subset.features,
        metrics=metrics,
        escalation_fraction=batch.escalation_fraction,
        samples=samples,
    )
    artifacts = FoldArtifacts(
        fold=fold,
        test_ids=test_ids,
        stage1=stage1,
        stage2=stage2,
        thresholds=thresholds,
        threshold_candidates=candidates,
    )
    logger.info(
        f"Fold {fold} done: multi-stage AUC {metrics['multi_stage'].auc:.3f}, "
        f"escalated {batch.escalation_fraction:.1%}",
        extra={"extra_data": {"fold": fold, "thresholds": thresholds.to_dict()}},
    )
    return result, artifacts


def _run_fold_safe(
    cohort: Cohort,
    plan: FoldPlan,
    fold: int,
    config: ExperimentConfig,
    core_fraction: Optional[float] = None,
    resample_seed: Optional[int] = None,
) -> Tuple[FoldResult, Optional[FoldArtifacts]]:
    try:
        return run_fold(cohort, plan, fold, config, core_fraction, resample_seed)
    except Exception as exc:
        logger.error(f"Fold {fold} failed: {exc}", extra={"extra_data": {"fold": fold}})
        return FoldResult(fold=fold, status="failed", error=str(exc)), None


def _check_cohort(cohort: Cohort) -> None:
    if not cohort.has_stage2:
        raise SchemaError("nested CV needs stage-2 features for every record")


def run_experiment(cohort: Cohort, config: ExperimentConfig) -> ExperimentRun:
    """Run every outer fold (in parallel when n_jobs > 1) and assemble the report."""
    _check_cohort(cohort)
    plan = stratified_kfold(cohort, config.outer_folds, config.seed)
    outcomes = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_fold_safe)(cohort, plan, fold, config) for fold in range(config.outer_folds)
    )
    folds = [result for result, _ in outcomes]
    report = assemble_report(cohort.provenance, config, folds)
    return ExperimentRun(report=report, artifacts=[artifacts for _, artifacts in outcomes])


def run_nested_cv(cohort: Cohort, config: ExperimentConfig) -> ExperimentReport:
    """Full nested cross-validation experiment; failed folds are marked, not dropped."""
    return run_experiment(cohort, config).report


def mean_sd(values: Sequence[float]) -> MeanSd:
    """Mean and sample sd (0 for a single value)."""
    array = np.asarray(values, dtype=float)
    sd = float(np.std(array, ddof=1)) if len(array) > 1 else 0.0
    return MeanSd(mean=float(np.mean(array)), sd=sd, n=len(array))


def aggregate_metrics(folds: Sequence[FoldResult]) -> Dict[str, Dict[str, MeanSd]]:
    """Mean (sd) of each metric per model over successful folds."""
    aggregate: Dict[str, Dict[str, MeanSd]] = {}
    ok = [f for f in folds if f.status == "ok"]
    for model in MODEL_NAMES:
        per_metric = {}
        for metric in METRICS:
            values = [getattr(f.metrics[model], metric) for f in ok if model in f.metrics]
            values = [v for v in values if v is not None]
            if values:
                per_metric[metric] = mean_sd(values)
        if per_metric:
            aggregate[model] = per_metric
    return aggregate


@dataclass(frozen=True)
class PooledPredictions:
    """Test-fold outcomes of every successful fold, concatenated."""
    labels: np.ndarray
    probabilities: Dict[str, np.ndarray]
    predictions: Dict[str, np.ndarray]


def pool_predictions(report: ExperimentReport) -> PooledPredictions:
    samples = [s for f in report.successful_folds for s in f.samples]
    if not samples:
        raise DataValidationError("report has no pooled per-sample predictions")
    threshold = report.config.classification_threshold
    labels = np.array([s.label for s in samples], dtype=int)
    probabilities = {
        "multi_stage": np.array([s.final_probability for s in samples]),
        "ensemble1": np.array([s.ensemble1_mean for s in samples]),
        "ensemble2": np.array([s.ensemble2_mean for s in samples]),
    }
    predictions = {name: (p >= threshold).astype(int) for name, p in probabilities.items()}
    predictions["guideline"] = np.array([s.guideline_prediction for s in samples], dtype=int)
    return PooledPredictions(labels=labels, probabilities=probabilities, predictions=predictions)


def compare_pair(pooled: PooledPredictions, model_a: str, model_b: str) -> PairwiseComparison:
    """DeLong on scores (skipped when either model has none) and McNemar within each class."""
    labels = pooled.labels
    correct_a = pooled.predictions[model_a] == labels
    correct_b = pooled.predictions[model_b] == labels
    positives = labels == 1
    auc_test: Optional[TestResult] = None
    if model_a in pooled.probabilities and model_b in pooled.probabilities:
        auc_test = delong_paired_test(labels, pooled.probabilities[model_a], pooled.probabilities[model_b])
    return PairwiseComparison(
        model_a=model_a,
        model_b=model_b,
        auc=auc_test,
        sensitivity=mcnemar(correct_a[positives], correct_b[positives]),
        specificity=mcnemar(correct_a[~positives], correct_b[~positives]),
    )


def compare_models(report: ExperimentReport) -> List[PairwiseComparison]:
    """Every model pair, in MODEL_NAMES order, on pooled test predictions."""
    pooled = pool_predictions(report)
    return [compare_pair(pooled, a, b) for a, b in combinations(MODEL_NAMES, 2)]


def pooled_auc_ci(report: ExperimentReport, level: float = 0.95) -> Dict[str, TestResult]:
    pooled = pool_predictions(report)
    return {name: delong_ci(pooled.labels, pooled.probabilities[name], level) for name in SCORED_MODELS}


def escalation_summary(folds: Sequence[FoldResult]) -> Optional[EscalationSummary]:
    ok = [f for f in folds if f.status == "ok"]
    if not ok:
        return None
    escalated = sum(1 for f in ok for s in f.samples if s.stage_used == 2)
    total = sum(len(f.samples) for f in ok)
    q25, q50, q75 = np.percentile([f.escalation_fraction for f in ok], [25, 50, 75])
    return EscalationSummary(
        escalated=escalated,
        total=total,
        overall_fraction=escalated / total if total else 0.0,
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
    )


def assemble_report(provenance: str, config: ExperimentConfig, folds: List[FoldResult]) -> ExperimentReport:
    report = ExperimentReport(
        provenance=provenance,
        config=config,
        folds=folds,
        aggregate=aggregate_metrics(folds),
        escalation=escalation_summary(folds),
        failed_folds=[f.fold for f in folds if f.status == "failed"],
    )
    if report.successful_folds:
        for field, compute in (("comparisons", compare_models), ("auc_ci", pooled_auc_ci)):
            try:
                setattr(report, field, compute(report))
            except Exception as exc:
                report.errors.append(f"{field}: {type(exc).__name__}: {exc}")
                logger.error(
                    f"Pooled {field} failed: {exc}",
                    extra={"extra_data": {"step": field, "error": type(exc).__name__}},
                )
    if report.failed_folds:
        logger.warning(
            f"{len(report.failed_folds)} of {len(folds)} folds failed",
            extra={"extra_data": {"failed_folds": report.failed_folds}},
        )
    return report
