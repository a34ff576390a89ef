"""
Data models for cascade-uq.
Pydantic types shared by the cohort, modelling, cascade, statistics and pipeline layers.
"""

import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BaseCUModel(BaseModel):
    """Base model for cascade-uq with common configuration."""
    model_config = ConfigDict(from_attributes=True, populate_by_name=True)

    def to_dict(self) -> Dict[str, Any]:
        """Convert model to a JSON-compatible dictionary."""
        return self.model_dump(mode="json", by_alias=True)

    def to_json(self, indent: Optional[int] = 2) -> str:
        return self.model_dump_json(indent=indent, by_alias=True)


def _check_finite(values: Dict[str, float], where: str) -> Dict[str, float]:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{where} feature '{name}' is not finite: {value}")
    return values


# ========== COHORT ==========

class FeatureSchema(BaseCUModel):
    """Feature names per stage plus the value constraints the loader and generator enforce."""
    stage1: List[str]
    stage2: List[str] = Field(default_factory=list)
    binary: List[str] = Field(default_factory=list)
    one_hot_groups: Dict[str, List[str]] = Field(default_factory=dict)
    clamp: Dict[str, Tuple[Optional[float], Optional[float]]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _consistent(self) -> "FeatureSchema":
        names = self.stage1 + self.stage2
        if not self.stage1:
            raise ValueError("stage1 must name at least one feature")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique across stages")
        known = set(names)
        for name in self.binary:
            if name not in known:
                raise ValueError(f"binary feature '{name}' is not in the schema")
        for group, members in self.one_hot_groups.items():
            if not members:
                raise ValueError(f"one-hot group '{group}' is empty")
            for name in members:
                if name not in self.binary:
                    raise ValueError(f"one-hot member '{name}' of '{group}' must be binary")
        for name, (low, high) in self.clamp.items():
            if name not in known:
                raise ValueError(f"clamp range given for unknown feature '{name}'")
            if low is not None and high is not None and low > high:
                raise ValueError(f"clamp range for '{name}' is empty")
        return self

    @property
    def all_features(self) -> List[str]:
        return self.stage1 + self.stage2

    def model_features(self, stage: int) -> List[str]:
        """Predictors available to a stage model (stage 2 sees stage 1 too)."""
        if stage == 1:
            return list(self.stage1)
        if stage == 2:
            return self.stage1 + self.stage2
        raise ValueError(f"stage must be 1 or 2, got {stage}")

    def stage_of(self, name: str) -> int:
        if name in self.stage1:
            return 1
        if name in self.stage2:
            return 2
        raise KeyError(name)


class PatientRecord(BaseCUModel):
    """One subject: stage-1 clinical/ECG values, stage-2 SPECT values and the responder label."""
    id: str
    stage1: Dict[str, float]
    stage2: Dict[str, float] = Field(default_factory=dict)
    label: int

    @field_validator("label")
    @classmethod
    def _binary_label(cls, v: int) -> int:
        if v not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {v}")
        return v

    @field_validator("stage1", "stage2")
    @classmethod
    def _finite(cls, v: Dict[str, float], info) -> Dict[str, float]:
        return _check_finite(v, info.field_name)

    def has(self, name: str) -> bool:
        return name in self.stage1 or name in self.stage2

    def value(self, name: str) -> float:
        if name in self.stage1:
            return self.stage1[name]
        if name in self.stage2:
            return self.stage2[name]
        raise KeyError(f"record {self.id} has no feature '{name}'")

    def vector(self, names: List[str]) -> np.ndarray:
        return np.array([self.value(name) for name in names], dtype=float)


class Exclusion(BaseCUModel):
    """An input row rejected for missing required features."""
    row: int
    id: Optional[str] = None
    missing: List[str]


class Cohort(BaseCUModel):
    """Ordered records sharing one schema, with the source they came from."""
    records: List[PatientRecord]
    feature_schema: FeatureSchema = Field(alias="schema")
    provenance: str
    exclusions: List[Exclusion] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> "Cohort":
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("record ids must be unique")
        return self

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    def matrix(self, names: List[str]) -> np.ndarray:
        """Rows in cohort order, columns in the order of `names`."""
        if not self.records:
            return np.empty((0, len(names)))
        return np.vstack([r.vector(names) for r in self.records])

    def by_id(self) -> Dict[str, PatientRecord]:
        return {r.id: r for r in self.records}

    def subset(self, ids: List[str]) -> "Cohort":
        lookup = self.by_id()
        return Cohort(
            records=[lookup[i] for i in ids],
            schema=self.feature_schema,
            provenance=self.provenance,
        )

    @property
    def has_stage2(self) -> bool:
        needed = self.feature_schema.stage2
        return bool(needed) and all(all(n in r.stage2 for n in needed) for r in self.records)


class ContinuousFeatureSpec(BaseCUModel):
    """Per-class normal parameters as (mean, sd)."""
    stage: Literal[1, 2]
    responder: Tuple[float, float]
    non_responder: Tuple[float, float]
    clamp: Optional[Tuple[Optional[float], Optional[float]]] = None

    @field_validator("responder", "non_responder")
    @classmethod
    def _sd_non_negative(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[1] < 0:
            raise ValueError(f"sd must be >= 0, got {v[1]}")
        return v


class BinaryFeatureSpec(BaseCUModel):
    """Per-class Bernoulli proportions."""
    stage: Literal[1, 2]
    responder: float = Field(ge=0.0, le=1.0)
    non_responder: float = Field(ge=0.0, le=1.0)


class CategoricalFeatureSpec(BaseCUModel):
    """One-hot group; each level maps to (responder, non_responder) proportions."""
    stage: Literal[1, 2]
    levels: Dict[str, Tuple[float, float]]

    @field_validator("levels")
    @classmethod
    def _proportions(cls, v: Dict[str, Tuple[float, float]]) -> Dict[str, Tuple[float, float]]:
        if len(v) < 2:
            raise ValueError("a categorical feature needs at least two levels")
        for level, pair in v.items():
            if not all(0.0 <= p <= 1.0 for p in pair):
                raise ValueError(f"proportions for level '{level}' must lie in [0, 1]")
        for column in (0, 1):
            if sum(pair[column] for pair in v.values()) <= 0:
                raise ValueError("level proportions for a class sum to zero")
        return v


class CorrelationBlock(BaseCUModel):
    """Continuous features drawn jointly with a common pairwise correlation."""
    features: List[str] = Field(min_length=2)
    rho: float

    @model_validator(mode="after")
    def _positive_definite(self) -> "CorrelationBlock":
        k = len(self.features)
        if not (-1.0 / (k - 1) < self.rho < 1.0):
            raise ValueError(f"rho={self.rho} does not give a valid correlation matrix for {k} features")
        return self


class SyntheticSpec(BaseCUModel):
    """Distribution parameters for generating a cohort from published group statistics."""
    prevalence: float = Field(gt=0.0, lt=1.0)
    continuous: Dict[str, ContinuousFeatureSpec] = Field(default_factory=dict)
    binary: Dict[str, BinaryFeatureSpec] = Field(default_factory=dict)
    categorical: Dict[str, CategoricalFeatureSpec] = Field(default_factory=dict)
    correlations: List[CorrelationBlock] = Field(default_factory=list)

    @model_validator(mode="after")
    def _names(self) -> "SyntheticSpec":
        names = list(self.continuous) + list(self.binary)
        for group in self.categorical.values():
            names.extend(group.levels)
        if not names:
            raise ValueError("synthetic spec declares no features")
        if len(set(names)) != len(names):
            raise ValueError("feature names in a synthetic spec must be unique")
        seen = set()
        for block in self.correlations:
            for name in block.features:
                if name not in self.continuous:
                    raise ValueError(f"correlated feature '{name}' is not continuous")
                if name in seen:
                    raise ValueError(f"feature '{name}' appears in two correlation blocks")
                seen.add(name)
        return self


class FoldPlan(BaseCUModel):
    """Assignment of every record id to one of k outer folds."""
    k: int = Field(ge=2)
    seed: int
    assignments: Dict[str, int]

    def fold_ids(self, fold: int) -> List[str]:
        return [i for i, f in self.assignments.items() if f == fold]

    def fold_sizes(self) -> List[int]:
        sizes = [0] * self.k
        for f in self.assignments.values():
            sizes[f] += 1
        return sizes


class SummaryRow(BaseCUModel):
    """One line of the baseline characteristics table."""
    feature: str
    stage: int
    kind: Literal["continuous", "binary"]
    overall: str
    responders: str
    non_responders: str
    test: Optional[str] = None
    statistic: Optional[float] = None
    p_value: Optional[float] = None


class SummaryTable(BaseCUModel):
    n: int
    n_responders: int
    n_non_responders: int
    rows: List[SummaryRow]


# ========== PREPROCESSING ==========

class ScalerParams(BaseCUModel):
    """Per-feature centre and scale fitted on training rows only."""
    features: List[str]
    center: List[float]
    scale: List[float]

    @model_validator(mode="after")
    def _shapes(self) -> "ScalerParams":
        if not (len(self.features) == len(self.center) == len(self.scale)):
            raise ValueError("features, center and scale must have equal length")
        if any(s <= 0 for s in self.scale):
            raise ValueError("every scale must be positive")
        return self

    def restrict(self, names: List[str]) -> "ScalerParams":
        index = {name: i for i, name in enumerate(self.features)}
        missing = [n for n in names if n not in index]
        if missing:
            raise KeyError(f"features not in scaler: {missing}")
        return ScalerParams(
            features=list(names),
            center=[self.center[index[n]] for n in names],
            scale=[self.scale[index[n]] for n in names],
        )


class EliminationStep(BaseCUModel):
    removed: str
    remaining: int
    score: Optional[float] = None


class FeatureSubset(BaseCUModel):
    """Features retained by recursive elimination and how they were reached."""
    features: List[str] = Field(min_length=1)
    trace: List[EliminationStep] = Field(default_factory=list)
    size_scores: Dict[int, float] = Field(default_factory=dict)


# ========== ELASTIC-NET GLM ==========

class ElasticNetConfig(BaseCUModel):
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    lambda_: float = Field(0.01, ge=0.0, alias="lambda")
    max_iterations: int = Field(100_000, ge=1)
    tolerance: float = Field(1e-7, gt=0.0)


class LogisticModel(BaseCUModel):
    feature_names: List[str]
    intercept: float
    coefficients: List[float]
    config: ElasticNetConfig
    converged: bool
    iterations: int
    objective_path: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _shapes(self) -> "LogisticModel":
        if len(self.coefficients) != len(self.feature_names):
            raise ValueError("one coefficient per feature is required")
        if not math.isfinite(self.intercept) or not all(math.isfinite(c) for c in self.coefficients):
            raise ValueError("model parameters must be finite")
        return self


# ========== ENSEMBLES ==========

class EnsembleConfig(BaseCUModel):
    n_models: int = Field(ge=1)
    sample_fraction: float = Field(gt=0.0, le=1.0)
    base: ElasticNetConfig = Field(default_factory=ElasticNetConfig)
    seed: int = Field(0, ge=0)
    tuning_score: Optional[float] = None


class EnsembleGrid(BaseCUModel):
    n_models: List[int] = Field(min_length=1)
    sample_fractions: List[float] = Field(min_length=1)
    alphas: List[float] = Field(min_length=1)
    lambdas: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _ranges(self) -> "EnsembleGrid":
        if any(m < 1 for m in self.n_models):
            raise ValueError("n_models entries must be >= 1")
        if any(not (0.0 < f <= 1.0) for f in self.sample_fractions):
            raise ValueError("sample fractions must lie in (0, 1]")
        if any(not (0.0 <= a <= 1.0) for a in self.alphas):
            raise ValueError("alphas must lie in [0, 1]")
        if any(lam < 0 for lam in self.lambdas):
            raise ValueError("lambdas must be >= 0")
        return self


class InnerCVConfig(BaseCUModel):
    folds: int = Field(5, ge=2)
    seed: int = Field(0, ge=0)


class Ensemble(BaseCUModel):
    """M fitted base learners plus the row subsample each one saw."""
    models: List[LogisticModel] = Field(min_length=1)
    subsamples: List[List[int]]
    config: EnsembleConfig
    features: List[str]

    @model_validator(mode="after")
    def _consistent(self) -> "Ensemble":
        if len(self.models) != self.config.n_models:
            raise ValueError("ensemble must hold exactly n_models models")
        if len(self.subsamples) != len(self.models):
            raise ValueError("one subsample record per model is required")
        for model in self.models:
            if model.feature_names != self.features:
                raise ValueError("every base model must share the ensemble feature subset")
        return self


class UncertainPrediction(BaseCUModel):
    mean: float
    std: float = Field(ge=0.0)
    probabilities: List[float]


# ========== CASCADE ==========

class CascadeThresholds(BaseCUModel):
    std_threshold: float = Field(ge=0.0, le=0.5)
    midway_threshold: float = Field(ge=0.0, le=0.5)
    scaling_weight: float = Field(ge=0.5, le=9.0)


class ThresholdGrid(BaseCUModel):
    std_thresholds: List[float] = Field(min_length=1)
    midway_thresholds: List[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _ranges(self) -> "ThresholdGrid":
        for value in self.std_thresholds + self.midway_thresholds:
            if not 0.0 <= value <= 0.5:
                raise ValueError("threshold grid values must lie in [0, 0.5]")
        return self


class ThresholdCandidate(BaseCUModel):
    """Best thresholds found on validation slice 1 for one scaling weight."""
    scaling_weight: float
    std_threshold: float
    midway_threshold: float
    val1_score: float
    retained_fraction: float
    val2_auc: float


class StagePreprocessor(BaseCUModel):
    """Scaler restricted to the RFE-selected features of one stage."""
    stage: Literal[1, 2]
    scaler: ScalerParams

    @property
    def features(self) -> List[str]:
        return self.scaler.features


class CascadeModel(BaseCUModel):
    ensemble1: Ensemble
    ensemble2: Ensemble
    thresholds: CascadeThresholds
    stage1_schema: List[str]
    stage2_schema: List[str]

    @model_validator(mode="after")
    def _subsets(self) -> "CascadeModel":
        if not set(self.ensemble1.features) <= set(self.stage1_schema):
            raise ValueError("ensemble1 features must come from the stage-1 schema")
        if not set(self.ensemble2.features) <= set(self.stage2_schema):
            raise ValueError("ensemble2 features must come from the stage-2 schema")
        return self


class RoutingDecision(BaseCUModel):
    record_id: Optional[str] = None
    stage_used: Literal[1, 2]
    stage1_mean: float
    stage1_std: float
    stage2_mean: Optional[float] = None
    final_probability: float
    reason: Literal["low_uncertainty", "high_std", "near_midway"]

    @model_validator(mode="after")
    def _consistent(self) -> "RoutingDecision":
        if self.stage_used == 1:
            if self.reason != "low_uncertainty" or self.final_probability != self.stage1_mean:
                raise ValueError("stage-1 decisions keep the stage-1 mean with reason low_uncertainty")
        elif self.reason == "low_uncertainty":
            raise ValueError("escalated decisions need an escalation reason")
        return self


# ========== STATISTICS ==========

class ConfusionCounts(BaseCUModel):
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class ClassificationMetrics(BaseCUModel):
    counts: ConfusionCounts
    accuracy: float
    sensitivity: float
    specificity: float


class ConfidenceInterval(BaseCUModel):
    lower: float
    upper: float
    level: float

    @model_validator(mode="after")
    def _ordered(self) -> "ConfidenceInterval":
        if self.lower > self.upper:
            raise ValueError("CI lower bound exceeds upper bound")
        return self


class TestResult(BaseCUModel):
    __test__ = False

    statistic: float
    p_value: float = Field(ge=0.0, le=1.0)
    method: str
    estimate: Optional[float] = None
    ci: Optional[ConfidenceInterval] = None
    details: Dict[str, float] = Field(default_factory=dict)


# ========== IMPORTANCE & GUIDELINE ==========

class FeatureImportance(BaseCUModel):
    feature: str
    per_fold: List[float]
    overall: float
    rank: int = Field(ge=1)


class ImportanceReport(BaseCUModel):
    method: Literal["coefficient", "permutation"]
    model: Optional[str] = None
    entries: List[FeatureImportance]

    @model_validator(mode="after")
    def _ranks(self) -> "ImportanceReport":
        ranks = sorted(e.rank for e in self.entries)
        if ranks != list(range(1, len(self.entries) + 1)):
            raise ValueError("ranks must be a permutation of 1..#features")
        return self

    def value(self, feature: str) -> float:
        for entry in self.entries:
            if entry.feature == feature:
                return entry.overall
        raise KeyError(feature)


class GuidelineClass(BaseCUModel):
    recommendation: Literal["I", "IIa", "none"]
    trace: str


# ========== PIPELINE ==========

def _default_std_grid() -> List[float]:
    return [round(0.01 * i, 2) for i in range(1, 21)]


def _default_midway_grid() -> List[float]:
    return [round(0.01 * i, 2) for i in range(0, 11)]


class ExperimentConfig(BaseCUModel):
    """Everything run_nested_cv needs besides the cohort."""
    outer_folds: int = Field(10, ge=2)
    validation_sizes: Tuple[int, int] = (20, 20)
    inner_folds: int = Field(5, ge=2)
    n_models: List[int] = Field(default_factory=lambda: [25, 28, 31, 34, 37, 40, 43, 46, 49])
    sample_fractions: List[float] = Field(default_factory=lambda: [0.70, 0.75, 0.80, 0.85, 0.90, 0.95])
    alphas: List[float] = Field(default_factory=lambda: [0.1, 0.5, 0.9])
    lambdas: List[float] = Field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    std_thresholds: List[float] = Field(default_factory=_default_std_grid)
    midway_thresholds: List[float] = Field(default_factory=_default_midway_grid)
    s_grid: List[float] = Field(default_factory=lambda: [0.5, 1, 2, 3, 4, 5, 6, 7, 8, 9])
    rfe_sizes: Optional[List[int]] = None
    rfe_alpha: float = Field(0.5, ge=0.0, le=1.0)
    rfe_lambda: float = Field(0.01, ge=0.0)
    seed: int = Field(0, ge=0)
    classification_threshold: float = Field(0.5, ge=0.0, le=1.0)
    # Worker count does not change results, so it stays out of reports
    n_jobs: int = Field(1, exclude=True)

    @model_validator(mode="after")
    def _grids(self) -> "ExperimentConfig":
        if any(v < 0 for v in self.validation_sizes):
            raise ValueError("validation sizes must be >= 0")
        if not self.s_grid or any(not (0.5 <= s <= 9.0) for s in self.s_grid):
            raise ValueError("s_grid must be non-empty and lie in [0.5, 9]")
        if self.rfe_sizes is not None and (not self.rfe_sizes or min(self.rfe_sizes) < 1):
            raise ValueError("rfe_sizes must be positive when given")
        # grid models raise on empty or out-of-range entries
        self.ensemble_grid
        self.threshold_grid
        return self

    @property
    def ensemble_grid(self) -> EnsembleGrid:
        return EnsembleGrid(
            n_models=self.n_models,
            sample_fractions=self.sample_fractions,
            alphas=self.alphas,
            lambdas=self.lambdas,
        )

    @property
    def threshold_grid(self) -> ThresholdGrid:
        return ThresholdGrid(std_thresholds=self.std_thresholds, midway_thresholds=self.midway_thresholds)

    @property
    def rfe_config(self) -> ElasticNetConfig:
        return ElasticNetConfig(alpha=self.rfe_alpha, lambda_=self.rfe_lambda)


MODEL_NAMES = ("multi_stage", "ensemble1", "ensemble2", "guideline")


class ModelMetrics(BaseCUModel):
    auc: Optional[float] = None
    accuracy: float
    sensitivity: float
    specificity: float


class SamplePrediction(BaseCUModel):
    """Per test-sample outcome of every model in one fold."""
    id: str
    fold: int
    label: int
    stage_used: Literal[1, 2]
    reason: str
    ensemble1_mean: float
    ensemble1_std: float
    ensemble2_mean: float
    final_probability: float
    guideline_class: str
    guideline_prediction: int


class StageArtifacts(BaseCUModel):
    scaler: ScalerParams
    subset: FeatureSubset
    ensemble: Ensemble


class FoldArtifacts(BaseCUModel):
    """Everything fitted inside one outer fold."""
    fold: int
    test_ids: List[str]
    stage1: StageArtifacts
    stage2: StageArtifacts
    thresholds: CascadeThresholds
    threshold_candidates: List[ThresholdCandidate] = Field(default_factory=list)


class FoldResult(BaseCUModel):
    fold: int
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    thresholds: Optional[CascadeThresholds] = None
    threshold_candidates: List[ThresholdCandidate] = Field(default_factory=list)
    ensemble1_config: Optional[EnsembleConfig] = None
    ensemble2_config: Optional[EnsembleConfig] = None
    stage1_features: List[str] = Field(default_factory=list)
    stage2_features: List[str] = Field(default_factory=list)
    metrics: Dict[str, ModelMetrics] = Field(default_factory=dict)
    escalation_fraction: Optional[float] = Field(None, ge=0.0, le=1.0)
    samples: List[SamplePrediction] = Field(default_factory=list)


class MeanSd(BaseCUModel):
    mean: float
    sd: float
    n: int


class PairwiseComparison(BaseCUModel):
    """Paired tests of model_a versus model_b on pooled test predictions."""
    model_a: str
    model_b: str
    auc: Optional[TestResult] = None
    sensitivity: TestResult
    specificity: TestResult


class EscalationSummary(BaseCUModel):
    escalated: int
    total: int
    overall_fraction: float
    q25: float
    q50: float
    q75: float


class ExperimentReport(BaseCUModel):
    provenance: str
    config: ExperimentConfig
    folds: List[FoldResult]
    aggregate: Dict[str, Dict[str, MeanSd]] = Field(default_factory=dict)
    comparisons: List[PairwiseComparison] = Field(default_factory=list)
    auc_ci: Dict[str, TestResult] = Field(default_factory=dict)
    escalation: Optional[EscalationSummary] = None
    failed_folds: List[int] = Field(default_factory=list)
    errors: List[str] = Field(default_factory=list)

    @property
    def successful_folds(self) -> List[FoldResult]:
        return [f for f in self.folds if f.status == "ok"]


class SimulationCell(BaseCUModel):
    fraction: float
    repeat: int
    fold: int
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    metrics: Dict[str, ModelMetrics] = Field(default_factory=dict)


class SimulationSummaryRow(BaseCUModel):
    fraction: float
    metric: str
    mean: float
    sd: float
    n: int


class SimulationReport(BaseCUModel):
    provenance: str
    config: ExperimentConfig
    fractions: List[float]
    repeats: int
    resample: bool
    cells: List[SimulationCell]
    summary: List[SimulationSummaryRow]
