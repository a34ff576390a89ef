"""
CSV Export Module for cascade-uq.
Builds the tabular views of experiment outputs (cohort summary, performance,
hyperparameters, comparisons, errors, routing, ROC points, importance, simulation) as pandas DataFrames.
"""

from typing import List, Optional, Sequence

import pandas as pd

from src.core.models import (
    ExperimentReport,
    ImportanceReport,
    PairwiseComparison,
    SimulationReport,
    SummaryTable,
)
from src.core.stats import roc_points


class CSVExporter:
    """Tabular views of cascade-uq results."""

    @staticmethod
    def performance_frame(report: ExperimentReport) -> pd.DataFrame:
        """
        Mean (sd) per model and metric over successful folds.

        AUC rows also carry the pooled DeLong confidence interval.
        """
        rows = []
        for model, metrics in report.aggregate.items():
            for metric, value in metrics.items():
                row = {
                    "model": model,
                    "metric": metric,
                    "mean": value.mean,
                    "sd": value.sd,
                    "n_folds": value.n,
                    "pooled_auc": None,
                    "ci_lower": None,
                    "ci_upper": None,
                }
                ci = report.auc_ci.get(model) if metric == "auc" else None
                if ci is not None and ci.ci is not None:
                    row.update(pooled_auc=ci.estimate, ci_lower=ci.ci.lower, ci_upper=ci.ci.upper)
                rows.append(row)
        return pd.DataFrame(
            rows, columns=["model", "metric", "mean", "sd", "n_folds", "pooled_auc", "ci_lower", "ci_upper"]
        )

    @staticmethod
    def hyperparameter_frame(report: ExperimentReport) -> pd.DataFrame:
        """Learned thresholds and ensemble settings per fold."""
        rows = []
        for fold in report.folds:
            row = {"fold": fold.fold, "status": fold.status}
            if fold.status == "ok":
                row.update(
                    std_threshold=fold.thresholds.std_threshold,
                    midway_threshold=fold.thresholds.midway_threshold,
                    scaling_weight=fold.thresholds.scaling_weight,
                    escalation_fraction=fold.escalation_fraction,
                )
                for prefix, config, features in (
                    ("ensemble1", fold.ensemble1_config, fold.stage1_features),
                    ("ensemble2", fold.ensemble2_config, fold.stage2_features),
                ):
                    row.update({
                        f"{prefix}_n_models": config.n_models,
                        f"{prefix}_sample_fraction": config.sample_fraction,
                        f"{prefix}_alpha": config.base.alpha,
                        f"{prefix}_lambda": config.base.lambda_,
                        f"{prefix}_n_features": len(features),
                    })
            else:
                row["error"] = fold.error
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def candidate_frame(report: ExperimentReport) -> pd.DataFrame:
        """Per-fold, per-s threshold winners on validation slice 1 with their val2 AUC."""
        rows = [
            {"fold": fold.fold, **candidate.to_dict()}
            for fold in report.successful_folds
            for candidate in fold.threshold_candidates
        ]
        return pd.DataFrame(rows)

    @staticmethod
    def comparison_frame(comparisons: Sequence[PairwiseComparison]) -> pd.DataFrame:
        """Pairwise tests in long form; guideline pairs have no AUC row."""
        rows = []
        for comparison in comparisons:
            for test_name in ("auc", "sensitivity", "specificity"):
                result = getattr(comparison, test_name)
                if result is None:
                    continue
                rows.append({
                    "model_a": comparison.model_a,
                    "model_b": comparison.model_b,
                    "test": test_name,
                    "method": result.method,
                    "statistic": result.statistic,
                    "p_value": result.p_value,
                    "estimate": result.estimate,
                })
        return pd.DataFrame(
            rows, columns=["model_a", "model_b", "test", "method", "statistic", "p_value", "estimate"]
        )

    @staticmethod
    def error_frame(report: ExperimentReport) -> pd.DataFrame:
        """Report-level failures (pooled steps) and failed folds, one row each."""
        rows = [{"scope": "report", "fold": None, "error": message} for message in report.errors]
        rows += [
            {"scope": "fold", "fold": fold.fold, "error": fold.error}
            for fold in report.folds if fold.status == "failed"
        ]
        return pd.DataFrame(rows, columns=["scope", "fold", "error"])

    @staticmethod
    def routing_frame(report: ExperimentReport) -> pd.DataFrame:
        """One row per test sample: routing decision and every model's output."""
        rows = [s.to_dict() for fold in report.successful_folds for s in fold.samples]
        return pd.DataFrame(rows)

    @staticmethod
    def roc_frame(labels: Sequence[int], scores: Sequence[float]) -> pd.DataFrame:
        points = roc_points(labels, scores)
        return pd.DataFrame(points, columns=["fpr", "tpr"])

    @staticmethod
    def importance_frame(report: ImportanceReport) -> pd.DataFrame:
        """feature, method, model, fold_1..fold_k, overall, rank (in rank order)."""
        rows = []
        for entry in report.entries:
            row = {"feature": entry.feature, "method": report.method, "model": report.model}
            row.update({f"fold_{k}": value for k, value in enumerate(entry.per_fold, start=1)})
            row.update(overall=entry.overall, rank=entry.rank)
            rows.append(row)
        return pd.DataFrame(rows)

    @staticmethod
    def summary_frame(table: SummaryTable) -> pd.DataFrame:
        """Baseline characteristics by response class."""
        frame = pd.DataFrame([row.to_dict() for row in table.rows])
        return frame.rename(columns={
            "overall": f"overall (n={table.n})",
            "responders": f"responders (n={table.n_responders})",
            "non_responders": f"non_responders (n={table.n_non_responders})",
        })

    @staticmethod
    def simulation_runs_frame(report: SimulationReport) -> pd.DataFrame:
        """fraction, repeat, fold, metric, value for the multi-stage model; failed cells carry no value."""
        rows = []
        for cell in report.cells:
            if cell.status != "ok":
                rows.append({
                    "fraction": cell.fraction, "repeat": cell.repeat, "fold": cell.fold,
                    "metric": "failed", "value": None,
                })
                continue
            metrics = cell.metrics["multi_stage"]
            for metric in ("auc", "accuracy", "sensitivity", "specificity"):
                rows.append({
                    "fraction": cell.fraction, "repeat": cell.repeat, "fold": cell.fold,
                    "metric": metric, "value": getattr(metrics, metric),
                })
        return pd.DataFrame(rows, columns=["fraction", "repeat", "fold", "metric", "value"])

    @staticmethod
    def simulation_summary_frame(report: SimulationReport) -> pd.DataFrame:
        """fraction, metric, mean, sd, n."""
        return pd.DataFrame(
            [row.to_dict() for row in report.summary],
            columns=["fraction", "metric", "mean", "sd", "n"],
        )


# Singleton instance
_exporter_instance: Optional[CSVExporter] = None


def get_csv_exporter() -> CSVExporter:
    """Get or create the CSV exporter singleton instance."""
    global _exporter_instance
    if _exporter_instance is None:
        _exporter_instance = CSVExporter()
    return _exporter_instance
