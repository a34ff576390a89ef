"""
Statistics for cascade-uq.
Rank-based AUC and ROC points, DeLong confidence intervals and paired tests,
McNemar, Welch t, Pearson chi-square and thresholded classification metrics.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy import stats as sp_stats

from src.core.errors import DataValidationError, DegenerateDataError
from src.core.models import ClassificationMetrics, ConfidenceInterval, ConfusionCounts, TestResult

# Discordant-pair count below which McNemar uses the exact binomial tail
MCNEMAR_EXACT_LIMIT = 25


def _labels_scores(labels: Sequence[int], scores: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    if labels.ndim != 1 or labels.shape != scores.shape:
        raise DataValidationError(f"labels {labels.shape} and scores {scores.shape} must be equal-length vectors")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataValidationError("labels must be 0 or 1")
    if not np.all(np.isfinite(scores)):
        raise DataValidationError("scores must be finite")
    if len(labels) == 0 or labels.min() == labels.max():
        raise DegenerateDataError("AUC is undefined unless both classes are present")
    return labels, scores


def auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """P(random positive outscores random negative), ties counted one half, via midranks."""
    labels, scores = _labels_scores(labels, scores)
    ranks = sp_stats.rankdata(scores)
    m = int(labels.sum())
    n = len(labels) - m
    return float((ranks[labels == 1].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_points(labels: Sequence[int], scores: Sequence[float]) -> List[Tuple[float, float]]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    labels, scores = _labels_scores(labels, scores)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # last position of each run of equal scores
    ends = np.flatnonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])
    m, n = tp[-1], fp[-1]
    points = [(0.0, 0.0)]
    points.extend((float(fp[i] / n), float(tp[i] / m)) for i in ends)
    return points


def roc_area(points: Sequence[Tuple[float, float]]) -> float:
    """Trapezoidal area under a list of ROC points."""
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _delong_components(labels: np.ndarray, score_rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """AUCs and the structural-component covariance for k score vectors sharing labels."""
    positives = score_rows[:, labels == 1]
    negatives = score_rows[:, labels == 0]
    m, n = positives.shape[1], negatives.shape[1]
    if m < 2 or n < 2:
        raise DegenerateDataError("DeLong needs at least 2 samples per class")

    pos_ranks = sp_stats.rankdata(positives, axis=1)
    neg_ranks = sp_stats.rankdata(negatives, axis=1)
    joint_ranks = sp_stats.rankdata(np.hstack([positives, negatives]), axis=1)

    aucs = (joint_ranks[:, :m].sum(axis=1) - m * (m + 1) / 2.0) / (m * n)
    v01 = (joint_ranks[:, :m] - pos_ranks) / n
    v10 = 1.0 - (joint_ranks[:, m:] - neg_ranks) / m
    covariance = np.atleast_2d(np.cov(v01)) / m + np.atleast_2d(np.cov(v10)) / n
    return aucs, covariance


def delong_ci(labels: Sequence[int], scores: Sequence[float], level: float = 0.95) -> TestResult:
    """
    AUC with a DeLong Wald confidence interval clamped to [0, 1].

    The statistic is the z-score of the AUC against 0.5. With zero variance
    (perfect separation) the interval collapses onto the estimate and the
    method is tagged degenerate.
    """
    if not 0.0 < level < 1.0:
        raise DataValidationError(f"confidence level must lie in (0, 1), got {level}")
    labels, scores = _labels_scores(labels, scores)
    aucs, covariance = _delong_components(labels, scores[None, :])
    estimate = float(aucs[0])
    variance = float(covariance[0, 0])

    if variance <= 0.0:
        return TestResult(
            statistic=0.0,
            p_value=1.0,
            method="delong-degenerate",
            estimate=estimate,
            ci=ConfidenceInterval(lower=estimate, upper=estimate, level=level),
            details={"variance": 0.0},
        )

    se = math.sqrt(variance)
    z = float(sp_stats.norm.ppf(1.0 - (1.0 - level) / 2.0))
    statistic = (estimate - 0.5) / se
    return TestResult(
        statistic=statistic,
        p_value=float(min(1.0, 2.0 * sp_stats.norm.sf(abs(statistic)))),
        method="delong",
        estimate=estimate,
        ci=ConfidenceInterval(
            lower=max(0.0, estimate - z * se),
            upper=min(1.0, estimate + z * se),
            level=level,
        ),
        details={"variance": variance},
    )


def delong_paired_test(
    labels: Sequence[int],
    scores_a: Sequence[float],
    scores_b: Sequence[float],
) -> TestResult:
    """Two-sided paired DeLong test of AUC(a) = AUC(b); estimate is the AUC difference."""
    labels, scores_a = _labels_scores(labels, scores_a)
    _, scores_b = _labels_scores(labels, scores_b)
    aucs, covariance = _delong_components(labels, np.vstack([scores_a, scores_b]))
    difference = float(aucs[0] - aucs[1])
    variance = float(covariance[0, 0] + covariance[1, 1] - 2.0 * covariance[0, 1])
    details = {"auc_a": float(aucs[0]), "auc_b": float(aucs[1]), "variance": max(variance, 0.0)}

    if difference == 0.0:
        return TestResult(statistic=0.0, p_value=1.0, method="delong-paired", estimate=0.0, details=details)
    if variance <= 0.0:
        return TestResult(
            statistic=0.0, p_value=0.0, method="delong-paired-degenerate", estimate=difference, details=details
        )
    statistic = difference / math.sqrt(variance)
    return TestResult(
        statistic=statistic,
        p_value=float(min(1.0, 2.0 * sp_stats.norm.sf(abs(statistic)))),
        method="delong-paired",
        estimate=difference,
        details=details,
    )


def mcnemar(correct_a: Sequence[bool], correct_b: Sequence[bool]) -> TestResult:
    """
    McNemar test on paired correctness indicators.

    b counts samples A gets right and B wrong, c the reverse. Below 25 discordant
    pairs the p-value is the exact two-sided binomial tail, otherwise the
    continuity-corrected chi-square (|b - c| - 1)^2 / (b + c) with one degree of freedom.
    """
    a = np.asarray(correct_a, dtype=bool)
    b_vec = np.asarray(correct_b, dtype=bool)
    if a.ndim != 1 or a.shape != b_vec.shape:
        raise DataValidationError("correctness vectors must have equal length")
    b = int(np.sum(a & ~b_vec))
    c = int(np.sum(~a & b_vec))
    details = {"b": float(b), "c": float(c), "discordance": float(b - c)}
    discordant = b + c

    if discordant == 0:
        return TestResult(statistic=0.0, p_value=1.0, method="mcnemar-exact", details=details)
    if discordant < MCNEMAR_EXACT_LIMIT:
        tail = float(sp_stats.binom.cdf(min(b, c), discordant, 0.5))
        return TestResult(
            statistic=float(min(b, c)),
            p_value=min(1.0, 2.0 * tail),
            method="mcnemar-exact",
            details=details,
        )
    statistic = (abs(b - c) - 1.0) ** 2 / discordant
    return TestResult(
        statistic=statistic,
        p_value=float(sp_stats.chi2.sf(statistic, 1)),
        method="mcnemar-chi2",
        details=details,
    )


def metrics_from_predictions(labels: Sequence[int], predictions: Sequence[int]) -> ClassificationMetrics:
    """Confusion counts, accuracy, sensitivity and specificity of hard predictions."""
    labels = np.asarray(labels, dtype=int)
    predictions = np.asarray(predictions, dtype=int)
    if labels.shape != predictions.shape:
        raise DataValidationError("labels and predictions must have equal length")
    positives = int(labels.sum())
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise DegenerateDataError("sensitivity and specificity need both classes")
    counts = ConfusionCounts(
        tp=int(np.sum((predictions == 1) & (labels == 1))),
        fp=int(np.sum((predictions == 1) & (labels == 0))),
        tn=int(np.sum((predictions == 0) & (labels == 0))),
        fn=int(np.sum((predictions == 0) & (labels == 1))),
    )
    return ClassificationMetrics(
        counts=counts,
        accuracy=(counts.tp + counts.tn) / counts.total,
        sensitivity=counts.tp / positives,
        specificity=counts.tn / negatives,
    )


def classification_metrics(
    labels: Sequence[int],
    probabilities: Sequence[float],
    threshold: float = 0.5,
) -> ClassificationMetrics:
    """Metrics of the rule: predict positive iff probability >= threshold."""
    predictions = (np.asarray(probabilities, dtype=float) >= threshold).astype(int)
    return metrics_from_predictions(labels, predictions)


def two_sample_t(group_a: Sequence[float], group_b: Sequence[float]) -> TestResult:
    """
    Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.

    When both groups have zero variance the result is t = 0, p = 1 for equal
    means and t = +/-inf, p = 0 otherwise.
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateDataError("each group needs at least 2 values")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    share_a = float(a.var(ddof=1)) / len(a)
    share_b = float(b.var(ddof=1)) / len(b)
    se2 = share_a + share_b
    estimate = mean_a - mean_b

    if se2 == 0.0:
        if estimate == 0.0:
            return TestResult(statistic=0.0, p_value=1.0, method="welch-t", estimate=0.0)
        return TestResult(
            statistic=math.copysign(math.inf, estimate), p_value=0.0, method="welch-t", estimate=estimate
        )

    statistic = estimate / math.sqrt(se2)
    df = se2 ** 2 / (share_a ** 2 / (len(a) - 1) + share_b ** 2 / (len(b) - 1))
    return TestResult(
        statistic=statistic,
        p_value=float(min(1.0, 2.0 * sp_stats.t.sf(abs(statistic), df))),
        method="welch-t",
        estimate=estimate,
        details={"df": df},
    )


def chi_square_independence(table: Sequence[Sequence[int]]) -> TestResult:
    """Pearson chi-square on a 2x2 table without continuity correction."""
    counts = np.asarray(table, dtype=float)
    if counts.shape != (2, 2) or np.any(counts < 0):
        raise DataValidationError(f"expected a 2x2 table of non-negative counts, got {counts.tolist()}")
    if np.any(counts.sum(axis=0) == 0) or np.any(counts.sum(axis=1) == 0):
        raise DegenerateDataError("chi-square independence needs every marginal > 0")
    statistic, p_value, dof, _ = sp_stats.chi2_contingency(counts, correction=False)
    return TestResult(
        statistic=float(statistic),
        p_value=float(min(1.0, p_value)),
        method="pearson-chi2",
        details={"df": float(dof)},
    )
