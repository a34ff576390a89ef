"""
Sample-size simulation.
Reruns every outer fold with the core training rows resampled at a fraction of
their size; validation slices and test folds stay fixed.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from src.core.cohort import stratified_kfold
from src.core.errors import ConfigError, SchemaError
from src.core.models import (
    Cohort,
    ExperimentConfig,
    FoldPlan,
    SimulationCell,
    SimulationReport,
    SimulationSummaryRow,
)
from src.core.pipeline import METRICS, derive_seed, mean_sd, run_fold

logger = logging.getLogger(__name__)

DEFAULT_FRACTIONS = [round(0.1 * i, 1) for i in range(1, 11)]
SUMMARY_MODEL = "multi_stage"


def _run_cell(
    cohort: Cohort,
    plan: FoldPlan,
    config: ExperimentConfig,
    fraction: float,
    fraction_index: int,
    repeat: int,
    fold: int,
    resample: bool,
) -> SimulationCell:
    try:
        if resample:
            seed = derive_seed(config.seed, fold, 0, "resample", repeat, fraction_index)
            result, _ = run_fold(cohort, plan, fold, config, core_fraction=fraction, resample_seed=seed)
        else:
            result, _ = run_fold(cohort, plan, fold, config)
    except Exception as exc:
        logger.warning(
            f"Simulation cell skipped (fraction={fraction}, repeat={repeat}, fold={fold}): {exc}",
            extra={"extra_data": {"fraction": fraction, "repeat": repeat, "fold": fold}},
        )
        return SimulationCell(fraction=fraction, repeat=repeat, fold=fold, status="failed", error=str(exc))
    return SimulationCell(fraction=fraction, repeat=repeat, fold=fold, metrics=result.metrics)


def summarize_cells(cells: Sequence[SimulationCell], fractions: Sequence[float]) -> List[SimulationSummaryRow]:
    """Mean and sd of each multi-stage metric per fraction over all successful (repeat, fold) cells."""
    rows = []
    for fraction in fractions:
        ok = [c for c in cells if c.fraction == fraction and c.status == "ok"]
        for metric in METRICS:
            values = [getattr(c.metrics[SUMMARY_MODEL], metric) for c in ok]
            values = [v for v in values if v is not None]
            if not values:
                continue
            stats = mean_sd(values)
            rows.append(SimulationSummaryRow(
                fraction=fraction, metric=metric, mean=stats.mean, sd=stats.sd, n=stats.n
            ))
    return rows


def sample_size_simulation(
    cohort: Cohort,
    config: ExperimentConfig,
    fractions: Optional[Sequence[float]] = None,
    repeats: int = 3,
    resample: bool = True,
) -> SimulationReport:
    """
    Performance as a function of training-set size.

    For every fraction f, repeat r and outer fold, the core training rows are
    resampled with replacement to ceil(f * |core|) and the whole fold pipeline is
    rerun, re-tuning everything. The core is the training fold minus its two
    validation slices, so the draw size is ceil(f * |core|), not
    ceil(f * |training fold|); the validation slices are never resampled.
    With resample=False (only allowed at f = 1) each cell reproduces the
    corresponding nested-CV fold exactly.

    Raises:
        ConfigError: fraction outside (0, 1], repeats < 1, or resample=False with f != 1
        SchemaError: cohort lacks stage-2 data
    """
    fractions = list(fractions) if fractions is not None else list(DEFAULT_FRACTIONS)
    if not fractions:
        raise ConfigError("simulation needs at least one fraction")
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"fractions must lie in (0, 1], got {fraction}")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if not resample and any(f != 1.0 for f in fractions):
        raise ConfigError("resampling can only be disabled at fraction 1.0")
    if not cohort.has_stage2:
        raise SchemaError("simulation needs stage-2 features for every record")

    plan = stratified_kfold(cohort, config.outer_folds, config.seed)
    tasks = [
        (fraction, index, repeat, fold)
        for index, fraction in enumerate(fractions)
        for repeat in range(repeats)
        for fold in range(config.outer_folds)
    ]
    logger.info(
        f"Sample-size simulation: {len(fractions)} fractions x {repeats} repeats x {config.outer_folds} folds"
    )
    cells = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_cell)(cohort, plan, config, fraction, index, repeat, fold, resample)
        for fraction, index, repeat, fold in tasks
    )
    return SimulationReport(
        provenance=cohort.provenance,
        config=config,
        fractions=fractions,
        repeats=repeats,
        resample=resample,
        cells=cells,
        summary=summarize_cells(cells, fractions),
    )
