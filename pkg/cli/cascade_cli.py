#!/usr/bin/env python3
"""
Command-line front end for cascade-uq.
Generates synthetic cohorts, runs the nested cross-validation experiment and
the sample-size simulation, and reports feature importance and cohort summaries.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence

# --- Add project root to sys.path so 'src' resolves when run as a script ---
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

import numpy as np
import pandas as pd
from pydantic import ValidationError

from src.utils.logger import LOG_FILE_ENV, get_logger, setup_logging
from src.utils.config import (
    CvConfig,
    GenConfig,
    ImportanceConfig,
    SimulateConfig,
    SummaryConfig,
    build_run_config,
    load_environment,
    load_run_file,
    load_schema,
    load_synthetic_spec,
    resolve_jobs,
)
from src.core.cohort import DEFAULT_SCHEMA, cohort_summary, load_cohort, synthesize_cohort, write_cohort_csv
from src.core.errors import USAGE_ERRORS, ConfigError, DataValidationError
from src.core.importance import (
    CascadeTarget,
    EnsembleTarget,
    coefficient_importance,
    permutation_importance_folds,
)
from src.core.models import CascadeModel, FoldArtifacts, ImportanceReport
from src.core.pipeline import SCORED_MODELS, pool_predictions, run_experiment
from src.core.simulation import sample_size_simulation
from src.core.stats import roc_points
from src.reporting.csv_exporter import get_csv_exporter
from src.reporting.report_writer import ReportWriter, atomic_write_text, frame_to_csv, load_artifacts, save_artifacts
from src.reporting.svg_charts import band_chart, roc_chart

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# argparse bookkeeping that never reaches a RunConfig
_META_KEYS = {"command", "func", "config", "jobs", "log_level", "log_file"}
_PARALLEL_COMMANDS = {"cv", "simulate"}


def cmd_gen(config: GenConfig) -> int:
    """Write a synthetic cohort CSV."""
    spec = load_synthetic_spec(config.spec)
    cohort = synthesize_cohort(spec, config.n, config.seed)
    write_cohort_csv(cohort, config.out)
    prevalence = float(np.mean(cohort.labels()))
    print(f"Wrote {len(cohort.records)} records to {config.out} (prevalence {prevalence:.3f})")
    return EXIT_OK


def cmd_summary(config: SummaryConfig) -> int:
    """Per-feature statistics by response class."""
    cohort = load_cohort(config.data, load_schema(config.schema_path))
    table = cohort_summary(cohort)
    frame = get_csv_exporter().summary_frame(table)
    atomic_write_text(config.out, frame_to_csv(frame))
    print(f"Summarized {table.n} records ({table.n_responders} responders) -> {config.out}")
    if cohort.exclusions:
        print(f"Excluded {len(cohort.exclusions)} rows with missing values")
    return EXIT_OK


def _write_roc_files(writer: ReportWriter, report) -> Dict[str, List]:
    exporter = get_csv_exporter()
    for fold in report.successful_folds:
        labels = [s.label for s in fold.samples]
        scores = {
            "multi_stage": [s.final_probability for s in fold.samples],
            "ensemble1": [s.ensemble1_mean for s in fold.samples],
            "ensemble2": [s.ensemble2_mean for s in fold.samples],
        }
        for model in SCORED_MODELS:
            writer.write_csv(f"roc/fold{fold.fold}_{model}.csv", exporter.roc_frame(labels, scores[model]))

    pooled = pool_predictions(report)
    curves = {}
    for model in SCORED_MODELS:
        writer.write_csv(
            f"roc/pooled_{model}.csv", exporter.roc_frame(pooled.labels, pooled.probabilities[model])
        )
        curves[model] = roc_points(pooled.labels, pooled.probabilities[model])
    return curves


def _print_performance(report) -> None:
    print("=" * 60)
    print("PERFORMANCE (mean (sd) over successful folds)")
    print("=" * 60)
    for model, metrics in report.aggregate.items():
        cells = [f"{metric} {value.mean:.3f} ({value.sd:.3f})" for metric, value in metrics.items()]
        print(f"{model:12s} " + "  ".join(cells))
    if report.escalation is not None:
        print(f"Escalated to stage 2: {report.escalation.overall_fraction:.1%}")
    if report.failed_folds:
        print(f"Failed folds: {report.failed_folds}")
    for message in report.errors:
        print(f"⚠️  {message}")
    print("=" * 60)


def cmd_cv(config: CvConfig) -> int:
    """Nested cross-validation: performance, hyperparameters, comparisons, ROC points and fitted models."""
    cohort = load_cohort(config.data, load_schema(config.schema_path))
    experiment = config.experiment(resolve_jobs(None, config.n_jobs))
    run = run_experiment(cohort, experiment)
    report = run.report

    writer = ReportWriter(config.out)
    exporter = get_csv_exporter()
    writer.write_json("report.json", report)
    writer.write_csv("hyperparameters.csv", exporter.hyperparameter_frame(report))
    if report.errors or report.failed_folds:
        writer.write_csv("errors.csv", exporter.error_frame(report))
    if not report.successful_folds:
        logger.error("Every outer fold failed; see report.json for the per-fold errors")
        return EXIT_FAILURE

    writer.write_csv("performance.csv", exporter.performance_frame(report))
    writer.write_csv("threshold_candidates.csv", exporter.candidate_frame(report))
    writer.write_csv("comparisons.csv", exporter.comparison_frame(report.comparisons))
    writer.write_csv("routing.csv", exporter.routing_frame(report))
    writer.written.append(save_artifacts(str(writer.path("models.json")), run.artifacts))
    curves = _write_roc_files(writer, report)
    if config.svg:
        writer.write_text("roc.svg", roc_chart(curves, title="Pooled test ROC"))

    _print_performance(report)
    print(f"Wrote {len(writer.written)} files to {config.out}")
    return EXIT_OK


def cmd_simulate(config: SimulateConfig) -> int:
    """Sample-size simulation over training fractions."""
    cohort = load_cohort(config.data, load_schema(config.schema_path))
    experiment = config.experiment(resolve_jobs(None, config.n_jobs))
    report = sample_size_simulation(
        cohort, experiment, fractions=config.fractions, repeats=config.repeats, resample=config.resample
    )

    writer = ReportWriter(config.out)
    exporter = get_csv_exporter()
    writer.write_json("simulation_report.json", report)
    writer.write_csv("simulation_runs.csv", exporter.simulation_runs_frame(report))
    writer.write_csv("simulation_summary.csv", exporter.simulation_summary_frame(report))
    if not report.summary:
        logger.error("No simulation cell succeeded")
        return EXIT_FAILURE
    if config.svg:
        series: Dict[str, List] = {}
        for row in report.summary:
            series.setdefault(row.metric, []).append((row.fraction, row.mean, row.sd))
        writer.write_text(
            "simulation.svg",
            band_chart(series, "Multi-stage performance vs training size", "Training fraction", "Metric"),
        )

    for row in report.summary:
        if row.metric == "auc":
            print(f"fraction {row.fraction:.2f}: AUC {row.mean:.3f} ({row.sd:.3f}) over {row.n} runs")
    print(f"Wrote {len(writer.written)} files to {config.out}")
    return EXIT_OK


def _importance_targets(config: ImportanceConfig) -> List[str]:
    if config.method == "coefficient":
        if config.target == "multi_stage":
            raise ConfigError("coefficient importance is defined per ensemble, not for the gated model")
        return ["ensemble1", "ensemble2"] if config.target == "all" else [config.target]
    return ["ensemble1", "ensemble2", "multi_stage"] if config.target == "all" else [config.target]


def _permutation_folds(target: str, artifacts: Sequence[FoldArtifacts], X: np.ndarray, y: np.ndarray,
                       position: Dict[str, int], features1: List[str], features2: List[str]):
    folds = []
    for fold in artifacts:
        missing = [rid for rid in fold.test_ids if rid not in position]
        if missing:
            raise DataValidationError(
                f"fold {fold.fold} test ids are not in the data file: {', '.join(missing[:5])}"
            )
        rows = np.array([position[rid] for rid in fold.test_ids], dtype=int)
        if target == "ensemble1":
            predictor = EnsembleTarget(fold.stage1.ensemble, fold.stage1.scaler)
        elif target == "ensemble2":
            predictor = EnsembleTarget(fold.stage2.ensemble, fold.stage2.scaler)
        else:
            model = CascadeModel(
                ensemble1=fold.stage1.ensemble,
                ensemble2=fold.stage2.ensemble,
                thresholds=fold.thresholds,
                stage1_schema=features1,
                stage2_schema=features2,
            )
            predictor = CascadeTarget(model, fold.stage1.scaler, fold.stage2.scaler)
        folds.append((predictor, X[rows], y[rows]))
    return folds


def cmd_importance(config: ImportanceConfig) -> int:
    """Feature importance from the fold models saved by `cv`."""
    artifacts = load_artifacts(config.models)
    if not artifacts:
        raise DataValidationError(f"{config.models} holds no fitted folds")
    schema = load_schema(config.schema_path) or DEFAULT_SCHEMA
    features1 = schema.model_features(1)
    features2 = schema.model_features(2)
    targets = _importance_targets(config)

    reports: List[ImportanceReport] = []
    if config.method == "coefficient":
        for target in targets:
            stage = 1 if target == "ensemble1" else 2
            ensembles = [a.stage1.ensemble if stage == 1 else a.stage2.ensemble for a in artifacts]
            reports.append(coefficient_importance(ensembles, schema.model_features(stage), model=target))
    else:
        if config.data is None:
            raise ConfigError("permutation importance needs --data with the cohort the models were fitted on")
        cohort = load_cohort(config.data, schema)
        X = cohort.matrix(features2)
        y = cohort.labels()
        position = {rid: i for i, rid in enumerate(cohort.ids())}
        for target in targets:
            universe = features1 if target == "ensemble1" else features2
            folds = _permutation_folds(target, artifacts, X, y, position, features1, features2)
            reports.append(permutation_importance_folds(
                folds, features2, universe, repeats=config.repeats, seed=config.seed, model=target
            ))

    exporter = get_csv_exporter()
    frame = pd.concat([exporter.importance_frame(r) for r in reports], ignore_index=True)
    atomic_write_text(config.out, frame_to_csv(frame))
    for report in reports:
        top = ", ".join(f"{e.feature} ({e.overall:.3f})" for e in report.entries[:5])
        print(f"{report.model} [{report.method}] top features: {top}")
    print(f"Wrote {config.out}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "summary": cmd_summary,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "importance": cmd_importance,
}


def _fractions(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"fractions must be comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-c', '--config', help='YAML run configuration with one section per command')
    common.add_argument('--seed', type=int, help='Master seed (default: 0)')
    common.add_argument('-j', '--jobs', type=int, help='Worker processes (default: $CASCADE_UQ_JOBS or 1)')
    common.add_argument('--log-level', type=str.upper, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Console/file log level (default: $CASCADE_UQ_LOG_LEVEL or INFO)')
    common.add_argument('--log-file', help='Rotating JSON log file (default: $CASCADE_UQ_LOG_FILE)')

    parser = argparse.ArgumentParser(
        description="cascade-uq: uncertainty-gated two-stage classification experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s gen --n 218 --seed 7 --out data/cohort.csv      # Synthetic cohort
  %(prog)s summary --data data/cohort.csv                  # baseline characteristics
  %(prog)s cv --data data/cohort.csv --out-dir results     # Nested CV
  %(prog)s simulate --data data/cohort.csv --repeats 1     # Sample-size curves
  %(prog)s importance --models results/models.json         # Coefficient importance
  %(prog)s cv -c config/example_run.yaml -j 4              # Settings from YAML
        """
    )
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    # gen
    parser_gen = subparsers.add_parser('gen', parents=[common], help='Generate a synthetic cohort CSV')
    parser_gen.add_argument('--spec', help='Synthetic spec YAML (default: config/baseline_synthetic.yaml)')
    parser_gen.add_argument('-n', '--n', type=int, help='Number of records (default: 218)')
    parser_gen.add_argument('-o', '--out', help='Output CSV path')
    parser_gen.set_defaults(func=cmd_gen)

    # summary
    parser_summary = subparsers.add_parser('summary', parents=[common], help='Cohort summary table')
    parser_summary.add_argument('--data', help='Cohort CSV')
    parser_summary.add_argument('--schema', help='Feature schema YAML')
    parser_summary.add_argument('-o', '--out', help='Output CSV path')
    parser_summary.set_defaults(func=cmd_summary)

    # cv
    parser_cv = subparsers.add_parser('cv', parents=[common], help='Run nested cross-validation')
    parser_cv.add_argument('--data', help='Cohort CSV with stage-2 features')
    parser_cv.add_argument('--schema', help='Feature schema YAML')
    parser_cv.add_argument('-o', '--out-dir', dest='out', help='Output directory (default: results)')
    parser_cv.add_argument('--outer-folds', type=int, help='Outer folds (default: 10)')
    parser_cv.add_argument('--inner-folds', type=int, help='Inner folds (default: 5)')
    parser_cv.add_argument('--svg', action='store_const', const=True, help='Also render the pooled ROC as SVG')
    parser_cv.set_defaults(func=cmd_cv)

    # simulate
    parser_sim = subparsers.add_parser('simulate', parents=[common], help='Sample-size simulation')
    parser_sim.add_argument('--data', help='Cohort CSV with stage-2 features')
    parser_sim.add_argument('--schema', help='Feature schema YAML')
    parser_sim.add_argument('-o', '--out-dir', dest='out', help='Output directory (default: results)')
    parser_sim.add_argument('--fractions', type=_fractions, help='Comma-separated fractions (default: 0.1,...,1.0)')
    parser_sim.add_argument('--repeats', type=int, help='Resampling repeats per fraction (default: 3)')
    parser_sim.add_argument('--no-resample', dest='resample', action='store_const', const=False,
                            help='Reuse the core rows as-is (fraction 1.0 only)')
    parser_sim.add_argument('--outer-folds', type=int, help='Outer folds (default: 10)')
    parser_sim.add_argument('--inner-folds', type=int, help='Inner folds (default: 5)')
    parser_sim.add_argument('--svg', action='store_const', const=True, help='Also render the curves as SVG')
    parser_sim.set_defaults(func=cmd_simulate)

    # importance
    parser_imp = subparsers.add_parser('importance', parents=[common], help='Feature importance')
    parser_imp.add_argument('--models', help='models.json written by cv')
    parser_imp.add_argument('--data', help='Cohort CSV (required for permutation)')
    parser_imp.add_argument('--schema', help='Feature schema YAML')
    parser_imp.add_argument('--method', help='coefficient or permutation (default: coefficient)')
    parser_imp.add_argument('--target', help='ensemble1, ensemble2, multi_stage or all (default: all)')
    parser_imp.add_argument('--repeats', type=int, help='Shuffles per feature (default: 5)')
    parser_imp.add_argument('-o', '--out', help='Output CSV path')
    parser_imp.set_defaults(func=cmd_importance)

    return parser


def resolve_config(args: argparse.Namespace):
    """Merge the command's config-file section with explicit flags."""
    file_values = load_run_file(args.config).get(args.command, {})
    flags = {key: value for key, value in vars(args).items() if key not in _META_KEYS}
    if args.command in _PARALLEL_COMMANDS:
        flags["n_jobs"] = args.jobs
    return build_run_config(args.command, file_values, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    load_environment()
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    setup_logging(args.log_level, args.log_file or os.getenv(LOG_FILE_ENV))

    try:
        config = resolve_config(args)
        return args.func(config)
    except (*USAGE_ERRORS, ValidationError, OSError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
