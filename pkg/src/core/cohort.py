"""
Cohort handling for cascade-uq.
CSV ingestion with missing-row exclusion, synthetic cohorts drawn from published
group statistics, deterministic stratified splitting and the baseline table.
"""

import csv
import io
import math
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.errors import ConfigError, DataValidationError, DegenerateDataError, SchemaError
from src.core.models import (
    Cohort,
    Exclusion,
    FeatureSchema,
    FoldPlan,
    PatientRecord,
    SummaryRow,
    SummaryTable,
    SyntheticSpec,
)
from src.reporting.report_writer import atomic_write_text

logger = logging.getLogger(__name__)

ID_COLUMN = "id"
LABEL_COLUMN = "response"
MISSING_TOKENS = {"", "na", "nan", "null", "none"}

# Positions in a categorical level's (responder, non_responder) proportion pair
RESPONDER_PROPORTION = 0
NON_RESPONDER_PROPORTION = 1

DEFAULT_SCHEMA = FeatureSchema(
    stage1=[
        "age", "male",
        "race_african", "race_asian", "race_caucasian", "race_hispanic", "race_indian",
        "smoking", "dm", "htn", "mi", "cad", "cabg", "pci",
        "nyha_ii", "nyha_iii", "nyha_iv",
        "acei_arb", "qrsd", "lbbb",
    ],
    stage2=[
        "srs", "esv", "lvef", "mass", "stroke_volume", "wt_pct", "wt_sum", "concordance",
        "scar_pct", "dia_pbw", "dia_pk", "dia_ps", "dia_pp", "dia_psd",
        "sys_pbw", "sys_pk", "sys_pp", "sys_psd",
        "ede", "edsi", "edv", "ese", "essi",
    ],
    binary=[
        "male",
        "race_african", "race_asian", "race_caucasian", "race_hispanic", "race_indian",
        "smoking", "dm", "htn", "mi", "cad", "cabg", "pci",
        "nyha_ii", "nyha_iii", "nyha_iv",
        "acei_arb", "lbbb", "concordance",
    ],
    one_hot_groups={
        "race": ["race_african", "race_asian", "race_caucasian", "race_hispanic", "race_indian"],
        "nyha": ["nyha_ii", "nyha_iii", "nyha_iv"],
    },
    clamp={
        "age": (18.0, 110.0),
        "qrsd": (40.0, 300.0),
        "lvef": (0.0, 100.0),
        "esv": (0.0, None),
        "edv": (0.0, None),
        "stroke_volume": (0.0, None),
        "mass": (0.0, None),
        "srs": (0.0, None),
        "scar_pct": (0.0, 100.0),
        "wt_pct": (0.0, None),
        "wt_sum": (0.0, None),
    },
)


def stage1_schema(schema: FeatureSchema) -> FeatureSchema:
    """Drop every stage-2 name from a schema (for stage-1-only inputs)."""
    keep = set(schema.stage1)
    return FeatureSchema(
        stage1=list(schema.stage1),
        stage2=[],
        binary=[n for n in schema.binary if n in keep],
        one_hot_groups={
            g: members for g, members in schema.one_hot_groups.items()
            if all(m in keep for m in members)
        },
        clamp={n: r for n, r in schema.clamp.items() if n in keep},
    )


def validate_record(record: PatientRecord, schema: FeatureSchema) -> PatientRecord:
    """
    Check a record against the schema invariants.

    Stage-2 features are required only when the record carries stage-2 data.

    Raises:
        DataValidationError: naming the offending column
    """
    for name in schema.stage1:
        if name not in record.stage1:
            raise DataValidationError(f"record {record.id} lacks stage-1 feature", column=name)
    if record.stage2:
        for name in schema.stage2:
            if name not in record.stage2:
                raise DataValidationError(f"record {record.id} lacks stage-2 feature", column=name)

    for name in schema.binary:
        if record.has(name) and record.value(name) not in (0.0, 1.0):
            raise DataValidationError(
                f"binary feature must be 0 or 1, got {record.value(name)}", column=name
            )

    for group, members in schema.one_hot_groups.items():
        if all(record.has(m) for m in members):
            total = sum(record.value(m) for m in members)
            if total != 1.0:
                raise DataValidationError(
                    f"one-hot group '{group}' must sum to 1, got {total:g}", column=members[0]
                )

    if record.has("lvef") and not 0.0 <= record.value("lvef") <= 100.0:
        raise DataValidationError(f"LVEF must lie in [0, 100], got {record.value('lvef')}", column="lvef")
    if record.has("qrsd") and record.value("qrsd") <= 0.0:
        raise DataValidationError(f"QRSd must be positive, got {record.value('qrsd')}", column="qrsd")
    return record


# ========== CSV INGESTION ==========

def _parse_number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"not a number: '{text}'", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataValidationError(f"value must be finite, got '{text}'", row=row, column=column)
    return value


def _read_table(path: str) -> pd.DataFrame:
    """Read every field as text; ragged rows and undecodable bytes are malformed input."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        line = raw.count(b"\n", 0, exc.start) + 1
        raise DataValidationError(
            f"{path} is not valid UTF-8 (byte {exc.start}, line {line})", row=line - 1 if line > 1 else None,
        ) from None

    # pandas pads short rows with "", indistinguishable from empty fields
    rows = [fields for fields in csv.reader(io.StringIO(text)) if fields]
    if rows:
        width = len(rows[0])
        for position, fields in enumerate(rows[1:], start=1):
            if len(fields) != width:
                raise DataValidationError(f"expected {width} fields, found {len(fields)}", row=position)

    try:
        return pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path} is empty") from None
    except pd.errors.ParserError as exc:
        raise DataValidationError(f"{path} could not be parsed: {exc}") from None


def load_cohort(
    path: str,
    schema: Optional[FeatureSchema] = None,
    include_stage2: bool = True,
) -> Cohort:
    """
    Load a cohort from a delimited text file.

    Rows are numbered from 1 after the header. A row with any missing required
    value is excluded and reported on the cohort rather than imputed.

    Args:
        path: CSV file with a header row, optional `id` column and `response` label
        schema: Active feature schema (default: DEFAULT_SCHEMA)
        include_stage2: Require and load the stage-2 columns

    Returns:
        Cohort with provenance set to the file path

    Raises:
        SchemaError: unknown or missing columns
        DataValidationError: empty, ragged or undecodable file, or a malformed
            value (row and column named)
    """
    schema = schema or DEFAULT_SCHEMA
    active = schema if include_stage2 else stage1_schema(schema)

    frame = _read_table(path)

    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    known = set(schema.all_features) | {ID_COLUMN, LABEL_COLUMN}
    unknown = [c for c in columns if c not in known]
    if unknown:
        raise SchemaError(f"unknown columns in {path}: {', '.join(unknown)}")
    required = active.all_features + [LABEL_COLUMN]
    missing_columns = [c for c in required if c not in columns]
    if missing_columns:
        raise SchemaError(f"{path} lacks required columns: {', '.join(missing_columns)}")
    if frame.empty:
        raise DataValidationError(f"{path} has a header but no data rows")

    has_ids = ID_COLUMN in columns
    records: List[PatientRecord] = []
    exclusions: List[Exclusion] = []
    seen_ids: Dict[str, int] = {}

    for position, raw in enumerate(frame.to_dict(orient="records"), start=1):
        record_id = raw[ID_COLUMN].strip() if has_ids else f"row{position}"
        if not record_id:
            raise DataValidationError("empty id", row=position, column=ID_COLUMN)
        if record_id in seen_ids:
            raise DataValidationError(
                f"duplicate id '{record_id}' (first seen on row {seen_ids[record_id]})",
                row=position, column=ID_COLUMN,
            )
        seen_ids[record_id] = position

        missing = [c for c in required if raw[c].strip().lower() in MISSING_TOKENS]
        if missing:
            exclusions.append(Exclusion(row=position, id=record_id, missing=missing))
            continue

        values = {c: _parse_number(raw[c].strip(), position, c) for c in required}
        label = values.pop(LABEL_COLUMN)
        if label not in (0.0, 1.0):
            raise DataValidationError(f"label must be 0 or 1, got {label:g}", row=position, column=LABEL_COLUMN)

        record = PatientRecord(
            id=record_id,
            stage1={n: values[n] for n in active.stage1},
            stage2={n: values[n] for n in active.stage2},
            label=int(label),
        )
        try:
            validate_record(record, active)
        except DataValidationError as exc:
            raise DataValidationError(str(exc), row=position, column=exc.column) from None
        records.append(record)

    if exclusions:
        logger.info(
            f"Excluded {len(exclusions)} of {len(frame)} rows with missing values",
            extra={"extra_data": {"path": str(path), "excluded_rows": [e.row for e in exclusions]}},
        )

    return Cohort(records=records, schema=active, provenance=str(path), exclusions=exclusions)


def cohort_to_frame(cohort: Cohort) -> pd.DataFrame:
    """Tabular view in the column layout load_cohort reads back."""
    names = cohort.feature_schema.stage1 + (cohort.feature_schema.stage2 if cohort.has_stage2 else [])
    frame = pd.DataFrame(cohort.matrix(names), columns=names)
    frame.insert(0, ID_COLUMN, cohort.ids())
    frame[LABEL_COLUMN] = cohort.labels()
    return frame


def write_cohort_csv(cohort: Cohort, path: str) -> None:
    """Write a cohort as CSV (id, features, response), atomically."""
    text = cohort_to_frame(cohort).to_csv(index=False, float_format="%.12g", lineterminator="\n")
    atomic_write_text(path, text)


# ========== SYNTHETIC COHORTS ==========

def _clamp(values: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return values
    low, high = bounds
    return np.clip(values, -np.inf if low is None else low, np.inf if high is None else high)


def _equicorrelation_factor(k: int, rho: float) -> np.ndarray:
    corr = np.full((k, k), rho)
    np.fill_diagonal(corr, 1.0)
    return np.linalg.cholesky(corr)


def schema_from_spec(spec: SyntheticSpec) -> FeatureSchema:
    """Schema implied by a synthetic spec, in declaration order per stage."""
    staged: Dict[int, List[str]] = {1: [], 2: []}
    binary: List[str] = []
    for name, feature in spec.continuous.items():
        staged[feature.stage].append(name)
    for name, feature in spec.binary.items():
        staged[feature.stage].append(name)
        binary.append(name)
    for feature in spec.categorical.values():
        staged[feature.stage].extend(feature.levels)
        binary.extend(feature.levels)
    clamp = {n: f.clamp for n, f in spec.continuous.items() if f.clamp is not None}
    return FeatureSchema(
        stage1=staged[1],
        stage2=staged[2],
        binary=binary,
        one_hot_groups={g: list(f.levels) for g, f in spec.categorical.items()},
        clamp=clamp,
    )


def synthesize_cohort(
    spec: SyntheticSpec,
    n: int,
    seed: int,
    schema: Optional[FeatureSchema] = None,
) -> Cohort:
    """
    Draw a synthetic cohort from per-class marginal statistics.

    Labels are drawn first at the spec prevalence, then features in declaration
    order: continuous (per-class normal, optionally in equicorrelated blocks,
    clamped to physical ranges), binary (per-class Bernoulli) and categorical
    one-hot groups. Identical (spec, n, seed) gives an identical cohort.

    Raises:
        ConfigError: n < 2
        SchemaError: the spec does not produce every feature of `schema`
    """
    if n < 2:
        raise ConfigError(f"synthetic cohort needs n >= 2, got {n}")
    schema = schema or schema_from_spec(spec)
    rng = np.random.default_rng(seed)

    labels = (rng.random(n) < spec.prevalence).astype(int)
    responder = labels == 1
    columns: Dict[str, np.ndarray] = {}

    blocks = {block.features[0]: block for block in spec.correlations}
    in_block = {name for block in spec.correlations for name in block.features}
    for name, feature in spec.continuous.items():
        if name in in_block and name not in blocks:
            continue
        if name in blocks:
            block = blocks[name]
            z = rng.standard_normal((n, len(block.features))) @ _equicorrelation_factor(
                len(block.features), block.rho
            ).T
            targets = list(zip(block.features, z.T))
        else:
            targets = [(name, rng.standard_normal(n))]
        for target, shared in targets:
            params = spec.continuous[target]
            mean = np.where(responder, params.responder[0], params.non_responder[0])
            sd = np.where(responder, params.responder[1], params.non_responder[1])
            bounds = params.clamp if params.clamp is not None else schema.clamp.get(target)
            columns[target] = _clamp(mean + sd * shared, bounds)

    for name, feature in spec.binary.items():
        p = np.where(responder, feature.responder, feature.non_responder)
        columns[name] = (rng.random(n) < p).astype(float)

    for group, feature in spec.categorical.items():
        levels = list(feature.levels)
        chosen = np.empty(n, dtype=int)
        draws = rng.random(n)
        for column, mask in ((RESPONDER_PROPORTION, responder), (NON_RESPONDER_PROPORTION, ~responder)):
            weights = np.array([feature.levels[level][column] for level in levels], dtype=float)
            cumulative = np.cumsum(weights / weights.sum())
            chosen[mask] = np.minimum(np.searchsorted(cumulative, draws[mask], side="right"), len(levels) - 1)
        for index, level in enumerate(levels):
            columns[level] = (chosen == index).astype(float)

    missing = [name for name in schema.all_features if name not in columns]
    if missing:
        raise SchemaError(f"synthetic spec does not define: {', '.join(missing)}")

    stage1 = {name: columns[name].tolist() for name in schema.stage1}
    stage2 = {name: columns[name].tolist() for name in schema.stage2}
    records = []
    for i in range(n):
        record = PatientRecord(
            id=f"SYN-{i:04d}",
            stage1={name: values[i] for name, values in stage1.items()},
            stage2={name: values[i] for name, values in stage2.items()},
            label=int(labels[i]),
        )
        records.append(validate_record(record, schema))

    logger.debug(
        "Synthesized cohort",
        extra={"extra_data": {"n": n, "seed": seed, "responders": int(labels.sum())}},
    )
    return Cohort(records=records, schema=schema, provenance=f"synthetic:seed={seed}")


# ========== SPLITTING ==========

def _stratified_assignment(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per position; classes are dealt round-robin continuing across classes."""
    folds = np.empty(len(labels), dtype=int)
    offset = 0
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        shuffled = rng.permutation(members)
        folds[shuffled] = (offset + np.arange(len(shuffled))) % k
        offset = (offset + len(shuffled)) % k
    return folds


def stratified_kfold(cohort: Cohort, k: int, seed: int) -> FoldPlan:
    """
    Assign every record to one of k folds, stratified by label.

    Fold sizes differ by at most one, as do each class's per-fold counts.

    Raises:
        ConfigError: k < 2 or a class has fewer than k members
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    labels = cohort.labels()
    for cls in (0, 1):
        count = int((labels == cls).sum())
        if count < k:
            raise ConfigError(f"class {cls} has {count} members, fewer than k={k} folds")
    folds = _stratified_assignment(labels, k, np.random.default_rng(seed))
    return FoldPlan(k=k, seed=seed, assignments={rid: int(f) for rid, f in zip(cohort.ids(), folds)})


def inner_fold_indices(labels: Sequence[int], k: int, seed: int) -> List[np.ndarray]:
    """
    Stratified held-out index sets for inner cross-validation.

    The fold count drops to the minority class size when that is smaller than k,
    so every held-out set contains both classes.

    Raises:
        DegenerateDataError: fewer than two members in some class
    """
    labels = np.asarray(labels, dtype=int)
    minority = min(int((labels == 0).sum()), int((labels == 1).sum()))
    effective = min(k, minority)
    if effective < 2:
        raise DegenerateDataError(
            f"inner cross-validation needs >= 2 members per class, minority has {minority}"
        )
    if effective < k:
        logger.debug(f"Reduced inner folds from {k} to {effective} (minority class size)")
    folds = _stratified_assignment(labels, effective, np.random.default_rng(seed))
    return [np.flatnonzero(folds == f) for f in range(effective)]


def _allocate(size: int, pool: Dict[int, List[int]], total: int, positives: int) -> Dict[int, int]:
    """Class counts for a stratified slice of `size`, bounded by what remains in the pool."""
    want_pos = int(math.floor(size * positives / total + 0.5))
    want_pos = min(want_pos, len(pool[1]))
    want_neg = size - want_pos
    if want_neg > len(pool[0]):
        want_neg = len(pool[0])
        want_pos = size - want_neg
    return {0: want_neg, 1: want_pos}


def slice_validation(
    train_ids: Sequence[str],
    sizes: Tuple[int, int],
    seed: int,
    labels: Sequence[int],
) -> Tuple[List[str], List[str], List[str]]:
    """
    Carve two stratified validation slices out of a training fold.

    Args:
        train_ids: Training ids in cohort order
        sizes: (n1, n2) slice sizes
        seed: Slice seed
        labels: Labels aligned with train_ids

    Returns:
        (core_train, val1, val2), each in the input order

    Raises:
        ConfigError: sizes negative or n1 + n2 >= len(train_ids)
        DegenerateDataError: training ids hold a single class
    """
    n1, n2 = sizes
    total = len(train_ids)
    labels = np.asarray(labels, dtype=int)
    if len(labels) != total:
        raise DataValidationError("labels must align with train_ids")
    if n1 < 0 or n2 < 0:
        raise ConfigError(f"validation sizes must be >= 0, got {sizes}")
    if n1 + n2 >= total:
        raise ConfigError(f"validation sizes {sizes} leave no core training rows out of {total}")
    positives = int(labels.sum())
    if positives == 0 or positives == total:
        raise DegenerateDataError("training ids must contain both classes")

    rng = np.random.default_rng(seed)
    pool = {cls: list(rng.permutation(np.flatnonzero(labels == cls))) for cls in (0, 1)}
    slices = []
    for size in (n1, n2):
        counts = _allocate(size, pool, total, positives)
        chosen = []
        for cls in (0, 1):
            chosen.extend(pool[cls][:counts[cls]])
            pool[cls] = pool[cls][counts[cls]:]
        slices.append(sorted(int(i) for i in chosen))

    taken = set(slices[0]) | set(slices[1])
    core = [train_ids[i] for i in range(total) if i not in taken]
    return core, [train_ids[i] for i in slices[0]], [train_ids[i] for i in slices[1]]


# ========== BASELINE TABLE ==========

def _format_continuous(values: np.ndarray) -> str:
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return f"{float(np.mean(values)):.1f} ± {sd:.1f}"


def _format_count(values: np.ndarray) -> str:
    count = int(values.sum())
    share = 100.0 * count / len(values) if len(values) else 0.0
    return f"{count} ({share:.1f}%)"


def cohort_summary(cohort: Cohort) -> SummaryTable:
    """
    Baseline characteristics per class with univariate tests.

    Continuous features get mean ± sd and a Welch t-test; binary features get
    count (%) and a Pearson chi-square test. A binary feature with a zero
    marginal has no test.

    Raises:
        DegenerateDataError: empty or single-class cohort
    """
    from src.core import stats

    labels = cohort.labels()
    if len(labels) == 0 or labels.min() == labels.max():
        raise DegenerateDataError("cohort_summary needs a cohort with both classes")

    schema = cohort.feature_schema
    names = schema.stage1 + (schema.stage2 if cohort.has_stage2 else [])
    matrix = cohort.matrix(names)
    responder = labels == 1
    rows: List[SummaryRow] = []

    for j, name in enumerate(names):
        column = matrix[:, j]
        resp, non = column[responder], column[~responder]
        if name in schema.binary:
            table = [
                [int(resp.sum()), int(len(resp) - resp.sum())],
                [int(non.sum()), int(len(non) - non.sum())],
            ]
            try:
                result = stats.chi_square_independence(table)
            except DegenerateDataError:
                result = None
            rows.append(SummaryRow(
                feature=name,
                stage=schema.stage_of(name),
                kind="binary",
                overall=_format_count(column),
                responders=_format_count(resp),
                non_responders=_format_count(non),
                test=result.method if result else None,
                statistic=result.statistic if result else None,
                p_value=result.p_value if result else None,
            ))
        else:
            try:
                result = stats.two_sample_t(resp, non)
            except DegenerateDataError:
                result = None
            rows.append(SummaryRow(
                feature=name,
                stage=schema.stage_of(name),
                kind="continuous",
                overall=_format_continuous(column),
                responders=_format_continuous(resp),
                non_responders=_format_continuous(non),
                test=result.method if result else None,
                statistic=result.statistic if result else None,
                p_value=result.p_value if result else None,
            ))

    return SummaryTable(
        n=len(labels),
        n_responders=int(responder.sum()),
        n_non_responders=int((~responder).sum()),
        rows=rows,
    )
