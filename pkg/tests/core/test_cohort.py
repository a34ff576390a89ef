import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy import stats as sp_stats

from src.core.cohort import (
    DEFAULT_SCHEMA,
    cohort_summary,
    inner_fold_indices,
    load_cohort,
    slice_validation,
    stratified_kfold,
    synthesize_cohort,
    validate_record,
    write_cohort_csv,
)
from src.core.errors import ConfigError, DataValidationError, DegenerateDataError, SchemaError
from src.core.models import (
    CategoricalFeatureSpec,
    Cohort,
    ContinuousFeatureSpec,
    CorrelationBlock,
    FeatureSchema,
    PatientRecord,
    SyntheticSpec,
)

BINARY_ONES = {"race_asian", "nyha_iii", "lbbb", "acei_arb"}
CONTINUOUS_DEFAULTS = {
    "age": 62.0, "qrsd": 158.0, "srs": 18.0, "esv": 190.0, "lvef": 28.0, "mass": 215.0,
    "stroke_volume": 63.0, "wt_pct": 22.0, "wt_sum": 11.0, "scar_pct": 22.0,
    "dia_pbw": 169.0, "dia_pk": 8.4, "dia_ps": 2.5, "dia_pp": 221.0, "dia_psd": 52.0,
    "sys_pbw": 158.0, "sys_pk": 8.0, "sys_pp": 132.0, "sys_psd": 50.0,
    "ede": 0.6, "edsi": 0.8, "edv": 255.0, "ese": 0.6, "essi": 0.8,
}


def _row(record_id, label, **overrides):
    row = {"id": record_id}
    for name in DEFAULT_SCHEMA.all_features:
        if name in DEFAULT_SCHEMA.binary:
            row[name] = 1 if name in BINARY_ONES else 0
        else:
            row[name] = CONTINUOUS_DEFAULTS[name]
    row["response"] = label
    row.update(overrides)
    return row


def _write(tmp_path, rows, drop=()):
    frame = pd.DataFrame(rows).drop(columns=list(drop))
    path = tmp_path / "cohort.csv"
    frame.to_csv(path, index=False)
    return str(path)


def _small_cohort(values_by_class, name="age", binary=False):
    schema = FeatureSchema(stage1=[name], stage2=[], binary=[name] if binary else [])
    records = []
    for label, values in values_by_class.items():
        for value in values:
            records.append(PatientRecord(id=f"r{len(records)}", stage1={name: value}, label=label))
    return Cohort(records=records, schema=schema, provenance="test")


# ---------- loading ----------

def test_load_complete_rows(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0), _row("c", 1)])
    cohort = load_cohort(path)

    assert len(cohort.records) == 3
    assert cohort.ids() == ["a", "b", "c"]
    assert cohort.labels().tolist() == [1, 0, 1]
    assert cohort.has_stage2
    assert cohort.exclusions == []
    assert cohort.provenance == path


def test_row_missing_qrsd_is_excluded_and_reported(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0, qrsd=""), _row("c", 1)])
    cohort = load_cohort(path)

    assert cohort.ids() == ["a", "c"]
    assert len(cohort.exclusions) == 1
    assert cohort.exclusions[0].row == 2
    assert cohort.exclusions[0].id == "b"
    assert cohort.exclusions[0].missing == ["qrsd"]
    assert len(cohort.records) + len(cohort.exclusions) == 3


def test_missing_lvef_column_is_a_schema_error(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0)], drop=["lvef"])
    with pytest.raises(SchemaError, match="lvef"):
        load_cohort(path)


def test_stage_one_only_file_loads_without_stage_two(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0)], drop=DEFAULT_SCHEMA.stage2)
    cohort = load_cohort(path, include_stage2=False)
    assert not cohort.has_stage2
    assert cohort.records[0].stage2 == {}


def test_unknown_column_is_a_schema_error(tmp_path):
    path = _write(tmp_path, [_row("a", 1, bmi=27.0)])
    with pytest.raises(SchemaError, match="bmi"):
        load_cohort(path)


def test_malformed_value_names_row_and_column(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0, age="sixty")])
    with pytest.raises(DataValidationError) as exc_info:
        load_cohort(path)
    assert exc_info.value.row == 2
    assert exc_info.value.column == "age"


def test_broken_one_hot_group_is_rejected(tmp_path):
    path = _write(tmp_path, [_row("a", 1, race_african=1)])
    with pytest.raises(DataValidationError) as exc_info:
        load_cohort(path)
    assert exc_info.value.row == 1


def test_lvef_out_of_range_is_rejected(tmp_path):
    path = _write(tmp_path, [_row("a", 1, lvef=140.0)])
    with pytest.raises(DataValidationError, match="LVEF"):
        load_cohort(path)


def test_empty_file_is_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataValidationError):
        load_cohort(str(path))


def _rewrite_line(path, index, edit):
    lines = open(path, encoding="utf-8").read().splitlines()
    lines[index] = edit(lines[index])
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def test_row_with_extra_field_names_its_row(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0), _row("c", 1)])
    _rewrite_line(path, 2, lambda line: line + ",7")
    with pytest.raises(DataValidationError, match="fields") as exc_info:
        load_cohort(path)
    assert exc_info.value.row == 2


def test_row_with_missing_fields_is_malformed_not_excluded(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0), _row("c", 1)])
    _rewrite_line(path, 3, lambda line: line.rsplit(",", 2)[0])
    with pytest.raises(DataValidationError, match="fields") as exc_info:
        load_cohort(path)
    assert exc_info.value.row == 3


def test_invalid_utf8_names_its_row(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("b", 0)])
    with open(path, "rb") as handle:
        lines = handle.read().split(b"\n")
    lines[2] = lines[2].replace(b"b,", b"\xff\xfe,", 1)
    with open(path, "wb") as handle:
        handle.write(b"\n".join(lines))
    with pytest.raises(DataValidationError, match="UTF-8") as exc_info:
        load_cohort(path)
    assert exc_info.value.row == 2


def test_duplicate_ids_are_rejected(tmp_path):
    path = _write(tmp_path, [_row("a", 1), _row("a", 0)])
    with pytest.raises(DataValidationError, match="duplicate"):
        load_cohort(path)


def test_written_cohort_loads_back(tmp_path, cohort):
    path = tmp_path / "out.csv"
    write_cohort_csv(cohort, str(path))
    loaded = load_cohort(str(path))

    assert loaded.ids() == cohort.ids()
    assert np.array_equal(loaded.labels(), cohort.labels())
    names = DEFAULT_SCHEMA.all_features
    assert np.allclose(loaded.matrix(names), cohort.matrix(names), rtol=1e-11)


# ---------- synthesis ----------

def test_prevalence_matches_enrolled_cohort(baseline_spec):
    cohort = synthesize_cohort(baseline_spec, 218, seed=7)
    low, high = sp_stats.binom.interval(0.99, 218, 0.555)

    assert len(cohort.records) == 218
    assert low <= cohort.labels().sum() <= high


def test_default_spec_covers_default_schema(baseline_spec, cohort):
    assert set(cohort.feature_schema.all_features) == set(DEFAULT_SCHEMA.all_features)
    assert set(cohort.feature_schema.stage1) == set(DEFAULT_SCHEMA.stage1)


def test_zero_sd_gives_constant_class_values(baseline_spec):
    continuous = dict(baseline_spec.continuous)
    continuous["lvef"] = ContinuousFeatureSpec(stage=2, responder=(28.8, 0.0), non_responder=(26.9, 0.0))
    spec = baseline_spec.model_copy(update={"continuous": continuous})
    cohort = synthesize_cohort(spec, 100, seed=1)

    for record in cohort.records:
        assert record.stage2["lvef"] == (28.8 if record.label == 1 else 26.9)


def test_categorical_levels_follow_their_class(baseline_spec):
    categorical = dict(baseline_spec.categorical)
    categorical["race"] = CategoricalFeatureSpec(stage=1, levels={
        "race_african": (0.0, 0.0),
        "race_asian": (1.0, 0.0),
        "race_caucasian": (0.0, 0.0),
        "race_hispanic": (0.0, 1.0),
        "race_indian": (0.0, 0.0),
    })
    spec = baseline_spec.model_copy(update={"categorical": categorical})
    cohort = synthesize_cohort(spec, 120, seed=4)

    for record in cohort.records:
        expected = "race_asian" if record.label == 1 else "race_hispanic"
        assert record.stage1[expected] == 1.0


def test_same_seed_gives_identical_cohorts(baseline_spec):
    first = synthesize_cohort(baseline_spec, 80, seed=5)
    second = synthesize_cohort(baseline_spec, 80, seed=5)
    assert first.to_json() == second.to_json()
    assert synthesize_cohort(baseline_spec, 80, seed=6).to_json() != first.to_json()


def test_large_cohort_recovers_class_means(baseline_spec):
    cohort = synthesize_cohort(baseline_spec, 20000, seed=11)
    lvef = cohort.matrix(["lvef"])[:, 0]
    labels = cohort.labels()
    assert abs(lvef[labels == 1].mean() - 28.8) < 0.5
    assert abs(lvef[labels == 0].mean() - 26.9) < 0.5


def test_clamps_and_one_hot_groups_hold(baseline_spec):
    cohort = synthesize_cohort(baseline_spec, 500, seed=2)
    lvef = cohort.matrix(["lvef"])[:, 0]
    assert lvef.min() >= 0.0 and lvef.max() <= 100.0
    nyha = cohort.matrix(["nyha_ii", "nyha_iii", "nyha_iv"])
    assert np.array_equal(nyha.sum(axis=1), np.ones(500))


def test_correlation_block_induces_correlation(baseline_spec):
    volumes = synthesize_cohort(baseline_spec, 3000, seed=4).matrix(["esv", "edv"])
    assert np.corrcoef(volumes.T)[0, 1] > 0.7


def test_synthesis_rejects_tiny_n(baseline_spec):
    with pytest.raises(ConfigError):
        synthesize_cohort(baseline_spec, 1, seed=0)


def test_invalid_spec_is_rejected():
    with pytest.raises(ValidationError):
        SyntheticSpec(prevalence=1.5, continuous={
            "age": ContinuousFeatureSpec(stage=1, responder=(60, 10), non_responder=(62, 10)),
        })
    with pytest.raises(ValidationError):
        CorrelationBlock(features=["a", "b"], rho=1.0)


def test_spec_missing_schema_feature_is_rejected(baseline_spec):
    continuous = {k: v for k, v in baseline_spec.continuous.items() if k != "srs"}
    spec = baseline_spec.model_copy(update={"continuous": continuous})
    with pytest.raises(SchemaError, match="srs"):
        synthesize_cohort(spec, 50, seed=0, schema=DEFAULT_SCHEMA)


# ---------- splitting ----------

def test_kfold_on_enrolled_cohort_size(full_cohort):
    plan = stratified_kfold(full_cohort, 10, seed=0)
    sizes = sorted(plan.fold_sizes(), reverse=True)

    assert sizes == [22] * 8 + [21] * 2
    assert sorted(plan.assignments) == sorted(full_cohort.ids())


def test_kfold_is_stratified(full_cohort):
    plan = stratified_kfold(full_cohort, 10, seed=3)
    labels = dict(zip(full_cohort.ids(), full_cohort.labels()))
    for cls in (0, 1):
        counts = [sum(labels[rid] == cls for rid in plan.fold_ids(f)) for f in range(10)]
        assert max(counts) - min(counts) <= 1


def test_kfold_four_records_two_folds():
    cohort = _small_cohort({0: [1.0, 2.0], 1: [3.0, 4.0]})
    plan = stratified_kfold(cohort, 2, seed=0)
    labels = dict(zip(cohort.ids(), cohort.labels()))
    for fold in range(2):
        assert sorted(labels[rid] for rid in plan.fold_ids(fold)) == [0, 1]


def test_kfold_rejects_small_class():
    cohort = _small_cohort({0: [1.0, 2.0, 3.0], 1: [float(v) for v in range(10)]})
    with pytest.raises(ConfigError):
        stratified_kfold(cohort, 5, seed=0)


def test_kfold_is_deterministic(full_cohort):
    assert stratified_kfold(full_cohort, 10, 9) == stratified_kfold(full_cohort, 10, 9)


def test_validation_slices_partition_training_ids():
    ids = [f"id{i}" for i in range(196)]
    labels = [1 if i % 9 < 5 else 0 for i in range(196)]
    core, val1, val2 = slice_validation(ids, (20, 20), seed=1, labels=labels)

    assert (len(core), len(val1), len(val2)) == (156, 20, 20)
    assert set(core) | set(val1) | set(val2) == set(ids)
    assert not (set(core) & set(val1)) and not (set(val1) & set(val2))
    positions = {rid: i for i, rid in enumerate(ids)}
    for part in (core, val1, val2):
        assert [positions[r] for r in part] == sorted(positions[r] for r in part)
    assert 0 < sum(labels[positions[r]] for r in val1) < 20


def test_zero_sized_slices_keep_everything():
    ids = [f"id{i}" for i in range(10)]
    core, val1, val2 = slice_validation(ids, (0, 0), seed=0, labels=[0, 1] * 5)
    assert core == ids and val1 == [] and val2 == []


def test_oversized_slices_are_rejected():
    ids = [f"id{i}" for i in range(196)]
    with pytest.raises(ConfigError):
        slice_validation(ids, (100, 100), seed=0, labels=[0, 1] * 98)


def test_inner_folds_shrink_to_minority_size():
    labels = [1, 1, 1] + [0] * 20
    folds = inner_fold_indices(labels, 5, seed=0)
    assert len(folds) == 3
    for held_out in folds:
        assert {labels[i] for i in held_out} == {0, 1}
    with pytest.raises(DegenerateDataError):
        inner_fold_indices([1] + [0] * 10, 5, seed=0)


# ---------- baseline table ----------

def test_identical_feature_across_classes_has_p_one():
    table = cohort_summary(_small_cohort({0: [50.0, 60.0, 70.0], 1: [50.0, 60.0, 70.0]}))
    row = table.rows[0]
    assert row.kind == "continuous"
    assert row.statistic == 0.0
    assert row.p_value == pytest.approx(1.0)


def test_identical_binary_proportions_give_zero_chi_square():
    values = {0: [1.0] * 100 + [0.0] * 100, 1: [1.0] * 100 + [0.0] * 100}
    row = cohort_summary(_small_cohort(values, name="male", binary=True)).rows[0]
    assert row.kind == "binary"
    assert row.statistic == pytest.approx(0.0)
    assert row.responders == "100 (50.0%)"


def test_summary_covers_every_feature(cohort):
    table = cohort_summary(cohort)
    assert table.n == len(cohort.records)
    assert table.n_responders + table.n_non_responders == table.n
    assert [r.feature for r in table.rows] == cohort.feature_schema.all_features


def test_summary_rejects_single_class():
    with pytest.raises(DegenerateDataError):
        cohort_summary(_small_cohort({1: [1.0, 2.0, 3.0]}))


# ---------- record validation ----------

SMALL_SCHEMA = FeatureSchema(
    stage1=["qrsd", "lbbb", "nyha_ii", "nyha_iii"],
    stage2=["lvef"],
    binary=["lbbb", "nyha_ii", "nyha_iii"],
    one_hot_groups={"nyha": ["nyha_ii", "nyha_iii"]},
)


def _record(stage2=None, **stage1):
    values = {"qrsd": 150.0, "lbbb": 1.0, "nyha_ii": 0.0, "nyha_iii": 1.0}
    values.update(stage1)
    return PatientRecord(id="R1", stage1=values, stage2={"lvef": 30.0} if stage2 is None else stage2, label=1)


def test_valid_record_passes_through():
    record = _record()
    assert validate_record(record, SMALL_SCHEMA) is record


def test_stage2_is_optional_until_present():
    validate_record(_record(stage2={}), SMALL_SCHEMA)


@pytest.mark.parametrize(
    "record,column",
    [
        (_record(lbbb=0.5), "lbbb"),
        (_record(nyha_ii=1.0), "nyha_ii"),
        (_record(nyha_iii=0.0), "nyha_ii"),
        (_record(qrsd=0.0), "qrsd"),
        (_record(stage2={"lvef": 120.0}), "lvef"),
    ],
)
def test_invalid_values_name_their_column(record, column):
    with pytest.raises(DataValidationError) as excinfo:
        validate_record(record, SMALL_SCHEMA)
    assert excinfo.value.column == column


def test_missing_feature_is_reported():
    record = PatientRecord(id="R2", stage1={"qrsd": 150.0}, label=0)
    with pytest.raises(DataValidationError) as excinfo:
        validate_record(record, SMALL_SCHEMA)
    assert excinfo.value.column == "lbbb"
