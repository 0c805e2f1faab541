"""Bundle and assertion loading: field requirements, invariants, dataset checks."""

import json

import pytest

from studyrepro.errors import InvariantViolation, ParseError
from studyrepro.study import (
    Assertion,
    AssertionKind,
    ColumnSpec,
    MetricClass,
    SampleRows,
    StudyBundle,
    WarningClass,
    load_assertions,
    load_study_bundle,
    save_bundle,
    validate_dataset,
)


def test_load_toy_bundle(toy_bundle):
    assert toy_bundle.study_id == "toy2024screening"
    assert toy_bundle.title.startswith("Cognitive screening scores")
    assert len(toy_bundle.columns) == 6
    assert toy_bundle.columns[0].name == "PID"
    assert len(toy_bundle.ground_rules) == 5
    assert toy_bundle.sample_rows.header[0] == "PID"
    assert len(toy_bundle.sample_rows.rows) == 3


def test_dataset_path_resolved_against_bundle_dir(toy_bundle, toy_bundle_path):
    assert toy_bundle.dataset_path.is_absolute()
    assert toy_bundle.dataset_path == (toy_bundle_path.parent / "toy_screening.csv").resolve()


def test_load_mci_bundle(mci_bundle_path):
    bundle = load_study_bundle(mci_bundle_path)
    assert bundle.study_id == "kiselica2023examining"
    assert len(bundle.columns) == 21
    etpr = next(c for c in bundle.columns if c.name == "NACCETPR")
    assert etpr.value_map is not None
    assert len(etpr.value_map) == 32


def test_missing_bundle_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_study_bundle(tmp_path / "nope.json")


def test_bundle_missing_field_names_locus(tmp_path):
    doc = {"study_id": "x", "title": "t"}
    path = tmp_path / "b.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError) as exc:
        load_study_bundle(path)
    assert "abstract" in str(exc.value)


def test_bundle_bad_json_reports_line(tmp_path):
    path = tmp_path / "b.json"
    path.write_text('{"study_id": "x",\n  broken')
    with pytest.raises(ParseError) as exc:
        load_study_bundle(path)
    assert exc.value.locus is not None


def test_bundle_round_trip(toy_bundle, tmp_path):
    out = tmp_path / "again.json"
    save_bundle(toy_bundle, out)
    again = load_study_bundle(out)
    assert again == toy_bundle


def test_column_rejects_duplicate_codes():
    with pytest.raises(InvariantViolation):
        ColumnSpec("SEX", "Sex", "Form A1", value_map=(("1", "Male"), ("1", "Female")))


def test_column_rejects_multiline_name():
    with pytest.raises(InvariantViolation):
        ColumnSpec("A\nB", "desc", "Form")


def test_sample_rows_ragged_rejected():
    with pytest.raises(InvariantViolation):
        SampleRows(header=("A", "B"), rows=(("1",),))


def test_bundle_duplicate_column_names_rejected(toy_bundle):
    cols = toy_bundle.columns + (toy_bundle.columns[0],)
    with pytest.raises(InvariantViolation) as exc:
        StudyBundle(
            study_id=toy_bundle.study_id,
            title=toy_bundle.title,
            abstract_text=toy_bundle.abstract_text,
            methods_text=toy_bundle.methods_text,
            columns=cols,
            ground_rules=toy_bundle.ground_rules,
            sample_rows=toy_bundle.sample_rows,
            dataset_path=toy_bundle.dataset_path,
        )
    assert "PID" in str(exc.value)


def test_bundle_empty_abstract_rejected(toy_bundle):
    with pytest.raises(InvariantViolation):
        StudyBundle(
            study_id="x",
            title="t",
            abstract_text="   \n",
            methods_text=toy_bundle.methods_text,
            columns=(),
            ground_rules=(),
            sample_rows=SampleRows((), ()),
            dataset_path=toy_bundle.dataset_path,
        )


# --- assertions ---------------------------------------------------------------


def test_load_toy_assertions(toy_assertions):
    assert [a.assertion_id for a in toy_assertions] == [
        "t-mean-g1",
        "t-mean-g2",
        "t-range-age",
        "t-bool-sex",
    ]
    point = toy_assertions[0]
    assert point.kind is AssertionKind.NUMERIC_POINT
    assert point.metric_class is MetricClass.MEAN
    assert point.expected_point == 25.0
    rng = toy_assertions[2]
    assert rng.kind is AssertionKind.NUMERIC_RANGE
    assert rng.expected_range == (71.0, 73.0)
    flag = toy_assertions[3]
    assert flag.kind is AssertionKind.BOOLEAN
    assert flag.expected_bool is True


def test_registry_order_preserved(registry_dir):
    ids = [a.assertion_id for a in load_assertions(registry_dir / "all_studies.json")]
    assert len(ids) == 35
    assert ids[:3] == ["kurasz-01", "kurasz-02", "kurasz-03"]
    assert ids == sorted(ids, key=ids.index)


def test_assertion_expected_must_match_kind():
    with pytest.raises(InvariantViolation):
        Assertion(
            assertion_id="a1",
            description="d",
            kind=AssertionKind.BOOLEAN,
            metric_class=MetricClass.OTHER,
            expected_point=1.0,
        )


def test_assertion_exactly_one_expected():
    with pytest.raises(InvariantViolation):
        Assertion(
            assertion_id="a1",
            description="d",
            kind=AssertionKind.NUMERIC_POINT,
            metric_class=MetricClass.MEAN,
            expected_point=1.0,
            expected_bool=True,
        )


def test_assertion_range_low_over_high_rejected():
    with pytest.raises(InvariantViolation):
        Assertion(
            assertion_id="a1",
            description="d",
            kind=AssertionKind.NUMERIC_RANGE,
            metric_class=MetricClass.MEDIAN,
            expected_range=(75.0, 74.0),
        )


def test_duplicate_assertion_ids_rejected(tmp_path):
    rows = [
        {"id": "a", "description": "d", "kind": "boolean", "metric_class": "other", "expected": True},
        {"id": "a", "description": "d", "kind": "boolean", "metric_class": "other", "expected": False},
    ]
    path = tmp_path / "dupes.json"
    path.write_text(json.dumps(rows))
    with pytest.raises(InvariantViolation):
        load_assertions(path)


def test_assertion_unknown_kind_rejected(tmp_path):
    rows = [{"id": "a", "description": "d", "kind": "fancy", "metric_class": "mean", "expected": 1}]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(rows))
    with pytest.raises(ParseError) as exc:
        load_assertions(path)
    assert "fancy" in str(exc.value)


def test_assertion_boolean_expected_must_be_bool(tmp_path):
    rows = [{"id": "a", "description": "d", "kind": "boolean", "metric_class": "other", "expected": 1}]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(rows))
    with pytest.raises(ParseError):
        load_assertions(path)


def test_empty_registry_file_is_empty_list(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    assert load_assertions(path) == []


# --- dataset validation --------------------------------------------------------


def test_validate_dataset_clean(toy_bundle):
    assert validate_dataset(toy_bundle) == []


def test_validate_dataset_missing_file(mci_bundle_path):
    bundle = load_study_bundle(mci_bundle_path)
    warnings = validate_dataset(bundle)
    assert [w.warning_class for w in warnings] == [WarningClass.MISSING_DATASET]
    assert "investigator_nacc56.csv" in warnings[0].detail


def test_validate_dataset_missing_column(toy_bundle, tmp_path):
    csv_path = tmp_path / "partial.csv"
    csv_path.write_text("PID,AGE\n1,70\n")
    bundle = StudyBundle(
        study_id=toy_bundle.study_id,
        title=toy_bundle.title,
        abstract_text=toy_bundle.abstract_text,
        methods_text=toy_bundle.methods_text,
        columns=toy_bundle.columns,
        ground_rules=toy_bundle.ground_rules,
        sample_rows=toy_bundle.sample_rows,
        dataset_path=csv_path,
    )
    classes = {w.warning_class for w in validate_dataset(bundle)}
    assert WarningClass.MISSING_COLUMN in classes
    assert WarningClass.SAMPLE_HEADER_MISMATCH in classes
