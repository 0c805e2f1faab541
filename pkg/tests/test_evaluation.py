"""Alignment rules, operator judgments, report compilation, and candidate mining."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from studyrepro.errors import (
    DuplicateVerdict,
    InvariantViolation,
    MissingVerdict,
    ParseError,
    UnsupportedMetric,
)
from studyrepro.evaluation import (
    TOLERANCE,
    AlignmentRule,
    EvaluationReport,
    Verdict,
    accuracy_display,
    auto_align,
    compile_report,
    initial_verdicts,
    judge,
    judgments_to_verdicts,
    load_judgments,
    match_boolean,
    match_numeric,
    match_range,
    not_attempted_verdict,
    report_to_dict,
    rule_for,
    suggest_candidates,
)
from studyrepro.runtime import Message, MessageKind
from studyrepro.study import (
    Assertion,
    AssertionKind,
    MetricClass,
    load_assertions,
)


def point(expected, metric=MetricClass.MEAN, aid="a1"):
    return Assertion(aid, f"point {aid}", AssertionKind.NUMERIC_POINT, metric, expected_point=expected)


def rng(low, high, aid="a1"):
    return Assertion(
        aid, f"range {aid}", AssertionKind.NUMERIC_RANGE, MetricClass.MEDIAN, expected_range=(low, high)
    )


def boolean(expected, aid="a1"):
    return Assertion(aid, f"bool {aid}", AssertionKind.BOOLEAN, MetricClass.OTHER, expected_bool=expected)


# --- numeric point rule -----------------------------------------------------------


@pytest.mark.parametrize(
    "expected,observed,aligned",
    [
        (71.60, 72.60, True),   # boundary: |diff| == 1.0 counts
        (71.60, 70.60, True),
        (57.90, 60.00, False),
        (25.0, 25.0, True),
        (25.0, 26.001, False),
        (0.0, -1.0, True),
        (0.0, -1.0001, False),
    ],
)
def test_match_numeric_cases(expected, observed, aligned):
    assert match_numeric(expected, observed, MetricClass.MEAN) is aligned
    assert match_numeric(expected, observed, MetricClass.PERCENTAGE) is aligned
    assert match_numeric(expected, observed, MetricClass.MEDIAN) is aligned


@pytest.mark.parametrize("metric", [MetricClass.COUNT, MetricClass.OTHER])
def test_match_numeric_refuses_unscorable_metrics(metric):
    with pytest.raises(UnsupportedMetric):
        match_numeric(100.0, 100.0, metric)


# --- range rule ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "observed,aligned",
    [
        (74.0, True),
        (75.0, True),
        (74.5, True),
        (73.0, True),    # low - 1.0, boundary counts
        (76.0, True),    # high + 1.0, boundary counts
        (72.99, False),
        (76.01, False),
        (77.5, False),
    ],
)
def test_match_range_cases(observed, aligned):
    assert match_range((74.0, 75.0), observed) is aligned


# --- boolean rule ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "expected,observed,aligned",
    [(True, True, True), (True, False, False), (False, False, True), (False, True, False)],
)
def test_match_boolean_table(expected, observed, aligned):
    assert match_boolean(expected, observed) is aligned


# --- auto_align dispatch -----------------------------------------------------------------


def test_auto_align_dispatches_by_kind():
    assert auto_align(point(25.0), 25.8) is True
    assert auto_align(rng(71.0, 73.0), 74.0) is True
    assert auto_align(rng(71.0, 73.0), 74.01) is False
    assert auto_align(boolean(True), True) is True


def test_auto_align_count_needs_operator():
    with pytest.raises(UnsupportedMetric):
        auto_align(point(5272.0, metric=MetricClass.COUNT), 5272.0)


def test_rule_for():
    assert rule_for(point(1.0)) is AlignmentRule.NUMERIC_WITHIN_1
    assert rule_for(rng(1.0, 2.0)) is AlignmentRule.RANGE_CONTAINMENT
    assert rule_for(boolean(True)) is AlignmentRule.BOOLEAN_MATCH


# --- hypothesis properties ----------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(
    expected=st.floats(-1e6, 1e6, allow_nan=False),
    observed=st.floats(-1e6, 1e6, allow_nan=False),
)
def test_numeric_rule_is_symmetric(expected, observed):
    assert match_numeric(expected, observed, MetricClass.MEAN) == match_numeric(
        observed, expected, MetricClass.MEAN
    )


@settings(max_examples=200, deadline=None)
@given(
    expected=st.floats(-1e6, 1e6, allow_nan=False),
    observed=st.floats(-1e6, 1e6, allow_nan=False),
)
def test_numeric_rule_equals_distance_oracle(expected, observed):
    assert match_numeric(expected, observed, MetricClass.MEAN) == (
        abs(expected - observed) <= TOLERANCE
    )


@settings(max_examples=200, deadline=None)
@given(
    low=st.floats(-1e6, 1e6, allow_nan=False),
    width=st.floats(0, 1e3, allow_nan=False),
    observed=st.floats(-1e6, 1e6, allow_nan=False),
)
def test_range_rule_widens_point_rule(low, width, observed):
    high = low + width
    inside = match_range((low, high), observed)
    # Anything aligned to either endpoint by the point rule is inside the range rule.
    near_endpoint = abs(observed - low) <= TOLERANCE or abs(observed - high) <= TOLERANCE
    if near_endpoint:
        assert inside
    # A degenerate range behaves exactly like the point rule.
    if width == 0:
        assert inside == match_numeric(low, observed, MetricClass.MEAN)


@settings(max_examples=200, deadline=None)
@given(
    observed=st.floats(-100, 100, allow_nan=False),
    shrink=st.floats(0.0, 0.99),
)
def test_numeric_rule_monotone_in_distance(observed, shrink):
    expected = 0.0
    if match_numeric(expected, observed, MetricClass.MEAN):
        # Moving the observation closer to expected never breaks alignment.
        assert match_numeric(expected, observed * shrink, MetricClass.MEAN)


# --- verdicts -------------------------------------------------------------------------------


def test_verdict_requires_exactly_one_observed():
    with pytest.raises(InvariantViolation):
        Verdict("a", True, AlignmentRule.NUMERIC_WITHIN_1)
    with pytest.raises(InvariantViolation):
        Verdict(
            "a", True, AlignmentRule.NUMERIC_WITHIN_1, observed_point=1.0, observed_bool=True
        )


def test_not_attempted_verdict_shape():
    v = not_attempted_verdict("a9")
    assert v.rule is AlignmentRule.NOT_ATTEMPTED
    assert not v.aligned
    with pytest.raises(InvariantViolation):
        Verdict("a", True, AlignmentRule.NOT_ATTEMPTED)
    with pytest.raises(InvariantViolation):
        Verdict("a", False, AlignmentRule.NOT_ATTEMPTED, observed_point=3.0)


def test_verdict_round_trip():
    v = Verdict("a", True, AlignmentRule.RANGE_CONTAINMENT, observed_point=74.5, note="n")
    assert Verdict.from_dict(v.to_dict()) == v


# --- report compilation -----------------------------------------------------------------------


def _verdicts(registry, aligned_ids):
    out = []
    for a in registry:
        if a.assertion_id in aligned_ids:
            out.append(
                Verdict(a.assertion_id, True, AlignmentRule.BOOLEAN_MATCH, observed_bool=True)
            )
        else:
            out.append(not_attempted_verdict(a.assertion_id))
    return out


def _registry(n):
    return [boolean(True, aid=f"b{i:02d}") for i in range(n)]


def test_compile_report_counts_and_accuracy():
    registry = _registry(35)
    aligned = {f"b{i:02d}" for i in range(25)}
    report = compile_report(registry, _verdicts(registry, aligned), run_id="r1")
    assert report.aligned_count == 25
    assert report.total == 35
    assert report.accuracy == pytest.approx(25 / 35)
    assert accuracy_display(report) == "25/35 (71.4%)"


def test_compile_report_missing_verdict():
    registry = _registry(35)
    verdicts = _verdicts(registry, set())[:-1]
    with pytest.raises(MissingVerdict) as exc:
        compile_report(registry, verdicts)
    assert exc.value.assertion_ids == ["b34"]


def test_compile_report_duplicate_verdict():
    registry = _registry(2)
    verdicts = _verdicts(registry, set()) + [not_attempted_verdict("b00")]
    with pytest.raises(DuplicateVerdict):
        compile_report(registry, verdicts)


def test_compile_report_stray_verdict():
    registry = _registry(2)
    verdicts = _verdicts(registry, set()) + [not_attempted_verdict("zz")]
    with pytest.raises(DuplicateVerdict):
        compile_report(registry, verdicts)


def test_compile_report_orders_by_registry():
    registry = _registry(3)
    verdicts = list(reversed(_verdicts(registry, {"b01"})))
    report = compile_report(registry, verdicts)
    assert [v.assertion_id for v in report.verdicts] == ["b00", "b01", "b02"]


def test_not_attempted_counts_in_denominator():
    registry = _registry(4)
    report = compile_report(registry, _verdicts(registry, {"b00"}))
    assert accuracy_display(report) == "1/4 (25.0%)"


def test_empty_registry_report():
    report = compile_report([], [])
    assert accuracy_display(report) == "0/0 (0.0%)"


@pytest.mark.parametrize(
    "aligned,total,display",
    [(25, 35, "25/35 (71.4%)"), (5, 7, "5/7 (71.4%)"), (0, 7, "0/7 (0.0%)"), (1, 3, "1/3 (33.3%)")],
)
def test_accuracy_display_rounding(aligned, total, display):
    report = EvaluationReport(
        run_id="r", verdicts=(), aligned_count=aligned, total=total, accuracy=aligned / total
    )
    assert accuracy_display(report) == display


def test_initial_verdicts_are_all_not_attempted():
    registry = _registry(3)
    verdicts = initial_verdicts(registry)
    assert all(v.rule is AlignmentRule.NOT_ATTEMPTED for v in verdicts)
    report = compile_report(registry, verdicts)
    assert accuracy_display(report) == "0/3 (0.0%)"


def test_report_to_dict_rows():
    registry = [point(25.0, aid="p1"), rng(71.0, 73.0, aid="r1"), boolean(True, aid="q1")]
    verdicts = [
        Verdict("p1", True, AlignmentRule.NUMERIC_WITHIN_1, observed_point=25.4),
        Verdict("r1", False, AlignmentRule.RANGE_CONTAINMENT, observed_point=80.0, note="far"),
        not_attempted_verdict("q1"),
    ]
    doc = report_to_dict(compile_report(registry, verdicts, run_id="rid"), registry)
    assert doc["run_id"] == "rid"
    assert doc["summary"] == "1/3 (33.3%)"
    rows = doc["rows"]
    assert rows[0] == {
        "id": "p1",
        "description": "point p1",
        "expected": 25.0,
        "observed": 25.4,
        "rule": "NumericWithin1",
        "aligned": True,
        "operator_confirmed": False,
        "note": "",
    }
    assert rows[1]["expected"] == [71.0, 73.0]
    assert rows[1]["note"] == "far"
    assert rows[2]["observed"] is None
    assert rows[2]["rule"] == "NotAttempted"


# --- operator judgments ---------------------------------------------------------------------


def test_judge_numeric_auto():
    v = judge(point(25.0), {"assertion_id": "a1", "observed": 25.9})
    assert v.aligned and v.operator_confirmed
    assert v.observed_point == 25.9


def test_judge_numeric_explicit_override():
    v = judge(point(25.0), {"assertion_id": "a1", "observed": 25.5, "aligned": False})
    assert not v.aligned  # the operator's call wins over the automatic rule


def test_judge_count_requires_explicit_aligned():
    counted = point(5272.0, metric=MetricClass.COUNT)
    with pytest.raises(UnsupportedMetric):
        judge(counted, {"assertion_id": "a1", "observed": 5272})
    v = judge(counted, {"assertion_id": "a1", "observed": 5272, "aligned": True})
    assert v.aligned


def test_judge_boolean():
    v = judge(boolean(True), {"assertion_id": "a1", "observed": True, "note": "clear"})
    assert v.aligned and v.observed_bool is True and v.note == "clear"
    v = judge(boolean(True), {"assertion_id": "a1", "observed": False})
    assert not v.aligned


def test_judge_boolean_rejects_non_bool():
    with pytest.raises(ParseError):
        judge(boolean(True), {"assertion_id": "a1", "observed": 1})


def test_judge_numeric_rejects_bool_observed():
    with pytest.raises(ParseError):
        judge(point(25.0), {"assertion_id": "a1", "observed": True})


def test_judge_not_attempted():
    v = judge(point(25.0), {"assertion_id": "a1", "not_attempted": True})
    assert v.rule is AlignmentRule.NOT_ATTEMPTED
    assert v.operator_confirmed


def test_judge_needs_observed_or_not_attempted():
    with pytest.raises(ParseError):
        judge(point(25.0), {"assertion_id": "a1"})


def test_load_judgments_validates_rows(tmp_path):
    path = tmp_path / "j.json"
    path.write_text(json.dumps([{"observed": 1.0}]))
    with pytest.raises(ParseError):
        load_judgments(path)
    path.write_text(json.dumps({"assertion_id": "a"}))
    with pytest.raises(ParseError):
        load_judgments(path)
    with pytest.raises(ParseError):
        load_judgments(tmp_path / "missing.json")


def test_judgments_to_verdicts_unknown_and_duplicate():
    registry = [point(1.0, aid="p1")]
    with pytest.raises(ParseError):
        judgments_to_verdicts(registry, [{"assertion_id": "nope", "observed": 1.0}])
    rows = [
        {"assertion_id": "p1", "observed": 1.0},
        {"assertion_id": "p1", "observed": 2.0},
    ]
    with pytest.raises(DuplicateVerdict):
        judgments_to_verdicts(registry, rows)


def test_kurasz_judgment_fixture_scores_5_of_7(registry_dir, judgments_dir):
    registry = load_assertions(registry_dir / "kurasz2020ethnoracial.json")
    rows = load_judgments(judgments_dir / "kurasz_judgments.json")
    report = compile_report(registry, judgments_to_verdicts(registry, rows))
    assert accuracy_display(report) == "5/7 (71.4%)"


def test_all35_judgment_fixture_scores_25_of_35(registry_dir, judgments_dir):
    registry = load_assertions(registry_dir / "all_studies.json")
    rows = load_judgments(judgments_dir / "all35_judgments.json")
    report = compile_report(registry, judgments_to_verdicts(registry, rows))
    assert accuracy_display(report) == "25/35 (71.4%)"


# --- candidate mining -------------------------------------------------------------------------


def _msg(seq, speaker, kind, content):
    return Message(seq, speaker, kind, content, "t")


def test_suggest_candidates_scans_code_results_and_scientist():
    assertion = Assertion(
        "m1",
        "mean cognitive score in group 1",
        AssertionKind.NUMERIC_POINT,
        MetricClass.MEAN,
        expected_point=25.0,
    )
    transcript = [
        _msg(0, "User", MessageKind.USER_DIRECTIVE, "mean score 99.9 in prompt is ignored"),
        _msg(1, "Executor", MessageKind.CODE_RESULT, "group 1 mean score: 25.2"),
        _msg(2, "Scientist", MessageKind.TEXT, "The mean score for group 1 is 25.2."),
        _msg(3, "Planner", MessageKind.TEXT, "mean score 11.1 from planner is ignored"),
    ]
    candidates = suggest_candidates(assertion, transcript)
    assert candidates
    assert {c.seq for c in candidates} == {1, 2}
    assert any(c.value_text == "25.2" for c in candidates)


def test_suggest_candidates_boolean_phrases():
    assertion = Assertion(
        "b1",
        "female share higher in urgent group",
        AssertionKind.BOOLEAN,
        MetricClass.OTHER,
        expected_bool=True,
    )
    transcript = [
        _msg(1, "Scientist", MessageKind.GATE_REQUEST, "Yes, the female share is higher. Approve?"),
    ]
    candidates = suggest_candidates(assertion, transcript)
    assert any(c.value_text == "yes" for c in candidates)


def test_suggest_candidates_empty_without_keywords():
    assertion = Assertion(
        "b1", "of the in", AssertionKind.BOOLEAN, MetricClass.OTHER, expected_bool=True
    )
    assert suggest_candidates(assertion, []) == []
