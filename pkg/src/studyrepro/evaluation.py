"""Alignment scoring: verdicts per assertion and the run accuracy report.

The rules are deliberately small. A numeric observation aligns when it is
within 1.0 of the expected value (inclusive); a range widens that tolerance to
its endpoints; booleans align on equality. Count-like metrics have no rule and
go to operator judgment. Verdicts are recorded by a human; the candidate scan
only suggests places to look.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    DuplicateVerdict,
    InvariantViolation,
    MissingVerdict,
    ParseError,
    UnsupportedMetric,
)
from .runtime import AGENT_KINDS, Message, MessageKind
from .study import Assertion, AssertionKind, MetricClass

TOLERANCE = 1.0

AUTO_SCORABLE_METRICS = (MetricClass.MEAN, MetricClass.MEDIAN, MetricClass.PERCENTAGE)


class AlignmentRule(str, Enum):
    NUMERIC_WITHIN_1 = "NumericWithin1"
    RANGE_CONTAINMENT = "RangeContainment"
    BOOLEAN_MATCH = "BooleanMatch"
    NOT_ATTEMPTED = "NotAttempted"


@dataclass(frozen=True)
class Verdict:
    """Alignment outcome for one assertion."""

    assertion_id: str
    aligned: bool
    rule: AlignmentRule
    observed_point: float | None = None
    observed_bool: bool | None = None
    operator_confirmed: bool = False
    note: str = ""

    def __post_init__(self):
        observed = [v for v in (self.observed_point, self.observed_bool) if v is not None]
        if self.rule is AlignmentRule.NOT_ATTEMPTED:
            if self.aligned:
                raise InvariantViolation("a NotAttempted verdict cannot be aligned")
            if observed:
                raise InvariantViolation("a NotAttempted verdict carries no observed value")
        elif len(observed) != 1:
            raise InvariantViolation(
                f"verdict {self.assertion_id}: exactly one observed value required"
            )

    def to_dict(self) -> dict:
        return {
            "assertion_id": self.assertion_id,
            "aligned": self.aligned,
            "rule": self.rule.value,
            "observed_point": self.observed_point,
            "observed_bool": self.observed_bool,
            "operator_confirmed": self.operator_confirmed,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(
            assertion_id=data["assertion_id"],
            aligned=data["aligned"],
            rule=AlignmentRule(data["rule"]),
            observed_point=data.get("observed_point"),
            observed_bool=data.get("observed_bool"),
            operator_confirmed=data.get("operator_confirmed", False),
            note=data.get("note", ""),
        )


@dataclass(frozen=True)
class EvaluationReport:
    run_id: str
    verdicts: tuple[Verdict, ...]
    aligned_count: int
    total: int
    accuracy: float


def match_numeric(expected: float, observed: float, metric_class: MetricClass) -> bool:
    """Point rule: within TOLERANCE of expected, boundary inclusive."""
    if metric_class not in AUTO_SCORABLE_METRICS:
        raise UnsupportedMetric(
            f"metric class {metric_class.value!r} has no numeric rule; record an operator verdict"
        )
    return abs(expected - observed) <= TOLERANCE


def match_range(expected: tuple[float, float], observed: float) -> bool:
    """Range rule: the point tolerance widened to the range endpoints."""
    low, high = expected
    return low - TOLERANCE <= observed <= high + TOLERANCE


def match_boolean(expected: bool, observed: bool) -> bool:
    return expected == observed


def auto_align(assertion: Assertion, observed: float | bool) -> bool:
    """Apply the assertion's rule to one observed value."""
    if assertion.kind is AssertionKind.NUMERIC_POINT:
        return match_numeric(assertion.expected_point, float(observed), assertion.metric_class)
    if assertion.kind is AssertionKind.NUMERIC_RANGE:
        return match_range(assertion.expected_range, float(observed))
    return match_boolean(assertion.expected_bool, bool(observed))


def rule_for(assertion: Assertion) -> AlignmentRule:
    if assertion.kind is AssertionKind.NUMERIC_POINT:
        return AlignmentRule.NUMERIC_WITHIN_1
    if assertion.kind is AssertionKind.NUMERIC_RANGE:
        return AlignmentRule.RANGE_CONTAINMENT
    return AlignmentRule.BOOLEAN_MATCH


def not_attempted_verdict(assertion_id: str, operator_confirmed: bool = False) -> Verdict:
    return Verdict(
        assertion_id=assertion_id,
        aligned=False,
        rule=AlignmentRule.NOT_ATTEMPTED,
        operator_confirmed=operator_confirmed,
    )


def initial_verdicts(registry: list[Assertion]) -> list[Verdict]:
    """Skeleton report content before the operator has judged anything."""
    return [not_attempted_verdict(a.assertion_id) for a in registry]


@dataclass(frozen=True)
class Candidate:
    """A value spotted in the transcript that might answer an assertion."""

    value_text: str
    seq: int
    snippet: str
    score: int = field(default=0, compare=False)


_STOPWORDS = frozenset(
    "a an and are at be by for from has have in is it of on or than that the to was were with".split()
)
_WORD_RE = re.compile(r"[a-zA-Z][a-zA-Z']+")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?%?")
_TRUTH_PHRASES = (
    "true",
    "false",
    "yes",
    "no",
    "more likely",
    "less likely",
    "higher",
    "lower",
    "confirmed",
    "reproduced",
)


def _keywords(description: str) -> set[str]:
    return {
        w.lower()
        for w in _WORD_RE.findall(description)
        if len(w) > 2 and w.lower() not in _STOPWORDS
    }


def suggest_candidates(assertion: Assertion, transcript: list[Message]) -> list[Candidate]:
    """Scan executor output and Scientist messages for likely observed values.

    Advisory only: candidates are ranked by keyword overlap and never become
    verdicts without the operator.
    """
    keywords = _keywords(assertion.description)
    if not keywords:
        return []
    wants_number = assertion.kind in (AssertionKind.NUMERIC_POINT, AssertionKind.NUMERIC_RANGE)
    found: list[Candidate] = []
    for m in transcript:
        relevant = m.kind is MessageKind.CODE_RESULT or (
            m.kind in AGENT_KINDS and m.speaker == "Scientist"
        )
        if not relevant:
            continue
        for line in m.content.splitlines():
            lowered = line.lower()
            score = sum(1 for k in keywords if k in lowered)
            if score == 0:
                continue
            if wants_number:
                for token in _NUMBER_RE.findall(line):
                    found.append(Candidate(token, m.seq, line.strip(), score))
            else:
                for phrase in _TRUTH_PHRASES:
                    if phrase in lowered:
                        found.append(Candidate(phrase, m.seq, line.strip(), score))
    found.sort(key=lambda c: (-c.score, c.seq))
    return found


def compile_report(
    registry: list[Assertion], verdicts: list[Verdict], run_id: str = ""
) -> EvaluationReport:
    """One verdict per registry assertion, in registry order."""
    by_id: dict[str, Verdict] = {}
    for v in verdicts:
        if v.assertion_id in by_id:
            raise DuplicateVerdict(f"duplicate verdict for {v.assertion_id}")
        by_id[v.assertion_id] = v
    known = {a.assertion_id for a in registry}
    strays = sorted(set(by_id) - known)
    if strays:
        raise DuplicateVerdict(f"verdicts for unknown assertions: {', '.join(strays)}")
    missing = [a.assertion_id for a in registry if a.assertion_id not in by_id]
    if missing:
        raise MissingVerdict(missing)
    ordered = tuple(by_id[a.assertion_id] for a in registry)
    aligned_count = sum(1 for v in ordered if v.aligned)
    total = len(registry)
    return EvaluationReport(
        run_id=run_id,
        verdicts=ordered,
        aligned_count=aligned_count,
        total=total,
        accuracy=aligned_count / total if total else 0.0,
    )


def accuracy_display(report: EvaluationReport) -> str:
    """The summary form, e.g. ``25/35 (71.4%)``. Rounding happens only here."""
    pct = report.accuracy * 100
    return f"{report.aligned_count}/{report.total} ({pct:.1f}%)"


def _expected_json(assertion: Assertion):
    if assertion.kind is AssertionKind.NUMERIC_POINT:
        return assertion.expected_point
    if assertion.kind is AssertionKind.NUMERIC_RANGE:
        return list(assertion.expected_range)
    return assertion.expected_bool


def report_to_dict(report: EvaluationReport, registry: list[Assertion]) -> dict:
    by_id = {a.assertion_id: a for a in registry}
    rows = []
    for v in report.verdicts:
        a = by_id[v.assertion_id]
        observed = v.observed_bool if v.observed_point is None else v.observed_point
        rows.append(
            {
                "id": v.assertion_id,
                "description": a.description,
                "expected": _expected_json(a),
                "observed": observed,
                "rule": v.rule.value,
                "aligned": v.aligned,
                "operator_confirmed": v.operator_confirmed,
                "note": v.note,
            }
        )
    return {
        "run_id": report.run_id,
        "rows": rows,
        "aligned_count": report.aligned_count,
        "total": report.total,
        "accuracy": report.accuracy,
        "summary": accuracy_display(report),
    }


def judge(assertion: Assertion, row: dict) -> Verdict:
    """Turn one operator judgment row into a Verdict.

    Rows carry ``assertion_id`` plus either ``not_attempted: true`` or an
    ``observed`` value; ``aligned`` may be given explicitly and is required for
    metrics without an automatic rule.
    """
    note = row.get("note", "")
    if row.get("not_attempted"):
        return not_attempted_verdict(assertion.assertion_id, operator_confirmed=True)
    if "observed" not in row:
        raise ParseError(
            "judgment needs observed or not_attempted", locus=assertion.assertion_id
        )
    observed = row["observed"]
    if assertion.kind is AssertionKind.BOOLEAN:
        if not isinstance(observed, bool):
            raise ParseError("observed must be a truth value", locus=assertion.assertion_id)
        aligned = row.get("aligned")
        if aligned is None:
            aligned = match_boolean(assertion.expected_bool, observed)
        return Verdict(
            assertion_id=assertion.assertion_id,
            aligned=bool(aligned),
            rule=AlignmentRule.BOOLEAN_MATCH,
            observed_bool=observed,
            operator_confirmed=True,
            note=note,
        )
    if isinstance(observed, bool) or not isinstance(observed, (int, float)):
        raise ParseError("observed must be a number", locus=assertion.assertion_id)
    aligned = row.get("aligned")
    if aligned is None:
        aligned = auto_align(assertion, float(observed))
    return Verdict(
        assertion_id=assertion.assertion_id,
        aligned=bool(aligned),
        rule=rule_for(assertion),
        observed_point=float(observed),
        operator_confirmed=True,
        note=note,
    )


def load_judgments(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read judgments: {exc}", locus=str(path)) from exc
    if not isinstance(data, list):
        raise ParseError("judgments file must be an array of rows", locus=str(path))
    for row in data:
        if not isinstance(row, dict) or "assertion_id" not in row:
            raise ParseError("each judgment row needs an assertion_id", locus=str(path))
    return data


def judgments_to_verdicts(registry: list[Assertion], rows: list[dict]) -> list[Verdict]:
    by_id = {a.assertion_id: a for a in registry}
    verdicts = []
    seen = set()
    for row in rows:
        aid = row["assertion_id"]
        if aid not in by_id:
            raise ParseError(f"judgment for unknown assertion {aid!r}")
        if aid in seen:
            raise DuplicateVerdict(f"duplicate judgment for {aid}")
        seen.add(aid)
        verdicts.append(judge(by_id[aid], row))
    return verdicts
