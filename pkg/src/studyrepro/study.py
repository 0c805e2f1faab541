"""Study bundles and assertion registries.

A study bundle is the curated input for one reproduction run: abstract and
methods text, the relevant column dictionary, ground rules, a sample-row
snippet, and the path of the local CSV the agents will analyze. Assertions
are the key findings the run is scored against. Both are loaded from JSON
documents whose field names are a stable contract (see README).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import InvariantViolation, ParseError


@dataclass(frozen=True)
class ColumnSpec:
    """One dataset column offered to the agents, with its value map if coded."""

    name: str
    description: str
    form_name: str
    value_map: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if not self.name or "\n" in self.name:
            raise InvariantViolation(f"column name must be non-empty, single-line: {self.name!r}")
        if self.value_map is not None:
            codes = [code for code, _ in self.value_map]
            if len(codes) != len(set(codes)):
                raise InvariantViolation(f"duplicate value-map codes in column {self.name!r}")


@dataclass(frozen=True)
class SampleRows:
    """Small tabular snippet rendered verbatim into the prompt. Cells are text."""

    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise InvariantViolation(
                    f"sample row {i} has {len(row)} cells, header has {len(self.header)}"
                )


@dataclass(frozen=True)
class StudyBundle:
    """Everything needed to build the reproduction prompt for one study."""

    study_id: str
    title: str
    abstract_text: str
    methods_text: str
    columns: tuple[ColumnSpec, ...]
    ground_rules: tuple[str, ...]
    sample_rows: SampleRows
    dataset_path: Path

    def __post_init__(self):
        if not self.abstract_text.strip():
            raise InvariantViolation("abstract_text is empty")
        if not self.methods_text.strip():
            raise InvariantViolation("methods_text is empty")
        names = [c.name for c in self.columns]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise InvariantViolation(f"duplicate column names: {sorted(dupes)}")


class AssertionKind(str, Enum):
    NUMERIC_POINT = "numeric_point"
    NUMERIC_RANGE = "numeric_range"
    BOOLEAN = "boolean"


class MetricClass(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    PERCENTAGE = "percentage"
    COUNT = "count"
    OTHER = "other"


@dataclass(frozen=True)
class Assertion:
    """One key finding from a study abstract, with its expected value."""

    assertion_id: str
    description: str
    kind: AssertionKind
    metric_class: MetricClass
    expected_point: float | None = None
    expected_range: tuple[float, float] | None = None
    expected_bool: bool | None = None

    def __post_init__(self):
        present = [
            self.expected_point is not None,
            self.expected_range is not None,
            self.expected_bool is not None,
        ]
        if sum(present) != 1:
            raise InvariantViolation(
                f"assertion {self.assertion_id!r}: exactly one expected value must be set"
            )
        wanted = {
            AssertionKind.NUMERIC_POINT: self.expected_point,
            AssertionKind.NUMERIC_RANGE: self.expected_range,
            AssertionKind.BOOLEAN: self.expected_bool,
        }[self.kind]
        if wanted is None:
            raise InvariantViolation(
                f"assertion {self.assertion_id!r}: expected value does not match kind {self.kind.value}"
            )
        if self.expected_range is not None:
            low, high = self.expected_range
            if low > high:
                raise InvariantViolation(
                    f"assertion {self.assertion_id!r}: range low {low} > high {high}"
                )


class WarningClass(str, Enum):
    MISSING_DATASET = "MissingDataset"
    MISSING_COLUMN = "MissingColumn"
    SAMPLE_HEADER_MISMATCH = "SampleHeaderMismatch"


@dataclass(frozen=True)
class DatasetWarning:
    warning_class: WarningClass
    detail: str


# --- loading -----------------------------------------------------------------


def _require(doc: dict, key: str, kind: type, locus: str) -> object:
    if key not in doc:
        raise ParseError(f"missing required field {key!r}", locus=f"{locus}.{key}")
    value = doc[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ParseError(
            f"field {key!r} must be {kind.__name__}, got {type(value).__name__}",
            locus=f"{locus}.{key}",
        )
    return value


def _load_json(path: Path) -> object:
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", locus=f"{path.name}:{exc.lineno}") from exc


def _parse_column(doc: object, locus: str) -> ColumnSpec:
    if not isinstance(doc, dict):
        raise ParseError("column entry must be an object", locus=locus)
    name = _require(doc, "name", str, locus)
    description = _require(doc, "description", str, locus)
    form = _require(doc, "form", str, locus)
    value_map = None
    if doc.get("values") is not None:
        values = doc["values"]
        if not isinstance(values, list):
            raise ParseError("values must be an array", locus=f"{locus}.values")
        pairs = []
        for j, entry in enumerate(values):
            if not isinstance(entry, dict):
                raise ParseError("value entry must be an object", locus=f"{locus}.values[{j}]")
            code = _require(entry, "code", str, f"{locus}.values[{j}]")
            label = _require(entry, "label", str, f"{locus}.values[{j}]")
            pairs.append((code, label))
        value_map = tuple(pairs)
    return ColumnSpec(name=name, description=description, form_name=form, value_map=value_map)


def load_study_bundle(path: str | Path) -> StudyBundle:
    """Load and validate a bundle JSON file.

    Relative dataset paths are resolved against the bundle file's directory so
    downstream code never depends on the process working directory.
    """
    path = Path(path)
    doc = _load_json(path)
    if not isinstance(doc, dict):
        raise ParseError("bundle document must be an object", locus=path.name)
    locus = path.name
    study_id = _require(doc, "study_id", str, locus)
    title = _require(doc, "title", str, locus)
    abstract = _require(doc, "abstract", str, locus)
    methods = _require(doc, "methods", str, locus)
    dataset = _require(doc, "dataset_path", str, locus)
    rules = _require(doc, "ground_rules", list, locus)
    for i, rule in enumerate(rules):
        if not isinstance(rule, str):
            raise ParseError("ground rule must be a string", locus=f"{locus}.ground_rules[{i}]")
    columns_doc = _require(doc, "columns", list, locus)
    columns = tuple(
        _parse_column(c, f"{locus}.columns[{i}]") for i, c in enumerate(columns_doc)
    )
    sample_doc = _require(doc, "sample_rows", dict, locus)
    header = _require(sample_doc, "header", list, f"{locus}.sample_rows")
    rows = _require(sample_doc, "rows", list, f"{locus}.sample_rows")
    sample = SampleRows(
        header=tuple(str(c) for c in header),
        rows=tuple(tuple(str(c) for c in row) for row in rows),
    )
    dataset_path = Path(dataset)
    if not dataset_path.is_absolute():
        dataset_path = (path.parent / dataset_path).resolve()
    return StudyBundle(
        study_id=study_id,
        title=title,
        abstract_text=abstract,
        methods_text=methods,
        columns=columns,
        ground_rules=tuple(rules),
        sample_rows=sample,
        dataset_path=dataset_path,
    )


def save_bundle(bundle: StudyBundle, path: str | Path) -> None:
    """Write a bundle back out in the load format (round-trip safe)."""
    doc = {
        "study_id": bundle.study_id,
        "title": bundle.title,
        "abstract": bundle.abstract_text,
        "methods": bundle.methods_text,
        "dataset_path": str(bundle.dataset_path),
        "ground_rules": list(bundle.ground_rules),
        "columns": [
            {
                "name": c.name,
                "description": c.description,
                "form": c.form_name,
                "values": (
                    [{"code": code, "label": label} for code, label in c.value_map]
                    if c.value_map is not None
                    else None
                ),
            }
            for c in bundle.columns
        ],
        "sample_rows": {
            "header": list(bundle.sample_rows.header),
            "rows": [list(r) for r in bundle.sample_rows.rows],
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


_KIND_ALIASES = {k.value: k for k in AssertionKind}
_METRIC_ALIASES = {m.value: m for m in MetricClass}


def _parse_assertion(doc: object, locus: str) -> Assertion:
    if not isinstance(doc, dict):
        raise ParseError("assertion entry must be an object", locus=locus)
    assertion_id = _require(doc, "id", str, locus)
    description = _require(doc, "description", str, locus)
    kind_raw = _require(doc, "kind", str, locus)
    if kind_raw not in _KIND_ALIASES:
        raise ParseError(f"unknown assertion kind {kind_raw!r}", locus=f"{locus}.kind")
    kind = _KIND_ALIASES[kind_raw]
    metric_raw = _require(doc, "metric_class", str, locus)
    if metric_raw not in _METRIC_ALIASES:
        raise ParseError(f"unknown metric class {metric_raw!r}", locus=f"{locus}.metric_class")
    metric = _METRIC_ALIASES[metric_raw]
    if "expected" not in doc:
        raise ParseError("missing required field 'expected'", locus=f"{locus}.expected")
    expected = doc["expected"]
    point = rng = boolean = None
    if kind is AssertionKind.NUMERIC_POINT:
        if not isinstance(expected, (int, float)) or isinstance(expected, bool):
            raise ParseError("numeric_point expects a number", locus=f"{locus}.expected")
        point = float(expected)
    elif kind is AssertionKind.NUMERIC_RANGE:
        if (
            not isinstance(expected, list)
            or len(expected) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in expected)
        ):
            raise ParseError("numeric_range expects [low, high]", locus=f"{locus}.expected")
        rng = (float(expected[0]), float(expected[1]))
    else:
        if not isinstance(expected, bool):
            raise ParseError("boolean expects true/false", locus=f"{locus}.expected")
        boolean = expected
    return Assertion(
        assertion_id=assertion_id,
        description=description,
        kind=kind,
        metric_class=metric,
        expected_point=point,
        expected_range=rng,
        expected_bool=boolean,
    )


def load_assertions(path: str | Path) -> list[Assertion]:
    """Load an assertion registry file; order is preserved."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", locus=f"{path.name}:{exc.lineno}") from exc
    if not isinstance(doc, list):
        raise ParseError("assertion document must be an array", locus=path.name)
    assertions = [_parse_assertion(a, f"{path.name}[{i}]") for i, a in enumerate(doc)]
    seen: set[str] = set()
    for a in assertions:
        if a.assertion_id in seen:
            raise InvariantViolation(f"duplicate assertion id {a.assertion_id!r}")
        seen.add(a.assertion_id)
    return assertions


def validate_dataset(bundle: StudyBundle) -> list[DatasetWarning]:
    """Check the bundle against its dataset file. Warnings only, never raises:
    a run may still proceed with a degraded dataset."""
    warnings: list[DatasetWarning] = []
    if not bundle.dataset_path.exists():
        warnings.append(
            DatasetWarning(WarningClass.MISSING_DATASET, f"dataset not found: {bundle.dataset_path}")
        )
        return warnings
    try:
        with open(bundle.dataset_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            csv_header = next(reader, [])
    except OSError as exc:
        warnings.append(
            DatasetWarning(WarningClass.MISSING_DATASET, f"dataset unreadable: {exc}")
        )
        return warnings
    csv_cols = set(csv_header)
    for col in bundle.columns:
        if col.name not in csv_cols:
            warnings.append(
                DatasetWarning(WarningClass.MISSING_COLUMN, f"CSV is missing column {col.name!r}")
            )
    stray = [name for name in bundle.sample_rows.header if name not in csv_cols]
    if stray:
        warnings.append(
            DatasetWarning(
                WarningClass.SAMPLE_HEADER_MISMATCH,
                f"sample_rows header not in CSV header: {stray}",
            )
        )
    return warnings
