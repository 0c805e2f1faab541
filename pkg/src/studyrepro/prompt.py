"""Deterministic assembly of the instruction prompt and mid-run user messages.

Prompt bytes participate in replay-cassette keys, so everything here is a pure
function of the bundle: fixed headings, fixed separators, no configuration.
The golden files under tests/fixtures are the rendering authority.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyRemaining, InvariantViolation
from .study import Assertion, ColumnSpec, SampleRows, StudyBundle

SECTION_ORDER = ("Task", "Methods", "Abstract", "RelevantColumns", "GroundRules", "ExampleData")

TASK_PREFIX = "Reproduce the results of the following study"
COLUMNS_OPENER = "Here are relevant columns you may use:"


@dataclass(frozen=True)
class PromptText:
    """Rendered prompt plus the byte offset where each section starts."""

    text: str
    section_offsets: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = tuple(name for name, _ in self.section_offsets)
        if names != SECTION_ORDER:
            raise InvariantViolation(f"sections out of order: {names}")
        offsets = [off for _, off in self.section_offsets]
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise InvariantViolation(f"section offsets not strictly increasing: {offsets}")

    def section(self, name: str) -> str:
        """Slice one section's text out of the prompt (byte-accurate)."""
        raw = self.text.encode("utf-8")
        starts = dict(self.section_offsets)
        order = [n for n, _ in self.section_offsets]
        idx = order.index(name)
        end = starts[order[idx + 1]] if idx + 1 < len(order) else len(raw)
        return raw[starts[name] : end].decode("utf-8")


def render_column_block(col: ColumnSpec) -> str:
    """Render one column description block, value map included when present."""
    lines = [f'Column: "{col.name}" - {col.description}. Form: "{col.form_name}"']
    if col.value_map is not None:
        pairs = " ".join(f'{code} - "{label}"' for code, label in col.value_map)
        lines.append(f"Possible values: {pairs}")
    return "\n".join(lines)


def render_sample_table(sample: SampleRows) -> str:
    """Fixed-width table: columns padded to the longest cell, single-space gaps."""
    if not sample.header:
        return ""
    table = [sample.header, *sample.rows]
    widths = [max(len(row[j]) for row in table) for j in range(len(sample.header))]
    lines = [
        " ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip()
        for row in table
    ]
    return "\n".join(lines)


def _columns_section(columns: tuple[ColumnSpec, ...]) -> str:
    # Value-map blocks read as paragraphs; plain columns list line by line.
    parts = [COLUMNS_OPENER]
    prev_multiline = False
    for col in columns:
        block = render_column_block(col)
        parts.append("\n" + block if prev_multiline else block)
        prev_multiline = "\n" in block
    return "\n".join(parts)


def build_instruction_prompt(bundle: StudyBundle) -> PromptText:
    """Assemble the full instruction prompt. Byte-identical for equal bundles."""
    sections: list[tuple[str, str]] = []
    sections.append(("Task", f"{TASK_PREFIX}: {bundle.title}."))
    sections.append(("Methods", "Methods:\n\n" + bundle.methods_text.strip("\n")))
    sections.append(("Abstract", "Abstract:\n\n" + bundle.abstract_text.strip("\n")))
    sections.append(("RelevantColumns", _columns_section(bundle.columns)))
    if bundle.ground_rules:
        rules = "\n\n".join(rule.strip("\n") for rule in bundle.ground_rules)
        sections.append(("GroundRules", "Ground Rules:\n\n" + rules))
    else:
        sections.append(("GroundRules", "Ground Rules:"))
    table = render_sample_table(bundle.sample_rows)
    if table:
        sections.append(("ExampleData", "Example Data:\n\n" + table))
    else:
        sections.append(("ExampleData", "Example Data:"))

    offsets: list[tuple[str, int]] = []
    pos = 0
    pieces: list[str] = []
    for i, (name, body) in enumerate(sections):
        if i > 0:
            pieces.append("\n\n")
            pos += 2
        offsets.append((name, pos))
        pieces.append(body)
        pos += len(body.encode("utf-8"))
    pieces.append("\n")
    return PromptText(text="".join(pieces), section_offsets=tuple(offsets))


def build_reinforcement_message(bundle: StudyBundle) -> str:
    """The scripted user reply at an approval gate: point the agents back at the
    declared columns and methods, then restate the abstract verbatim."""
    return (
        "Please be sure to use the relevant columns provided and to strictly "
        "follow the study methods as described. As a reminder, the abstract of "
        "the study is as follows:\n\n" + bundle.abstract_text
    )


def build_redirect_message(remaining: list[Assertion]) -> str:
    """The scripted user reply directing agents at findings not yet attempted."""
    if not remaining:
        raise EmptyRemaining("no assertions remain to redirect toward")
    listing = "\n".join(f"- {a.description}" for a in remaining)
    return (
        "The following findings from the abstract have not yet been attempted:\n\n"
        + listing
        + "\n\nBefore finishing, please specifically attempt to recreate each of "
        "these remaining findings."
    )
