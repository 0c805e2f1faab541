"""Prompt assembly: golden bytes, fixed headings, section offsets, determinism."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from studyrepro.errors import EmptyRemaining, InvariantViolation
from studyrepro.prompt import (
    COLUMNS_OPENER,
    SECTION_ORDER,
    TASK_PREFIX,
    PromptText,
    build_instruction_prompt,
    build_redirect_message,
    build_reinforcement_message,
    render_column_block,
    render_sample_table,
)
from studyrepro.study import (
    ColumnSpec,
    SampleRows,
    StudyBundle,
    load_assertions,
    load_study_bundle,
)


def test_golden_prompt_byte_exact(mci_bundle_path, fixtures_dir):
    bundle = load_study_bundle(mci_bundle_path)
    prompt = build_instruction_prompt(bundle)
    golden = (fixtures_dir / "mci" / "golden_prompt.txt").read_bytes()
    assert prompt.text.encode("utf-8") == golden


def test_prompt_contains_literal_lines(mci_bundle_path):
    bundle = load_study_bundle(mci_bundle_path)
    text = build_instruction_prompt(bundle).text
    assert text.startswith("Reproduce the results of the following study: ")
    assert "Here are relevant columns you may use:" in text


def test_section_order_and_offsets(toy_bundle):
    prompt = build_instruction_prompt(toy_bundle)
    names = tuple(name for name, _ in prompt.section_offsets)
    assert names == SECTION_ORDER
    offsets = [off for _, off in prompt.section_offsets]
    assert offsets[0] == 0
    assert offsets == sorted(offsets)


def test_sections_reassemble_to_full_text(toy_bundle):
    prompt = build_instruction_prompt(toy_bundle)
    joined = "".join(prompt.section(name) for name in SECTION_ORDER)
    assert joined == prompt.text


def test_section_slicing(toy_bundle):
    prompt = build_instruction_prompt(toy_bundle)
    task = prompt.section("Task")
    assert task.startswith(f"{TASK_PREFIX}: {toy_bundle.title}.")
    columns = prompt.section("RelevantColumns")
    assert columns.startswith(COLUMNS_OPENER)
    example = prompt.section("ExampleData")
    assert example.startswith("Example Data:")
    assert example.endswith("\n")


def test_prompt_deterministic(toy_bundle):
    a = build_instruction_prompt(toy_bundle)
    b = build_instruction_prompt(toy_bundle)
    assert a.text == b.text
    assert a.section_offsets == b.section_offsets


def test_prompt_text_rejects_reordered_sections(toy_bundle):
    prompt = build_instruction_prompt(toy_bundle)
    shuffled = tuple(reversed(prompt.section_offsets))
    with pytest.raises(InvariantViolation):
        PromptText(text=prompt.text, section_offsets=shuffled)


def test_render_column_block_plain():
    col = ColumnSpec("AGE", "Subject age at visit", "Form A1")
    assert render_column_block(col) == 'Column: "AGE" - Subject age at visit. Form: "Form A1"'


def test_render_column_block_with_values():
    col = ColumnSpec(
        "SEX",
        "Subject sex",
        "Form A1",
        value_map=(("1", "Male"), ("2", "Female")),
    )
    block = render_column_block(col)
    lines = block.split("\n")
    assert lines[0] == 'Column: "SEX" - Subject sex. Form: "Form A1"'
    assert lines[1] == 'Possible values: 1 - "Male" 2 - "Female"'


def test_render_sample_table_alignment():
    sample = SampleRows(
        header=("ID", "SCORE"),
        rows=(("1", "25"), ("10", "7")),
    )
    table = render_sample_table(sample)
    assert table.split("\n") == ["ID SCORE", "1  25", "10 7"]


def test_render_sample_table_empty():
    assert render_sample_table(SampleRows((), ())) == ""


def test_prompt_ends_with_single_newline(toy_bundle):
    text = build_instruction_prompt(toy_bundle).text
    assert text.endswith("\n")
    assert not text.endswith("\n\n")


# --- hypothesis: the prompt is a pure, total function of the bundle ------------

_cell = st.text(
    alphabet=st.characters(codec="utf-8", exclude_characters="\n\r"),
    min_size=1,
    max_size=8,
).map(str.strip).filter(bool)

_name = st.text(alphabet="ABCDEFGH", min_size=1, max_size=6)


@st.composite
def bundles(draw):
    n_cols = draw(st.integers(min_value=1, max_value=4))
    names = draw(
        st.lists(_name, min_size=n_cols, max_size=n_cols, unique=True)
    )
    columns = []
    for name in names:
        if draw(st.booleans()):
            codes = draw(st.lists(_cell, min_size=1, max_size=3, unique=True))
            value_map = tuple((c, draw(_cell)) for c in codes)
        else:
            value_map = None
        columns.append(ColumnSpec(name, draw(_cell), draw(_cell), value_map))
    width = draw(st.integers(min_value=1, max_value=3))
    header = tuple(draw(st.lists(_cell, min_size=width, max_size=width)))
    n_rows = draw(st.integers(min_value=0, max_value=3))
    rows = tuple(
        tuple(draw(st.lists(_cell, min_size=width, max_size=width))) for _ in range(n_rows)
    )
    return StudyBundle(
        study_id="prop",
        title=draw(_cell),
        abstract_text=draw(_cell),
        methods_text=draw(_cell),
        columns=tuple(columns),
        ground_rules=tuple(draw(st.lists(_cell, max_size=3))),
        sample_rows=SampleRows(header, rows),
        dataset_path=__import__("pathlib").Path("/nonexistent.csv"),
    )


@settings(max_examples=60, deadline=None)
@given(bundles())
def test_prompt_complete_and_ordered(bundle):
    prompt = build_instruction_prompt(bundle)
    text = prompt.text
    # Every input fragment that the prompt promises to carry is present.
    assert bundle.title in text
    assert bundle.abstract_text.strip("\n") in text
    assert bundle.methods_text.strip("\n") in text
    for rule in bundle.ground_rules:
        assert rule.strip("\n") in text
    for col in bundle.columns:
        assert f'Column: "{col.name}"' in text
    # Sections appear in the declared order at their declared offsets.
    raw = text.encode("utf-8")
    for (name, off), heading in zip(
        prompt.section_offsets,
        (TASK_PREFIX, "Methods:", "Abstract:", COLUMNS_OPENER, "Ground Rules:", "Example Data:"),
    ):
        assert raw[off:].decode("utf-8").startswith(heading)
    # Rebuilding yields identical bytes.
    assert build_instruction_prompt(bundle).text == text


# --- gate reply builders --------------------------------------------------------


def test_reinforcement_restates_abstract(toy_bundle):
    msg = build_reinforcement_message(toy_bundle)
    assert msg.startswith("Please be sure to use the relevant columns provided")
    assert toy_bundle.abstract_text in msg


def test_redirect_lists_descriptions(toy_assertions):
    msg = build_redirect_message(list(toy_assertions[:2]))
    assert msg.startswith("The following findings from the abstract have not yet been attempted:")
    for a in toy_assertions[:2]:
        assert f"- {a.description}" in msg
    assert msg.rstrip().endswith("remaining findings.")


def test_redirect_preserves_argument_order(registry_dir):
    registry = load_assertions(registry_dir / "kurasz2020ethnoracial.json")
    chosen = [registry[3], registry[0]]
    msg = build_redirect_message(chosen)
    first = msg.index(chosen[0].description)
    second = msg.index(chosen[1].description)
    assert first < second


def test_redirect_empty_raises():
    with pytest.raises(EmptyRemaining):
        build_redirect_message([])
