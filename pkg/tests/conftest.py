"""Shared fixtures plus the acceptance-criteria summary hook."""

import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# The scripted conversations and action lists used to build the cassettes live
# next to the fixtures they generate; tests import them from there.
sys.path.insert(0, str(FIXTURES))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_bundle_path() -> Path:
    return FIXTURES / "toy" / "bundle.json"


@pytest.fixture(scope="session")
def toy_assertions_path() -> Path:
    return FIXTURES / "toy" / "assertions.json"


@pytest.fixture(scope="session")
def toy_cassette_path() -> Path:
    return FIXTURES / "cassettes" / "cassette_toy.jsonl"


@pytest.fixture(scope="session")
def console_cassette_path() -> Path:
    return FIXTURES / "cassettes" / "cassette_console.jsonl"


@pytest.fixture(scope="session")
def mci_bundle_path() -> Path:
    return FIXTURES / "mci" / "mci_disparities_bundle.json"


@pytest.fixture(scope="session")
def registry_dir() -> Path:
    return FIXTURES / "registry"


@pytest.fixture(scope="session")
def judgments_dir() -> Path:
    return FIXTURES / "judgments"


@pytest.fixture
def toy_bundle(toy_bundle_path):
    from studyrepro.study import load_study_bundle

    return load_study_bundle(toy_bundle_path)


@pytest.fixture
def toy_assertions(toy_assertions_path):
    from studyrepro.study import load_assertions

    return load_assertions(toy_assertions_path)


def pytest_collection_modifyitems(config, items):
    labels = {}
    for item in items:
        if item.fspath and item.fspath.basename == "test_acceptance.py":
            doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
            labels[item.nodeid] = doc
    config._acceptance_labels = labels


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, printed after the run."""
    labels = getattr(config, "_acceptance_labels", {})
    if not labels:
        return
    outcomes = {}
    # Passed setup/teardown reports land in the unnamed stats bucket; only the
    # named buckets decide an outcome, and a failure always wins.
    for status, reports in terminalreporter.stats.items():
        if status not in ("passed", "failed", "error", "skipped"):
            continue
        for rep in reports:
            nodeid = getattr(rep, "nodeid", None)
            if nodeid not in labels:
                continue
            if status in ("failed", "error"):
                outcomes[nodeid] = "failed"
            else:
                outcomes.setdefault(nodeid, status)
    terminalreporter.section("acceptance criteria")
    for nodeid, label in labels.items():
        status = outcomes.get(nodeid, "not run")
        word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(status, "NOT RUN")
        terminalreporter.write_line(f"{word}  {label}")
