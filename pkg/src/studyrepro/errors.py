"""Exception types shared across the package.

Every error raised on a documented contract boundary has a named class here
so callers (CLI, server, tests) can branch on type instead of message text.
"""

from __future__ import annotations


class StudyReproError(Exception):
    """Base class for all package errors."""


class ParseError(StudyReproError):
    """Input file is structurally invalid. Carries a locus (field path or line)."""

    def __init__(self, message: str, locus: str | None = None):
        self.locus = locus
        super().__init__(f"{message} (at {locus})" if locus else message)


class InvariantViolation(StudyReproError):
    """A domain value violates one of its declared invariants."""


# --- prompt building ---------------------------------------------------------


class EmptyRemaining(StudyReproError):
    """Redirect requested but no assertions remain to attempt."""


# --- backend -----------------------------------------------------------------


class BackendError(StudyReproError):
    """Base class for chat-backend failures."""


class AuthError(BackendError):
    """Missing or rejected API credentials."""


class TransportError(BackendError):
    """Network-level failure that persisted through retries."""


class ProtocolError(BackendError):
    """The endpoint answered, but not in the expected wire shape."""


class CassetteExhausted(BackendError):
    """Replay requested past the end of the cassette."""


class KeyMismatch(BackendError):
    """Strict replay found a different key at the cursor position."""

    def __init__(self, cursor: int, expected: str, actual: str):
        self.cursor = cursor
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"cassette key mismatch at entry {cursor}: "
            f"recorded {expected[:16]}…, requested {actual[:16]}…"
        )


# --- agent runtime -----------------------------------------------------------


class RosterInvalid(StudyReproError):
    """Run roster does not contain exactly the required roles."""


class GateNotOpen(StudyReproError):
    """User action requires an open approval gate."""


class GateIsOpen(StudyReproError):
    """step() called while the run is paused on an approval gate."""


class RunTerminated(StudyReproError):
    """Operation attempted on a run whose termination is already set."""


class UnknownAssertion(StudyReproError):
    """Assertion id not present in the run's registry."""


# --- sandbox -----------------------------------------------------------------


class SpawnError(StudyReproError):
    """Interpreter process could not be started."""


# --- evaluation --------------------------------------------------------------


class UnsupportedMetric(StudyReproError):
    """No automatic alignment rule exists for this metric class."""


class MissingVerdict(StudyReproError):
    """Report compilation found registry assertions without a verdict."""

    def __init__(self, assertion_ids: list[str]):
        self.assertion_ids = assertion_ids
        super().__init__("missing verdicts for: " + ", ".join(assertion_ids))


class DuplicateVerdict(StudyReproError):
    """More than one verdict supplied for the same assertion."""


# --- run store ---------------------------------------------------------------


class SeqGap(StudyReproError):
    """Append would break transcript seq contiguity."""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected seq {expected}, got {got}")


class UnknownRun(StudyReproError):
    """No run with this id exists in the store."""


# --- control surface ---------------------------------------------------------


class BindError(StudyReproError):
    """Server listen address is invalid or not permitted."""
