"""Automated study reproduction: prompt assembly, agent orchestration, scoring."""

from .backend import (
    BackendConfig,
    ChatBackend,
    ChatTurn,
    LiveBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayCassette,
    cassette_key,
    load_cassette,
    record_wrap,
)
from .errors import (
    BackendError,
    DuplicateVerdict,
    EmptyRemaining,
    GateIsOpen,
    GateNotOpen,
    InvariantViolation,
    MissingVerdict,
    ParseError,
    RosterInvalid,
    RunTerminated,
    SeqGap,
    SpawnError,
    StudyReproError,
    UnknownAssertion,
    UnknownRun,
    UnsupportedMetric,
)
from .evaluation import (
    AlignmentRule,
    Candidate,
    EvaluationReport,
    Verdict,
    accuracy_display,
    compile_report,
    match_boolean,
    match_numeric,
    match_range,
    suggest_candidates,
)
from .prompt import (
    PromptText,
    build_instruction_prompt,
    build_redirect_message,
    build_reinforcement_message,
)
from .runtime import (
    AgentRole,
    GateStatus,
    Message,
    MessageKind,
    RoundRobinPolicy,
    RunState,
    StepEvent,
    StudyRun,
    TerminationReason,
    UserAction,
    UserActionKind,
    default_roster,
    detect_gate,
    new_run_id,
)
from .sandbox import (
    ExecutionConfig,
    ExecutionResult,
    RunWorkspace,
    Script,
    execute,
    extract_code_blocks,
    format_result,
)
from .store import RunRecord, RunStore
from .study import (
    Assertion,
    AssertionKind,
    ColumnSpec,
    MetricClass,
    SampleRows,
    StudyBundle,
    load_assertions,
    load_study_bundle,
    save_bundle,
    validate_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
