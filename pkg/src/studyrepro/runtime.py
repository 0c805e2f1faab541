"""Conversation state machine for a reproduction run.

A run is a group chat: LLM-backed agents (Planner, Critic, Engineer,
Scientist) speak in a fixed rotation, a procedural Executor runs the
Engineer's code blocks, and a procedural Manager injects user directives and
termination notices. Progress pauses whenever an agent asks the user for
approval; the gate must be resolved by a user action before any agent may
speak again.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from importlib import resources
from typing import Callable, Protocol, Sequence

from .backend import ChatBackend, ChatTurn, cassette_key
from .errors import (
    BackendError,
    GateIsOpen,
    GateNotOpen,
    RosterInvalid,
    RunTerminated,
    UnknownAssertion,
)
from .prompt import (
    build_instruction_prompt,
    build_redirect_message,
    build_reinforcement_message,
)
from .sandbox import ExecutionConfig, RunWorkspace, Script, extract_code_blocks, format_result
from .study import Assertion, StudyBundle

GATE_MARKER = "AWAITING-USER-APPROVAL"
TERMINATE_RE = re.compile(r"\bTERMINATE\b")
DEFAULT_MAX_ROUNDS = 40
DEFAULT_SPEAKING_ORDER = ("Planner", "Critic", "Engineer", "Scientist")

USER_SPEAKER = "User"
MANAGER_SPEAKER = "Manager"
EXECUTOR_SPEAKER = "Executor"

APPROVAL_TEXT = "Approved. Proceed."

# Final-paragraph question words that signal a request for the user's sign-off,
# as opposed to agents questioning each other.
_APPROVAL_KEYWORDS = ("approve", "approval", "approved", "proceed")


class MessageKind(str, Enum):
    TEXT = "text"
    CODE_RESULT = "code_result"
    GATE_REQUEST = "gate_request"
    USER_DIRECTIVE = "user_directive"
    TERMINATION_NOTICE = "termination_notice"


# Kinds spoken by an LLM-backed agent; gate requests are agent speech too.
AGENT_KINDS = (MessageKind.TEXT, MessageKind.GATE_REQUEST)


class GateStatus(str, Enum):
    OPEN = "Open"
    CLOSED = "Closed"


class TerminationReason(str, Enum):
    MAX_ROUNDS = "MaxRounds"
    AGENTS_DECLARED_DONE = "AgentsDeclaredDone"
    USER_TERMINATED = "UserTerminated"
    BACKEND_FAILURE = "BackendFailure"


class UserActionKind(str, Enum):
    APPROVE = "approve"
    REINFORCE = "reinforce"
    REDIRECT = "redirect"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class Message:
    """One transcript entry. seq is contiguous from zero within a run."""

    seq: int
    speaker: str
    kind: MessageKind
    content: str
    created_at: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "speaker": self.speaker,
            "kind": self.kind.value,
            "content": self.content,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Message":
        return cls(
            seq=data["seq"],
            speaker=data["speaker"],
            kind=MessageKind(data["kind"]),
            content=data["content"],
            created_at=data["created_at"],
        )


@dataclass(frozen=True)
class AgentRole:
    name: str
    system_instructions: str
    is_llm_backed: bool
    can_emit_code: bool = False
    is_executor: bool = False


@dataclass(frozen=True)
class UserAction:
    kind: UserActionKind
    assertion_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class StepEvent:
    """What one step (or user action) did to the run."""

    speaker: str
    appended: tuple[Message, ...]
    gate_opened: bool = False
    termination: TerminationReason | None = None
    error: str | None = None


@dataclass
class RunState:
    run_id: str
    study_id: str = ""
    transcript: list[Message] = field(default_factory=list)
    gate: GateStatus = GateStatus.CLOSED
    gate_opened_by: int | None = None
    termination: TerminationReason | None = None
    attempted: set[str] = field(default_factory=set)
    # Seq of the last reinforce/redirect directive. A TERMINATE declared before
    # the user pushed back is stale and must not end the run.
    declaration_barrier: int = -1

    @property
    def round(self) -> int:
        """Rounds completed = agent messages spoken. Executor turns are mechanical
        follow-through on the preceding agent turn, not rounds of their own."""
        return sum(1 for m in self.transcript if m.kind in AGENT_KINDS)

    def latest_agent_message(self) -> Message | None:
        for m in reversed(self.transcript):
            if m.kind in AGENT_KINDS:
                return m
        return None


def _role_text(filename: str) -> str:
    return (resources.files(__package__) / "roles" / filename).read_text("utf-8").strip()


def default_roster() -> tuple[AgentRole, ...]:
    """The standard six roles with their packaged instruction texts."""
    return (
        AgentRole("Planner", _role_text("planner.txt"), is_llm_backed=True),
        AgentRole("Engineer", _role_text("engineer.txt"), is_llm_backed=True, can_emit_code=True),
        AgentRole("Scientist", _role_text("scientist.txt"), is_llm_backed=True),
        AgentRole("Critic", _role_text("critic.txt"), is_llm_backed=True),
        AgentRole(EXECUTOR_SPEAKER, _role_text("executor.txt"), is_llm_backed=False, is_executor=True),
        AgentRole(MANAGER_SPEAKER, _role_text("manager.txt"), is_llm_backed=False),
    )


def validate_roster(roster: Sequence[AgentRole]) -> None:
    names = [r.name for r in roster]
    if len(set(names)) != len(names):
        raise RosterInvalid("duplicate role names in roster")
    if not any(r.is_llm_backed for r in roster):
        raise RosterInvalid("roster has no LLM-backed roles")
    for required in (EXECUTOR_SPEAKER, MANAGER_SPEAKER):
        if required not in names:
            raise RosterInvalid(f"roster is missing the {required} role")
    executors = [r for r in roster if r.is_executor]
    if len(executors) != 1:
        raise RosterInvalid(f"roster needs exactly one executor role, found {len(executors)}")
    if executors[0].is_llm_backed:
        raise RosterInvalid("the executor role cannot be LLM-backed")
    reserved = {USER_SPEAKER, EXECUTOR_SPEAKER, MANAGER_SPEAKER}
    for r in roster:
        if r.is_llm_backed and r.name in reserved:
            raise RosterInvalid(f"{r.name} cannot be LLM-backed")


def detect_gate(content: str) -> bool:
    """Whether a message asks the user for approval.

    True when the literal marker line appears, or when the final paragraph is
    a question containing an approval keyword.
    """
    for line in content.splitlines():
        if line.strip() == GATE_MARKER:
            return True
    paragraphs = [p.strip() for p in re.split(r"\n\s*\n", content) if p.strip()]
    if not paragraphs:
        return False
    final = paragraphs[-1]
    if not final.endswith("?"):
        return False
    lowered = final.lower()
    return any(word in lowered for word in _APPROVAL_KEYWORDS)


def transcript_text(messages: Sequence[Message]) -> str:
    """Canonical text form of a transcript, used for replay keys."""
    return "\n\n".join(f"{m.speaker} [{m.kind.value}]\n{m.content}" for m in messages)


def check_termination(state: RunState, max_rounds: int) -> TerminationReason | None:
    """The reason the run should end now, if any. Never fires while the gate is open."""
    if state.termination is not None:
        return state.termination
    if state.gate is GateStatus.OPEN:
        return None
    latest = state.latest_agent_message()
    if (
        latest is not None
        and latest.seq > state.declaration_barrier
        and TERMINATE_RE.search(latest.content)
    ):
        return TerminationReason.AGENTS_DECLARED_DONE
    if state.round >= max_rounds:
        return TerminationReason.MAX_ROUNDS
    return None


class SpeakerPolicy(Protocol):
    def next_speaker(self, state: RunState) -> str: ...


class RoundRobinPolicy:
    """Fixed rotation over the LLM-backed roles, resuming after the last one heard."""

    def __init__(self, speaking_order: Sequence[str] = DEFAULT_SPEAKING_ORDER):
        if not speaking_order:
            raise RosterInvalid("speaking order is empty")
        self.speaking_order = tuple(speaking_order)

    def next_speaker(self, state: RunState) -> str:
        latest = state.latest_agent_message()
        if latest is None or latest.speaker not in self.speaking_order:
            return self.speaking_order[0]
        i = self.speaking_order.index(latest.speaker)
        return self.speaking_order[(i + 1) % len(self.speaking_order)]


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


class StudyRun:
    """Controller for one reproduction run.

    Appends go through ``on_append`` before entering the in-memory transcript,
    so a persistent store can refuse (or fsync) a message before the run
    counts it as delivered.
    """

    def __init__(
        self,
        run_id: str,
        bundle: StudyBundle,
        assertions: Sequence[Assertion],
        backend: ChatBackend,
        workspace: RunWorkspace | None = None,
        roster: Sequence[AgentRole] | None = None,
        policy: SpeakerPolicy | None = None,
        exec_config: ExecutionConfig | None = None,
        max_rounds: int = DEFAULT_MAX_ROUNDS,
        on_append: Callable[[Message], None] | None = None,
        clock: Callable[[], datetime] | None = None,
    ):
        roster = tuple(roster) if roster is not None else default_roster()
        validate_roster(roster)
        self.bundle = bundle
        self.assertions = tuple(assertions)
        self.backend = backend
        self.workspace = workspace
        self.roster = roster
        self.roles = {r.name: r for r in roster}
        self.exec_config = exec_config or ExecutionConfig()
        self.max_rounds = max_rounds
        self.on_append = on_append
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        if policy is None:
            llm_names = {r.name for r in roster if r.is_llm_backed}
            if llm_names == set(DEFAULT_SPEAKING_ORDER):
                policy = RoundRobinPolicy()
            else:
                policy = RoundRobinPolicy([r.name for r in roster if r.is_llm_backed])
        self.policy = policy
        self.state = RunState(run_id=run_id, study_id=bundle.study_id)
        prompt = build_instruction_prompt(bundle)
        self._append(USER_SPEAKER, MessageKind.USER_DIRECTIVE, prompt.text)

    def _append(self, speaker: str, kind: MessageKind, content: str) -> Message:
        if self.state.termination is not None:
            raise RunTerminated(f"run {self.state.run_id} already terminated")
        msg = Message(
            seq=len(self.state.transcript),
            speaker=speaker,
            kind=kind,
            content=content,
            created_at=self._clock().isoformat(),
        )
        if self.on_append is not None:
            self.on_append(msg)
        self.state.transcript.append(msg)
        return msg

    def _terminate(self, reason: TerminationReason) -> Message:
        notice = self._append(
            MANAGER_SPEAKER, MessageKind.TERMINATION_NOTICE, f"Run terminated: {reason.value}."
        )
        self.state.termination = reason
        return notice

    def _pending_scripts(self) -> list[Script]:
        """Unexecuted code blocks from the most recent code-emitting agent's message.

        A code_result anywhere after that message means it already ran. Messages
        from roles that do not emit code (and user directives) are skipped, so a
        gate opened between the Engineer's code and its execution does not lose
        the pending work.
        """
        if self.workspace is None:
            return []
        for m in reversed(self.state.transcript):
            if m.kind is MessageKind.CODE_RESULT:
                return []
            if m.kind in AGENT_KINDS:
                role = self.roles.get(m.speaker)
                if role is not None and role.can_emit_code:
                    return extract_code_blocks(m.content, origin_seq=m.seq)
        return []

    def _maybe_terminate(self) -> tuple[Message, ...]:
        reason = check_termination(self.state, self.max_rounds)
        if reason is None or self.state.termination is not None:
            return ()
        return (self._terminate(reason),)

    def step(self) -> StepEvent:
        """Advance the conversation by one speaker turn."""
        if self.state.termination is not None:
            raise RunTerminated(f"run {self.state.run_id} already terminated")
        if self.state.gate is GateStatus.OPEN:
            raise GateIsOpen("approval gate is open; a user action is required")

        reason = check_termination(self.state, self.max_rounds)
        if reason is not None:
            notice = self._terminate(reason)
            return StepEvent(MANAGER_SPEAKER, (notice,), termination=reason)

        pending = self._pending_scripts()
        if pending:
            return self._executor_turn(pending)
        return self._llm_turn(self.policy.next_speaker(self.state))

    def _executor_turn(self, pending: Sequence[Script]) -> StepEvent:
        # All of one message's blocks land in a single code_result, in block
        # order; a failing block stops the remainder of that message's blocks.
        parts = []
        for script in pending:
            result = self.workspace.run(script, self.exec_config)
            parts.append(format_result(result))
            if result.exit_code != 0:
                break
        msg = self._append(EXECUTOR_SPEAKER, MessageKind.CODE_RESULT, "\n\n".join(parts))
        return StepEvent(EXECUTOR_SPEAKER, (msg,))

    def _llm_turn(self, speaker: str) -> StepEvent:
        role = self.roles[speaker]
        prior = tuple(self.state.transcript)
        key = cassette_key(role.name, transcript_text(prior))
        turns = self._chat_turns(role, prior)
        try:
            reply = self.backend.complete_turn(key, role.system_instructions, turns)
        except BackendError as exc:
            notice = self._terminate(TerminationReason.BACKEND_FAILURE)
            return StepEvent(
                speaker,
                (notice,),
                termination=TerminationReason.BACKEND_FAILURE,
                error=str(exc),
            )
        asks_approval = detect_gate(reply)
        kind = MessageKind.GATE_REQUEST if asks_approval else MessageKind.TEXT
        msg = self._append(speaker, kind, reply)
        appended = [msg]
        if asks_approval:
            self.state.gate = GateStatus.OPEN
            self.state.gate_opened_by = msg.seq
            return StepEvent(speaker, tuple(appended), gate_opened=True)
        notices = self._maybe_terminate()
        appended.extend(notices)
        return StepEvent(
            speaker,
            tuple(appended),
            termination=self.state.termination if notices else None,
        )

    @staticmethod
    def _chat_turns(role: AgentRole, prior: Sequence[Message]) -> list[ChatTurn]:
        turns = []
        for m in prior:
            if m.speaker == role.name:
                turns.append(ChatTurn("assistant", m.content))
            else:
                turns.append(ChatTurn("user", f"{m.speaker}: {m.content}"))
        return turns

    def _require_open_gate(self):
        if self.state.gate is not GateStatus.OPEN:
            raise GateNotOpen("no approval gate is open")

    def apply_user_action(self, action: UserAction) -> StepEvent:
        """Resolve the open gate (or terminate the run) on the user's behalf."""
        if self.state.termination is not None:
            raise RunTerminated(f"run {self.state.run_id} already terminated")

        if action.kind is UserActionKind.TERMINATE:
            notice = self._terminate(TerminationReason.USER_TERMINATED)
            return StepEvent(
                USER_SPEAKER, (notice,), termination=TerminationReason.USER_TERMINATED
            )

        self._require_open_gate()
        if action.kind is UserActionKind.APPROVE:
            content = APPROVAL_TEXT
        elif action.kind is UserActionKind.REINFORCE:
            content = build_reinforcement_message(self.bundle)
        elif action.kind is UserActionKind.REDIRECT:
            content = build_redirect_message(self._redirect_targets(action.assertion_ids))
        else:
            raise ValueError(f"unhandled user action: {action.kind}")

        self.state.gate = GateStatus.CLOSED
        self.state.gate_opened_by = None
        directive = self._append(USER_SPEAKER, MessageKind.USER_DIRECTIVE, content)
        if action.kind in (UserActionKind.REINFORCE, UserActionKind.REDIRECT):
            self.state.declaration_barrier = directive.seq
        appended = [directive]
        notices = self._maybe_terminate()
        appended.extend(notices)
        return StepEvent(
            USER_SPEAKER,
            tuple(appended),
            termination=self.state.termination if notices else None,
        )

    def _redirect_targets(self, assertion_ids: Sequence[str]) -> list[Assertion]:
        by_id = {a.assertion_id: a for a in self.assertions}
        if assertion_ids:
            missing = [i for i in assertion_ids if i not in by_id]
            if missing:
                raise UnknownAssertion(f"unknown assertion ids: {', '.join(missing)}")
            return [by_id[i] for i in assertion_ids]
        return self.remaining_assertions()

    def mark_attempted(self, assertion_ids: Sequence[str]) -> None:
        by_id = {a.assertion_id for a in self.assertions}
        missing = [i for i in assertion_ids if i not in by_id]
        if missing:
            raise UnknownAssertion(f"unknown assertion ids: {', '.join(missing)}")
        self.state.attempted.update(assertion_ids)

    def remaining_assertions(self) -> list[Assertion]:
        return [a for a in self.assertions if a.assertion_id not in self.state.attempted]
