"""Chat-completion backends: a live wire-protocol client plus record/replay.

The live client speaks the de-facto standard chat-completions protocol
(POST {model, messages, temperature} -> choices[0].message.content). The
replay backend serves recorded responses from a cassette file keyed by a
digest of (speaking role, full prior transcript), which makes offline runs
deterministic and immediately flags prompt drift.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .errors import (
    AuthError,
    CassetteExhausted,
    KeyMismatch,
    ParseError,
    ProtocolError,
    TransportError,
)

logger = logging.getLogger(__name__)

CASSETTE_FORMAT = "studyrepro-cassette"
CASSETTE_VERSION = 1

_VALID_ROLE_TAGS = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatTurn:
    """One message on the wire. Empty content is legal only for assistant turns."""

    role_tag: str
    content: str

    def __post_init__(self):
        if self.role_tag not in _VALID_ROLE_TAGS:
            raise ValueError(f"bad role_tag {self.role_tag!r}")
        if not self.content and self.role_tag != "assistant":
            raise ValueError(f"{self.role_tag} turn must have content")


@dataclass(frozen=True)
class BackendConfig:
    """Live-endpoint settings. The model is configuration, never code."""

    endpoint_url: str = ""
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    max_rounds_hint: int = 40
    api_key_env: str = "OPENAI_API_KEY"
    retry_attempts: int = 3
    retry_base_delay: float = 0.5
    request_timeout: float = 120.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class ChatBackend(Protocol):
    """What the agent runtime needs from any backend.

    ``key`` is the conversation-position digest (see :func:`cassette_key`);
    live backends ignore it, replay backends consume nothing else.
    """

    def complete_turn(self, key: str, system_text: str, turns: Sequence[ChatTurn]) -> str: ...


def normalize_text(text: str) -> str:
    """Canonical newline form used for all digests."""
    return text.replace("\r\n", "\n").replace("\r", "\n")


def cassette_key(role_name: str, transcript_text: str) -> str:
    """Digest of (role, full prior transcript). sha256 over canonical UTF-8."""
    payload = role_name + "\x00" + normalize_text(transcript_text)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --- live client --------------------------------------------------------------


class LiveBackend:
    """HTTP client for the standard chat-completions wire protocol."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        if not config.endpoint_url:
            raise ValueError("live mode requires endpoint_url")
        self.config = config
        self._session = session or requests.Session()

    def complete_turn(self, key: str, system_text: str, turns: Sequence[ChatTurn]) -> str:
        del key  # positional digests only matter for replay
        return complete(self.config, system_text, turns, session=self._session)


def complete(
    config: BackendConfig,
    system_text: str,
    turns: Sequence[ChatTurn],
    session: requests.Session | None = None,
) -> str:
    """One chat completion against the live endpoint.

    Transient transport failures (connection errors, 5xx) are retried with
    exponential backoff up to ``config.retry_attempts`` total attempts. The
    API key is read from the environment at call time and never logged.
    """
    api_key = os.environ.get(config.api_key_env, "")
    if not api_key:
        raise AuthError(f"environment variable {config.api_key_env} is not set")
    body = {
        "model": config.model_name,
        "messages": [{"role": "system", "content": system_text}]
        + [{"role": t.role_tag, "content": t.content} for t in turns],
        "temperature": config.temperature,
    }
    headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
    session = session or requests.Session()
    last_error: Exception | None = None
    for attempt in range(config.retry_attempts):
        if attempt:
            delay = config.retry_base_delay * (2 ** (attempt - 1))
            logger.debug("retrying completion in %.2fs (attempt %d)", delay, attempt + 1)
            time.sleep(delay)
        try:
            resp = session.post(
                config.endpoint_url, json=body, headers=headers, timeout=config.request_timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code >= 500:
            last_error = TransportError(f"HTTP {resp.status_code} from endpoint")
            continue
        if resp.status_code >= 400:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion response: {exc}") from exc
        if not isinstance(content, str):
            raise ProtocolError(f"message content is {type(content).__name__}, not text")
        return content
    raise TransportError(f"gave up after {config.retry_attempts} attempts: {last_error}")


# --- cassettes ----------------------------------------------------------------


@dataclass
class ReplayCassette:
    """Ordered recorded responses; the cursor tracks consumption."""

    entries: list[tuple[str, str]] = field(default_factory=list)
    cursor: int = 0

    def remaining(self) -> int:
        return len(self.entries) - self.cursor


def replay_complete(cassette: ReplayCassette, key: str, strict: bool = True) -> str:
    """Serve the next recorded response.

    Strict mode (default) demands the requested key match the recorded one,
    which catches any drift in prompts or conversation order. Lenient mode is
    positional only, for exploratory refactors.
    """
    if cassette.cursor >= len(cassette.entries):
        raise CassetteExhausted(
            f"cassette exhausted after {len(cassette.entries)} entries"
        )
    recorded_key, response = cassette.entries[cassette.cursor]
    if strict and recorded_key != key:
        raise KeyMismatch(cursor=cassette.cursor, expected=recorded_key, actual=key)
    cassette.cursor += 1
    return response


def _cassette_header() -> str:
    return json.dumps({"format": CASSETTE_FORMAT, "version": CASSETTE_VERSION})


def load_cassette(path: str | Path) -> ReplayCassette:
    """Read a line-delimited cassette file (header line, then key/response records)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError("cassette file is empty (missing header)", locus=path.name)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError("cassette header is not JSON", locus=f"{path.name}:1") from exc
    if not isinstance(header, dict) or header.get("format") != CASSETTE_FORMAT:
        raise ParseError("not a cassette file", locus=f"{path.name}:1")
    entries: list[tuple[str, str]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entries.append((record["key"], record["response"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad cassette record: {exc}", locus=f"{path.name}:{lineno}") from exc
    return ReplayCassette(entries=entries)


class ReplayBackend:
    """Backend over a loaded cassette. One instance per run (cursor is mutable)."""

    def __init__(self, cassette: ReplayCassette, strict: bool = True):
        self.cassette = cassette
        self.strict = strict

    def complete_turn(self, key: str, system_text: str, turns: Sequence[ChatTurn]) -> str:
        del system_text, turns  # replay is keyed on conversation position alone
        return replay_complete(self.cassette, key, strict=self.strict)


class RecordingBackend:
    """Wraps another backend and appends every completion to a cassette file.

    The file is created with its header on construction, so even an empty
    session leaves a valid (replayable, zero-entry) cassette behind. Each
    record is flushed as it is written.
    """

    def __init__(self, inner: ChatBackend, cassette_path: str | Path):
        self.inner = inner
        self.path = Path(cassette_path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(_cassette_header() + "\n")
        except OSError as exc:
            raise IOError(f"cannot write cassette at {self.path}: {exc}") from exc

    def complete_turn(self, key: str, system_text: str, turns: Sequence[ChatTurn]) -> str:
        response = self.inner.complete_turn(key, system_text, turns)
        record = json.dumps({"key": key, "response": response}, ensure_ascii=False)
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record + "\n")
        except OSError as exc:
            raise IOError(f"cannot append to cassette at {self.path}: {exc}") from exc
        return response


def record_wrap(config: BackendConfig, cassette_path: str | Path) -> RecordingBackend:
    """Live backend whose every completion is captured for later replay."""
    return RecordingBackend(LiveBackend(config), cassette_path)
