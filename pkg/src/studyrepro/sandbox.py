"""Sandboxed execution of agent-written analysis scripts.

Scripts are fenced code blocks lifted from Engineer messages. Each run owns a
scratch directory (``data/`` with the staged dataset, ``scripts/`` with the
numbered script files, ``out/`` for artifacts) and scripts execute there as
child processes with a wall-clock timeout and per-stream output caps.

The default isolation is a write guard injected into Python children via
``sitecustomize``: writes resolving outside the run directory raise
``PermissionError``. Heavier isolation (container exec) is a command-prefix
configuration, not code.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import InvariantViolation, SpawnError

logger = logging.getLogger(__name__)

OUTPUT_CAP_BYTES = 32 * 1024
TRUNCATION_MARKER = "\n…[truncated]"
KILL_GRACE_SECS = 2.0
TIMEOUT_EXITCODE_TEXT = "TIMEOUT"

SANDBOX_ROOT_ENV = "STUDYREPRO_SANDBOX_ROOT"
GUARD_DIR_NAME = ".guard"


@dataclass(frozen=True)
class Script:
    """One fenced code block, with the message seq it came from."""

    language_tag: str
    body: str
    origin_seq: int = 0

    def __post_init__(self):
        if not self.body:
            raise InvariantViolation("script body is empty")


@dataclass(frozen=True)
class ExecutionResult:
    """Captured outcome of one script run. exit_code is None when killed at timeout."""

    exit_code: int | None
    stdout: str
    stderr: str
    duration: float
    workdir: Path

    @property
    def timed_out(self) -> bool:
        return self.exit_code is None


@dataclass(frozen=True)
class ExecutionConfig:
    """How scripts are launched. The interpreter is configuration, never hard-coded."""

    interpreter_cmd: str = "python3 {file}"
    timeout_secs: float = 120.0
    write_guard: bool = True
    command_prefix: tuple[str, ...] = ()


def extract_code_blocks(content: str, origin_seq: int = 0) -> list[Script]:
    """All triple-backtick fenced blocks in document order.

    The fence language tag is captured verbatim. Unterminated fences and
    whitespace-only blocks are ignored.
    """
    scripts: list[Script] = []
    in_block = False
    tag = ""
    body_lines: list[str] = []
    for line in content.split("\n"):
        stripped = line.strip()
        if not in_block:
            if stripped.startswith("```"):
                tag = stripped[3:].strip()
                body_lines = []
                in_block = True
        elif stripped == "```":
            body = "\n".join(body_lines)
            if body.strip():
                scripts.append(Script(language_tag=tag, body=body, origin_seq=origin_seq))
            in_block = False
        else:
            body_lines.append(line)
    return scripts


# Injected into Python children via PYTHONPATH; blocks writes that resolve
# outside the sandbox root. Best-effort for Python interpreters only.
_GUARD_SOURCE = '''\
import builtins
import io
import os

_ROOT = os.path.realpath(os.environ.get("STUDYREPRO_SANDBOX_ROOT", os.getcwd()))
_ALLOWED = {os.devnull, "/dev/stdout", "/dev/stderr", "/dev/tty"}
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def _inside(path):
    try:
        real = os.path.realpath(os.fspath(path))
    except TypeError:
        return True  # fd or exotic target: leave it alone
    return real in _ALLOWED or real == _ROOT or real.startswith(_ROOT + os.sep)


def _deny(path):
    raise PermissionError("sandbox: write outside workdir denied: %r" % (path,))


_open = builtins.open


def _guarded_open(file, mode="r", *args, **kwargs):
    if any(c in mode for c in "wax+") and not _inside(file):
        _deny(file)
    return _open(file, mode, *args, **kwargs)


builtins.open = _guarded_open
io.open = _guarded_open

_os_open = os.open


def _guarded_os_open(path, flags, *args, **kwargs):
    if flags & _WRITE_FLAGS and not _inside(path):
        _deny(path)
    return _os_open(path, flags, *args, **kwargs)


os.open = _guarded_os_open


def _wrap_path_op(fn):
    def wrapped(path, *args, **kwargs):
        if not _inside(path):
            _deny(path)
        return fn(path, *args, **kwargs)

    return wrapped


def _wrap_two_path_op(fn):
    def wrapped(src, dst, *args, **kwargs):
        if not _inside(dst):
            _deny(dst)
        return fn(src, dst, *args, **kwargs)

    return wrapped


for _name in ("remove", "unlink", "rmdir", "mkdir", "truncate"):
    setattr(os, _name, _wrap_path_op(getattr(os, _name)))
for _name in ("rename", "replace", "link", "symlink"):
    setattr(os, _name, _wrap_two_path_op(getattr(os, _name)))
'''


def _ensure_guard(workdir: Path) -> Path:
    guard_dir = workdir / GUARD_DIR_NAME
    guard_dir.mkdir(exist_ok=True)
    guard_file = guard_dir / "sitecustomize.py"
    if not guard_file.exists():
        guard_file.write_text(_GUARD_SOURCE, encoding="utf-8")
    return guard_dir


def _next_script_path(workdir: Path) -> Path:
    scripts_dir = workdir / "scripts"
    scripts_dir.mkdir(exist_ok=True)
    n = len(list(scripts_dir.glob("*.src")))
    return scripts_dir / f"{n:03d}.src"


def _truncate(data: bytes) -> str:
    if len(data) <= OUTPUT_CAP_BYTES:
        return data.decode("utf-8", errors="replace")
    return data[:OUTPUT_CAP_BYTES].decode("utf-8", errors="replace") + TRUNCATION_MARKER


def execute(
    script: Script,
    workdir: str | Path,
    interpreter_cmd: str = "python3 {file}",
    timeout: float = 120.0,
    write_guard: bool = True,
    command_prefix: tuple[str, ...] = (),
) -> ExecutionResult:
    """Run one script as a child process with workdir as its current directory.

    The body is written to ``<workdir>/scripts/NNN.src`` and the interpreter
    command template is invoked on it ({file} is the script path, {workdir}
    the run directory). Both streams are captured and capped; the process is
    killed once the timeout elapses.
    """
    workdir = Path(workdir).resolve()
    if not workdir.is_dir():
        raise SpawnError(f"workdir does not exist: {workdir}")
    script_path = _next_script_path(workdir)
    script_path.write_text(script.body + "\n", encoding="utf-8")

    argv = [
        part.replace("{file}", str(script_path)).replace("{workdir}", str(workdir))
        for part in (*command_prefix, *shlex.split(interpreter_cmd))
    ]
    if "{file}" not in interpreter_cmd:
        argv.append(str(script_path))

    env = dict(os.environ)
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    if write_guard:
        guard_dir = _ensure_guard(workdir)
        env[SANDBOX_ROOT_ENV] = str(workdir)
        env["PYTHONPATH"] = str(guard_dir) + (
            os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else ""
        )
        tmp_dir = workdir / ".tmp"
        tmp_dir.mkdir(exist_ok=True)
        env["TMPDIR"] = str(tmp_dir)

    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=workdir,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
    except FileNotFoundError as exc:
        raise SpawnError(f"interpreter not found: {argv[0]}") from exc
    except OSError as exc:
        raise SpawnError(f"could not spawn {argv[0]}: {exc}") from exc

    timed_out = False
    try:
        out, err = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        timed_out = True
        proc.kill()
        out, err = proc.communicate(timeout=KILL_GRACE_SECS)
    duration = time.monotonic() - started

    result = ExecutionResult(
        exit_code=None if timed_out else proc.returncode,
        stdout=_truncate(out),
        stderr=_truncate(err),
        duration=duration,
        workdir=workdir,
    )
    logger.debug(
        "executed %s: exit=%s duration=%.2fs", script_path.name, result.exit_code, duration
    )
    return result


def format_result(res: ExecutionResult) -> str:
    """Render a result the way it is appended to the conversation."""
    code = TIMEOUT_EXITCODE_TEXT if res.timed_out else str(res.exit_code)
    return f"exitcode: {code}\noutput:\n{res.stdout}{res.stderr}"


class RunWorkspace:
    """Per-run scratch directory: stages the dataset and runs scripts in place.

    Layout: ``data/<dataset basename>``, ``scripts/NNN.src``, ``out/``.
    Scripts from one run share the directory so later scripts can read what
    earlier ones wrote.
    """

    def __init__(self, root: str | Path, dataset_source: str | Path | None = None):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "data").mkdir(exist_ok=True)
        (self.root / "scripts").mkdir(exist_ok=True)
        (self.root / "out").mkdir(exist_ok=True)
        if dataset_source is not None:
            dataset_source = Path(dataset_source)
            if dataset_source.exists():
                shutil.copy(dataset_source, self.root / "data" / dataset_source.name)
            else:
                logger.warning("dataset source missing, not staged: %s", dataset_source)

    def run(self, script: Script, config: ExecutionConfig) -> ExecutionResult:
        return execute(
            script,
            self.root,
            interpreter_cmd=config.interpreter_cmd,
            timeout=config.timeout_secs,
            write_guard=config.write_guard,
            command_prefix=config.command_prefix,
        )
