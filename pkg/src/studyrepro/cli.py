"""Command line surface: run a study, evaluate it, verify a replay, serve the API.

Exit codes: 0 success, 1 verification mismatch, 2 configuration or load
failure, 3 backend or judgment failure.
"""

from __future__ import annotations

import json
import shlex
import sys
from pathlib import Path

import click

from .backend import BackendConfig, LiveBackend, ReplayBackend, load_cassette, record_wrap
from .errors import (
    BackendError,
    DuplicateVerdict,
    EmptyRemaining,
    MissingVerdict,
    ParseError,
    StudyReproError,
    UnknownAssertion,
    UnknownRun,
    UnsupportedMetric,
)
from .evaluation import (
    accuracy_display,
    compile_report,
    initial_verdicts,
    judgments_to_verdicts,
    load_judgments,
    report_to_dict,
)
from .runtime import (
    GateStatus,
    StudyRun,
    TerminationReason,
    UserAction,
    UserActionKind,
    new_run_id,
)
from .sandbox import ExecutionConfig, RunWorkspace
from .store import (
    STATUS_GATE_OPEN,
    STATUS_RUNNING,
    STATUS_TERMINATED,
    EPOCH_ISO,
    RunStore,
)
from .study import load_assertions, load_study_bundle, validate_dataset

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_inputs(bundle_path: str, assertions_path: str):
    try:
        bundle = load_study_bundle(bundle_path)
    except (ParseError, OSError) as exc:
        _fail(EXIT_CONFIG, f"cannot load bundle {bundle_path}: {exc}")
    try:
        registry = load_assertions(assertions_path)
    except (ParseError, OSError) as exc:
        _fail(EXIT_CONFIG, f"cannot load assertions {assertions_path}: {exc}")
    return bundle, registry


class ScriptedActions:
    """Gate actions read from a file, one entry per line.

    Lines: ``approve``, ``reinforce``, ``redirect [id,id,...]``, ``terminate``,
    ``mark id[,id...]``. Blank lines and ``#`` comments are skipped. ``mark``
    lines take effect when reached, before the next gate action.
    """

    def __init__(self, path: str | Path):
        self.entries: list[tuple[str, tuple[str, ...]]] = []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            cmd = parts[0].lower()
            ids = tuple(
                i.strip() for i in parts[1].split(",") if i.strip()
            ) if len(parts) > 1 else ()
            if cmd not in ("approve", "reinforce", "redirect", "terminate", "mark"):
                raise ParseError(f"unknown action line: {line!r}", locus=str(path))
            self.entries.append((cmd, ids))
        self.cursor = 0

    def next_action(self, run: StudyRun, record) -> UserAction:
        while self.cursor < len(self.entries):
            cmd, ids = self.entries[self.cursor]
            self.cursor += 1
            if cmd == "mark":
                run.mark_attempted(ids)
                record({"kind": "mark", "assertion_ids": list(ids)})
                continue
            return UserAction(UserActionKind(cmd), ids)
        click.echo("action script exhausted at an open gate; terminating", err=True)
        return UserAction(UserActionKind.TERMINATE)


class TerminalActions:
    """Interactive gate prompt on the controlling terminal."""

    def next_action(self, run: StudyRun, record) -> UserAction:
        excerpt = run.state.transcript[-1].content.strip().splitlines()
        click.echo("\n--- approval gate ---")
        for line in excerpt[-6:]:
            click.echo(f"  {line}")
        while True:
            raw = click.prompt("action (approve/reinforce/redirect/terminate/mark ids)")
            parts = raw.strip().split(None, 1)
            if not parts:
                continue
            cmd = parts[0].lower()
            ids = tuple(
                i.strip() for i in parts[1].split(",") if i.strip()
            ) if len(parts) > 1 else ()
            if cmd == "mark":
                try:
                    run.mark_attempted(ids)
                    record({"kind": "mark", "assertion_ids": list(ids)})
                except UnknownAssertion as exc:
                    click.echo(str(exc))
                continue
            if cmd in ("approve", "reinforce", "redirect", "terminate"):
                return UserAction(UserActionKind(cmd), ids)
            click.echo("unrecognized action")


def _sync_status(store: RunStore, run: StudyRun) -> None:
    state = run.state
    if state.termination is not None:
        store.set_status(
            state.run_id, STATUS_TERMINATED, state.termination.value, gate="Closed"
        )
    elif state.gate is GateStatus.OPEN:
        store.set_status(state.run_id, STATUS_GATE_OPEN, None, gate="Open")
    else:
        store.set_status(state.run_id, STATUS_RUNNING, None, gate="Closed")


def _echo_message(msg) -> None:
    first = msg.content.strip().splitlines()[0] if msg.content.strip() else ""
    if len(first) > 100:
        first = first[:97] + "..."
    click.echo(f"[{msg.seq}] {msg.speaker}: {first}")


def drive_run(run: StudyRun, store: RunStore, actions) -> TerminationReason:
    """Step the run to termination, resolving gates from the action source."""
    run_id = run.state.run_id

    def record(entry: dict):
        store.append_action(run_id, entry)

    last_error = None
    while run.state.termination is None:
        if run.state.gate is GateStatus.OPEN:
            action = actions.next_action(run, record)
            try:
                event = run.apply_user_action(action)
                record(
                    {"kind": action.kind.value, "assertion_ids": list(action.assertion_ids)}
                )
            except EmptyRemaining:
                click.echo("redirect unavailable: every assertion is marked attempted", err=True)
                event = run.apply_user_action(UserAction(UserActionKind.TERMINATE))
                record({"kind": "terminate", "assertion_ids": []})
        else:
            event = run.step()
        for msg in event.appended:
            _echo_message(msg)
        if event.error:
            last_error = event.error
        _sync_status(store, run)
    if last_error:
        click.echo(f"backend failure: {last_error}", err=True)
    return run.state.termination


@click.group()
def main():
    """Drive, score, and serve automated study reproduction runs."""


@main.command("run")
@click.option("--bundle", "bundle_path", required=True, help="Study bundle file.")
@click.option("--assertions", "assertions_path", required=True, help="Assertion registry file.")
@click.option("--replay", "replay_path", default=None, help="Replay responses from a cassette.")
@click.option("--record", "record_path", default=None, help="Record live responses to a cassette.")
@click.option("--live", "live_mode", is_flag=True, help="Use the live backend (default).")
@click.option("--interpreter", default="python3 {file}", show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--max-rounds", type=int, default=40, show_default=True)
@click.option("--actions", "actions_path", default=None, help="Scripted gate actions file.")
@click.option("--store", "store_path", default="store", show_default=True)
@click.option("--run-id", default=None, help="Explicit run id (default: generated).")
@click.option("--endpoint", default="https://api.openai.com/v1/chat/completions")
@click.option("--model", default="gpt-4o", show_default=True)
def cli_run(
    bundle_path,
    assertions_path,
    replay_path,
    record_path,
    live_mode,
    interpreter,
    timeout,
    max_rounds,
    actions_path,
    store_path,
    run_id,
    endpoint,
    model,
):
    """Start a reproduction run and drive it to termination."""
    modes = [m for m, v in (("replay", replay_path), ("record", record_path), ("live", live_mode)) if v]
    if len(modes) > 1:
        _fail(EXIT_CONFIG, "choose at most one of --replay, --record, --live")
    mode = modes[0] if modes else "live"
    if timeout <= 0:
        _fail(EXIT_CONFIG, "--timeout must be positive")
    try:
        shlex.split(interpreter)
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"bad --interpreter: {exc}")

    bundle, registry = _load_inputs(bundle_path, assertions_path)
    if actions_path:
        try:
            actions = ScriptedActions(actions_path)
        except (ParseError, OSError) as exc:
            _fail(EXIT_CONFIG, f"cannot load actions {actions_path}: {exc}")
    else:
        actions = TerminalActions()
    for warning in validate_dataset(bundle):
        click.echo(f"warning: {warning.warning_class.value}: {warning.detail}", err=True)

    store = RunStore(store_path)
    run_id = run_id or new_run_id()
    config = {
        "bundle": bundle_path,
        "assertions": assertions_path,
        "mode": mode,
        "cassette": replay_path or record_path,
        "actions": actions_path,
        "interpreter": interpreter,
        "timeout_secs": timeout,
        "max_rounds": max_rounds,
        "model": model,
    }
    try:
        store.create_run(
            run_id,
            bundle.study_id,
            bundle.title,
            config,
            assertions_source=assertions_path,
            cassette_source=replay_path if mode == "replay" else None,
        )
    except FileExistsError as exc:
        _fail(EXIT_CONFIG, str(exc))

    backend_config = BackendConfig(endpoint_url=endpoint, model_name=model)
    if mode == "replay":
        try:
            backend = ReplayBackend(load_cassette(store.cassette_path(run_id)), strict=True)
        except ParseError as exc:
            _fail(EXIT_CONFIG, f"cannot load cassette: {exc}")
    elif mode == "record":
        backend = record_wrap(backend_config, record_path)
    else:
        backend = LiveBackend(backend_config)

    workspace = RunWorkspace(store.workspace_dir(run_id), bundle.dataset_path)
    run = StudyRun(
        run_id,
        bundle,
        registry,
        backend,
        workspace=workspace,
        exec_config=ExecutionConfig(interpreter_cmd=interpreter, timeout_secs=timeout),
        max_rounds=max_rounds,
        on_append=lambda m: store.append_message(run_id, m),
    )
    _sync_status(store, run)

    reason = drive_run(run, store, actions)

    report = compile_report(registry, initial_verdicts(registry), run_id=run_id)
    store.save_report(run_id, report_to_dict(report, registry))
    click.echo(f"terminated: {reason.value}")
    click.echo(run_id)
    if reason is TerminationReason.BACKEND_FAILURE:
        sys.exit(EXIT_BACKEND)


@main.command("evaluate")
@click.option("--run", "run_id", required=True)
@click.option("--judgments", "judgments_path", required=True)
@click.option("--store", "store_path", default="store", show_default=True)
def cli_evaluate(run_id, judgments_path, store_path):
    """Score a run's judgments against its assertion registry."""
    store = RunStore(store_path)
    try:
        registry = load_assertions(store.assertions_path(run_id))
    except UnknownRun as exc:
        _fail(EXIT_CONFIG, str(exc))
    except (ParseError, OSError) as exc:
        _fail(EXIT_CONFIG, f"cannot load run registry: {exc}")
    try:
        rows = load_judgments(judgments_path)
    except ParseError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        verdicts = judgments_to_verdicts(registry, rows)
        report = compile_report(registry, verdicts, run_id=run_id)
    except MissingVerdict as exc:
        _fail(EXIT_BACKEND, f"missing judgments for: {', '.join(exc.assertion_ids)}")
    except (UnknownAssertion, DuplicateVerdict, UnsupportedMetric, ParseError) as exc:
        _fail(EXIT_BACKEND, str(exc))
    version = store.save_report(run_id, report_to_dict(report, registry))
    store.save_verdicts(run_id, {v.assertion_id: v.to_dict() for v in report.verdicts})
    click.echo(f"report.v{version} saved")
    click.echo(accuracy_display(report))


@main.command("replay-verify")
@click.option("--run", "run_id", required=True)
@click.option("--store", "store_path", default="store", show_default=True)
def cli_replay_verify(run_id, store_path):
    """Re-execute a run from its stored cassette and compare transcripts."""
    import tempfile

    store = RunStore(store_path)
    try:
        meta = store.read_meta(run_id)
    except UnknownRun as exc:
        _fail(EXIT_CONFIG, str(exc))
    config = meta.get("config", {})
    cassette_file = store.cassette_path(run_id)
    if not cassette_file.exists():
        _fail(EXIT_CONFIG, f"run {run_id} has no cassette to replay")
    bundle_path = config.get("bundle")
    if not bundle_path or not Path(bundle_path).exists():
        _fail(EXIT_CONFIG, f"bundle file from run config not found: {bundle_path}")
    bundle, registry = _load_inputs(bundle_path, str(store.assertions_path(run_id)))

    with tempfile.TemporaryDirectory(prefix="replay-verify-") as tmp:
        shadow = RunStore(Path(tmp) / "shadow")
        shadow.create_run(
            run_id,
            meta.get("study_id", ""),
            meta.get("study_title", ""),
            config,
            assertions_source=store.assertions_path(run_id),
            cassette_source=cassette_file,
        )
        backend = ReplayBackend(load_cassette(cassette_file), strict=True)
        workspace = RunWorkspace(shadow.workspace_dir(run_id), bundle.dataset_path)
        run = StudyRun(
            run_id,
            bundle,
            registry,
            backend,
            workspace=workspace,
            exec_config=ExecutionConfig(
                interpreter_cmd=config.get("interpreter", "python3 {file}"),
                timeout_secs=config.get("timeout_secs", 120.0),
            ),
            max_rounds=config.get("max_rounds", 40),
            on_append=lambda m: shadow.append_message(run_id, m),
        )
        actions = iter(meta.get("actions_applied", []))
        try:
            while run.state.termination is None:
                if run.state.gate is GateStatus.OPEN:
                    entry = next(actions, None)
                    if entry is None:
                        _fail(EXIT_MISMATCH, "recorded actions exhausted at an open gate")
                    ids = tuple(entry.get("assertion_ids", []))
                    if entry["kind"] == "mark":
                        run.mark_attempted(ids)
                        continue
                    run.apply_user_action(UserAction(UserActionKind(entry["kind"]), ids))
                else:
                    run.step()
        except BackendError as exc:
            _fail(EXIT_MISMATCH, f"replay diverged: {exc}")

        original = store.load_transcript(run_id)
        replayed = shadow.load_transcript(run_id)
        if len(original) != len(replayed):
            _fail(
                EXIT_MISMATCH,
                f"transcript length differs: stored {len(original)}, replayed {len(replayed)}",
            )
        for a, b in zip(original, replayed):
            if (a.speaker, a.kind, a.content) != (b.speaker, b.kind, b.content):
                _fail(EXIT_MISMATCH, f"transcript diverges at seq {a.seq}")
    click.echo(f"replay verified: {len(original)} messages identical")


@main.command("serve")
@click.option("--addr", default="127.0.0.1:8765", show_default=True)
@click.option("--store", "store_path", default="store", show_default=True)
@click.option("--static-dir", default=None, help="Serve a built console from this directory.")
def cli_serve(addr, store_path, static_dir):
    """Serve the control API for interactive runs."""
    import os
    import socket

    import uvicorn

    from .server import create_app

    host, _, port_text = addr.rpartition(":")
    if not host or not port_text.isdigit():
        _fail(EXIT_CONFIG, f"--addr must be HOST:PORT, got {addr!r}")
    port = int(port_text)

    loopback = host in ("127.0.0.1", "localhost", "::1")
    token = os.environ.get("REPRO_AGENT_TOKEN")
    if not loopback and not token:
        _fail(EXIT_CONFIG, "non-loopback serve requires REPRO_AGENT_TOKEN to be set")

    probe = socket.socket(socket.AF_INET6 if ":" in host and host != "localhost" else socket.AF_INET)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host if host != "localhost" else "127.0.0.1", port))
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot bind {addr}: {exc}")
    finally:
        probe.close()

    app = create_app(RunStore(store_path), token=token if not loopback else None, static_dir=static_dir)
    click.echo(f"serving on http://{addr}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
