"""HTTP control API for interactive runs.

Each active run is owned by one worker thread; gate actions arrive over HTTP,
are validated against the live state, and are handed to the worker through a
queue so every mutation of a run is serialized. Reads (listing, transcript,
assertions) go straight to the store and never block on the worker.

Runs found in the store but not started by this process are served read-only:
their gates cannot be acted on, but verdicts can still be recorded.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from pathlib import Path

from fastapi import Body, FastAPI, Query, Request
from fastapi.responses import JSONResponse

from .backend import BackendConfig, LiveBackend, ReplayBackend, load_cassette, record_wrap
from .errors import (
    EmptyRemaining,
    GateNotOpen,
    ParseError,
    RunTerminated,
    StudyReproError,
    UnknownAssertion,
    UnknownRun,
    UnsupportedMetric,
)
from .evaluation import judge, suggest_candidates
from .runtime import (
    GateStatus,
    StudyRun,
    UserAction,
    UserActionKind,
    new_run_id,
)
from .sandbox import ExecutionConfig, RunWorkspace
from .store import STATUS_GATE_OPEN, STATUS_RUNNING, STATUS_TERMINATED, RunStore
from .study import Assertion, AssertionKind, load_assertions, load_study_bundle

logger = logging.getLogger(__name__)

LONG_POLL_CAP_SECS = 30.0
ACTION_POLL_SECS = 0.25


def _expected_json(assertion: Assertion):
    if assertion.kind is AssertionKind.NUMERIC_POINT:
        return assertion.expected_point
    if assertion.kind is AssertionKind.NUMERIC_RANGE:
        return list(assertion.expected_range)
    return assertion.expected_bool


class ManagedRun:
    """A live run and the worker thread that drives it."""

    def __init__(self, store: RunStore, run_id: str):
        self.store = store
        self.run_id = run_id
        self.run: StudyRun | None = None
        self.lock = threading.RLock()
        self.changed = threading.Condition(self.lock)
        self.actions: "queue.Queue[UserAction]" = queue.Queue()
        self.action_pending = False
        self.thread = threading.Thread(
            target=self._loop, name=f"run-{run_id}", daemon=True
        )

    def attach(self, run: StudyRun) -> None:
        self.run = run

    def on_append(self, msg) -> None:
        self.store.append_message(self.run_id, msg)
        with self.changed:
            self.changed.notify_all()

    def start(self) -> None:
        self.thread.start()

    def _sync_status(self) -> None:
        state = self.run.state
        if state.termination is not None:
            self.store.set_status(
                self.run_id, STATUS_TERMINATED, state.termination.value, gate="Closed"
            )
        elif state.gate is GateStatus.OPEN:
            self.store.set_status(self.run_id, STATUS_GATE_OPEN, None, gate="Open")
        else:
            self.store.set_status(self.run_id, STATUS_RUNNING, None, gate="Closed")

    def _loop(self) -> None:
        while True:
            with self.lock:
                state = self.run.state
                if state.termination is not None:
                    break
                gate_open = state.gate is GateStatus.OPEN
            if gate_open:
                try:
                    action = self.actions.get(timeout=ACTION_POLL_SECS)
                except queue.Empty:
                    continue
                with self.lock:
                    try:
                        self.run.apply_user_action(action)
                        self.store.append_action(
                            self.run_id,
                            {
                                "kind": action.kind.value,
                                "assertion_ids": list(action.assertion_ids),
                            },
                        )
                    except StudyReproError as exc:
                        logger.warning("run %s: action failed: %s", self.run_id, exc)
                    finally:
                        self.action_pending = False
                    self._sync_status()
                    self.changed.notify_all()
            else:
                with self.lock:
                    if not self.actions.empty():
                        # A terminate can arrive while no gate is open.
                        action = self.actions.get_nowait()
                        self.action_pending = False
                        if action.kind is not UserActionKind.TERMINATE:
                            logger.warning(
                                "run %s: dropping %s, gate closed before it was applied",
                                self.run_id,
                                action.kind.value,
                            )
                            continue
                        try:
                            self.run.apply_user_action(action)
                            self.store.append_action(
                                self.run_id, {"kind": "terminate", "assertion_ids": []}
                            )
                        except RunTerminated:
                            pass
                    else:
                        try:
                            self.run.step()
                        except RunTerminated:
                            break
                    self._sync_status()
                    self.changed.notify_all()
        with self.changed:
            self._sync_status()
            self.changed.notify_all()

    def submit(self, action: UserAction) -> None:
        """Validated handoff to the worker. Raises on conflicts."""
        with self.lock:
            state = self.run.state
            if state.termination is not None:
                raise RunTerminated(f"run {self.run_id} already terminated")
            if action.kind is not UserActionKind.TERMINATE:
                if state.gate is not GateStatus.OPEN:
                    raise GateNotOpen("no approval gate is open")
                if self.action_pending:
                    raise GateNotOpen("an action for this gate is already pending")
                if action.kind is UserActionKind.REDIRECT and not action.assertion_ids:
                    if not self.run.remaining_assertions():
                        raise EmptyRemaining("every assertion is already marked attempted")
            self.action_pending = True
            self.actions.put(action)

    def mark_attempted(self, assertion_ids) -> None:
        with self.lock:
            self.run.mark_attempted(assertion_ids)
            attempted = sorted(self.run.state.attempted)
        self.store.set_attempted(self.run_id, attempted)


class RunManager:
    def __init__(self, store: RunStore):
        self.store = store
        self.runs: dict[str, ManagedRun] = {}
        self.lock = threading.Lock()

    def get(self, run_id: str) -> ManagedRun | None:
        with self.lock:
            return self.runs.get(run_id)

    def create(self, body: dict) -> str:
        bundle_path = body.get("bundle")
        assertions_path = body.get("assertions")
        if not bundle_path or not assertions_path:
            raise ParseError("bundle and assertions paths are required")
        try:
            bundle = load_study_bundle(bundle_path)
            registry = load_assertions(assertions_path)
        except FileNotFoundError as exc:
            raise ParseError(f"file not found: {exc}") from exc
        mode = body.get("mode", "replay")
        if mode not in ("replay", "record", "live"):
            raise ParseError(f"unknown mode {mode!r}")
        cassette = body.get("cassette")
        if mode in ("replay", "record") and not cassette:
            raise ParseError(f"mode {mode!r} requires a cassette path")
        if mode == "replay" and not Path(cassette).exists():
            raise ParseError(f"cassette not found: {cassette}")

        run_id = body.get("run_id") or new_run_id()
        config = {
            "bundle": bundle_path,
            "assertions": assertions_path,
            "mode": mode,
            "cassette": cassette,
            "actions": None,
            "interpreter": body.get("interpreter", "python3 {file}"),
            "timeout_secs": float(body.get("timeout_secs", 120.0)),
            "max_rounds": int(body.get("max_rounds", 40)),
            "model": body.get("model", "gpt-4o"),
        }
        self.store.create_run(
            run_id,
            bundle.study_id,
            bundle.title,
            config,
            assertions_source=assertions_path,
            cassette_source=cassette if mode == "replay" else None,
        )

        backend_config = BackendConfig(
            endpoint_url=body.get("endpoint", "https://api.openai.com/v1/chat/completions"),
            model_name=config["model"],
        )
        if mode == "replay":
            backend = ReplayBackend(
                load_cassette(self.store.cassette_path(run_id)), strict=True
            )
        elif mode == "record":
            backend = record_wrap(backend_config, cassette)
        else:
            backend = LiveBackend(backend_config)

        managed = ManagedRun(self.store, run_id)
        workspace = RunWorkspace(self.store.workspace_dir(run_id), bundle.dataset_path)
        run = StudyRun(
            run_id,
            bundle,
            registry,
            backend,
            workspace=workspace,
            exec_config=ExecutionConfig(
                interpreter_cmd=config["interpreter"], timeout_secs=config["timeout_secs"]
            ),
            max_rounds=config["max_rounds"],
            on_append=managed.on_append,
        )
        managed.attach(run)
        with self.lock:
            self.runs[run_id] = managed
        managed.start()
        return run_id


def create_app(store: RunStore, token: str | None = None, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="study reproduction control api")
    manager = RunManager(store)
    app.state.manager = manager

    if token:

        @app.middleware("http")
        async def require_token(request: Request, call_next):
            if request.headers.get("authorization") != f"Bearer {token}":
                return JSONResponse({"detail": "unauthorized"}, status_code=401)
            return await call_next(request)

    @app.exception_handler(UnknownRun)
    async def unknown_run(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=404)

    @app.exception_handler(GateNotOpen)
    async def gate_not_open(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=409)

    @app.exception_handler(RunTerminated)
    async def run_terminated(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=409)

    @app.exception_handler(StudyReproError)
    async def domain_error(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=400)

    def registry_for(run_id: str) -> list[Assertion]:
        path = store.assertions_path(run_id)
        store.read_meta(run_id)  # raises UnknownRun first
        if not path.exists():
            return []
        return load_assertions(path)

    @app.get("/runs")
    def list_runs():
        return {"runs": [r.to_dict() for r in store.list_runs()]}

    @app.post("/runs")
    def create_run(body: dict = Body(...)):
        run_id = manager.create(body)
        return {"run_id": run_id}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        record = store.get_record(run_id)
        meta = store.read_meta(run_id)
        return {
            **record.to_dict(),
            "config": meta.get("config", {}),
            "attempted": meta.get("attempted", []),
            "actions_applied": meta.get("actions_applied", []),
            "active": manager.get(run_id) is not None,
        }

    @app.get("/runs/{run_id}/transcript")
    def get_transcript(
        run_id: str,
        from_seq: int = Query(0, alias="from", ge=0),
        wait: float = Query(0.0, ge=0.0, le=LONG_POLL_CAP_SECS),
    ):
        messages = store.load_transcript(run_id, from_seq)
        managed = manager.get(run_id)
        if not messages and wait > 0 and managed is not None:
            deadline = time.monotonic() + wait
            with managed.changed:
                while True:
                    messages = store.load_transcript(run_id, from_seq)
                    if messages or managed.run.state.termination is not None:
                        break
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    managed.changed.wait(remaining)
        record = store.get_record(run_id)
        return {
            "messages": [m.to_dict() for m in messages],
            "next_from": from_seq + len(messages),
            "status": record.status,
            "termination": record.termination,
            "gate": record.gate,
        }

    @app.post("/runs/{run_id}/gate")
    def post_gate(run_id: str, body: dict = Body(...)):
        managed = manager.get(run_id)
        store.read_meta(run_id)
        if managed is None:
            raise GateNotOpen("run is not active in this server")
        action_name = body.get("action", "")
        if action_name not in ("approve", "reinforce", "redirect"):
            raise ParseError(f"unknown gate action {action_name!r}")
        ids = tuple(body.get("assertion_ids") or ())
        if ids:
            known = {a.assertion_id for a in registry_for(run_id)}
            missing = [i for i in ids if i not in known]
            if missing:
                raise UnknownAssertion(f"unknown assertion ids: {', '.join(missing)}")
        managed.submit(UserAction(UserActionKind(action_name), ids))
        return {"accepted": True, "run_id": run_id}

    @app.post("/runs/{run_id}/terminate")
    def post_terminate(run_id: str):
        managed = manager.get(run_id)
        store.read_meta(run_id)
        if managed is None:
            raise RunTerminated("run is not active in this server")
        managed.submit(UserAction(UserActionKind.TERMINATE))
        return {"accepted": True, "run_id": run_id}

    @app.post("/runs/{run_id}/attempted")
    def post_attempted(run_id: str, body: dict = Body(...)):
        ids = list(body.get("assertion_ids") or ())
        managed = manager.get(run_id)
        if managed is not None:
            managed.mark_attempted(ids)
            meta = store.read_meta(run_id)
            return {"attempted": meta.get("attempted", [])}
        registry = registry_for(run_id)
        known = {a.assertion_id for a in registry}
        missing = [i for i in ids if i not in known]
        if missing:
            raise UnknownAssertion(f"unknown assertion ids: {', '.join(missing)}")
        store.set_attempted(run_id, ids)
        return {"attempted": store.read_meta(run_id).get("attempted", [])}

    def _verdict_state(v: dict | None) -> str:
        if v is None:
            return "Pending"
        if v["rule"] == "NotAttempted":
            return "NotAttempted"
        return "Aligned" if v["aligned"] else "NotAligned"

    def _summary(registry: list[Assertion], verdicts: dict) -> dict:
        total = len(registry)
        judged = sum(1 for a in registry if a.assertion_id in verdicts)
        aligned = sum(
            1 for a in registry if verdicts.get(a.assertion_id, {}).get("aligned")
        )
        pct = (aligned / total * 100) if total else 0.0
        return {
            "aligned": aligned,
            "judged": judged,
            "total": total,
            "display": f"{aligned}/{total} ({pct:.1f}%)",
        }

    @app.get("/runs/{run_id}/assertions")
    def get_assertions(run_id: str, include_candidates: bool = Query(False)):
        registry = registry_for(run_id)
        meta = store.read_meta(run_id)
        managed = manager.get(run_id)
        if managed is not None:
            with managed.lock:
                attempted = set(managed.run.state.attempted)
        else:
            attempted = set(meta.get("attempted", []))
        verdicts = store.load_verdicts(run_id)
        transcript = store.load_transcript(run_id) if include_candidates else []
        rows = []
        for a in registry:
            v = verdicts.get(a.assertion_id)
            row = {
                "assertion_id": a.assertion_id,
                "description": a.description,
                "kind": a.kind.value,
                "metric_class": a.metric_class.value,
                "expected": _expected_json(a),
                "attempted": a.assertion_id in attempted,
                "verdict": v,
                "verdict_state": _verdict_state(v),
            }
            if include_candidates:
                row["candidates"] = [
                    {"value_text": c.value_text, "seq": c.seq, "snippet": c.snippet}
                    for c in suggest_candidates(a, transcript)[:5]
                ]
            rows.append(row)
        return {"assertions": rows, "summary": _summary(registry, verdicts)}

    @app.post("/runs/{run_id}/verdicts")
    def post_verdict(run_id: str, body: dict = Body(...)):
        registry = registry_for(run_id)
        aid = body.get("assertion_id")
        target = next((a for a in registry if a.assertion_id == aid), None)
        if target is None:
            raise UnknownAssertion(f"unknown assertion id: {aid!r}")
        if body.get("clear"):
            verdicts = store.load_verdicts(run_id)
            verdicts.pop(aid, None)
            store.save_verdicts(run_id, verdicts)
            return {"verdict": None, "summary": _summary(registry, verdicts)}
        try:
            verdict = judge(target, body)
        except UnsupportedMetric as exc:
            raise ParseError(str(exc)) from exc
        verdicts = store.load_verdicts(run_id)
        verdicts[verdict.assertion_id] = verdict.to_dict()
        store.save_verdicts(run_id, verdicts)
        return {"verdict": verdict.to_dict(), "summary": _summary(registry, verdicts)}

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=Path(static_dir), html=True), name="console")

    return app
