"""Append-only persistence for runs.

Layout under the store root:

    runs/<run_id>/transcript.log   one JSON message per line, append-only
    runs/<run_id>/meta             run metadata (status, config, study)
    runs/<run_id>/assertions.json  the registry snapshot this run was started with
    runs/<run_id>/report.vN        versioned evaluation reports
    runs/<run_id>/verdicts         operator verdicts recorded so far
    runs/<run_id>/cassette         backend recording or the replayed source
    runs/<run_id>/work/            sandbox scratch (not exported)

Appends are acknowledged only after fsync, so a message the caller saw
accepted survives a process kill. Readers ignore an unterminated final line;
such a tail was never acknowledged.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .errors import SeqGap, UnknownRun
from .runtime import Message

logger = logging.getLogger(__name__)

EPOCH_ISO = "1970-01-01T00:00:00+00:00"

STATUS_RUNNING = "Running"
STATUS_GATE_OPEN = "GateOpen"
STATUS_TERMINATED = "Terminated"


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    study_id: str
    study_title: str
    started_at: str
    status: str
    termination: str | None
    gate: str
    message_count: int

    def status_display(self) -> str:
        if self.status == STATUS_TERMINATED and self.termination:
            return f"{self.status}({self.termination})"
        return self.status

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "study_id": self.study_id,
            "study_title": self.study_title,
            "started_at": self.started_at,
            "status": self.status,
            "termination": self.termination,
            "gate": self.gate,
            "message_count": self.message_count,
        }


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


class RunStore:
    """File-backed store rooted at one directory. One writer per run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.runs_dir = self.root / "runs"
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._counts: dict[str, int] = {}

    # -- paths ---------------------------------------------------------------

    def run_dir(self, run_id: str) -> Path:
        return self.runs_dir / run_id

    def _existing_run_dir(self, run_id: str) -> Path:
        d = self.run_dir(run_id)
        if not d.is_dir():
            raise UnknownRun(f"no such run: {run_id}")
        return d

    def transcript_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "transcript.log"

    def cassette_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "cassette"

    def assertions_path(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "assertions.json"

    def workspace_dir(self, run_id: str) -> Path:
        return self.run_dir(run_id) / "work"

    # -- lifecycle -----------------------------------------------------------

    def create_run(
        self,
        run_id: str,
        study_id: str,
        study_title: str,
        config: dict,
        assertions_source: str | Path | None = None,
        cassette_source: str | Path | None = None,
        started_at: str | None = None,
    ) -> Path:
        d = self.run_dir(run_id)
        if d.exists():
            raise FileExistsError(f"run directory already exists: {d}")
        d.mkdir(parents=True)
        if assertions_source is not None:
            shutil.copy(Path(assertions_source), self.assertions_path(run_id))
        if cassette_source is not None:
            shutil.copy(Path(cassette_source), self.cassette_path(run_id))
        meta = {
            "run_id": run_id,
            "study_id": study_id,
            "study_title": study_title,
            "started_at": started_at or datetime.now(timezone.utc).isoformat(),
            "status": STATUS_RUNNING,
            "termination": None,
            "gate": "Closed",
            "config": config,
        }
        self._write_meta(run_id, meta)
        self._counts[run_id] = 0
        return d

    def read_meta(self, run_id: str) -> dict:
        d = self._existing_run_dir(run_id)
        return json.loads((d / "meta").read_text(encoding="utf-8"))

    def _write_meta(self, run_id: str, meta: dict) -> None:
        path = self.run_dir(run_id) / "meta"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(path)

    def set_status(
        self, run_id: str, status: str, termination: str | None = None, gate: str = "Closed"
    ) -> None:
        meta = self.read_meta(run_id)
        meta["status"] = status
        meta["termination"] = termination
        meta["gate"] = gate
        self._write_meta(run_id, meta)

    def append_action(self, run_id: str, entry: dict) -> None:
        """Record a user action in the run's metadata, for audit and replay."""
        meta = self.read_meta(run_id)
        meta.setdefault("actions_applied", []).append(entry)
        self._write_meta(run_id, meta)

    def set_attempted(self, run_id: str, assertion_ids: list[str]) -> None:
        meta = self.read_meta(run_id)
        meta["attempted"] = sorted(set(meta.get("attempted", [])) | set(assertion_ids))
        self._write_meta(run_id, meta)

    # -- transcript ----------------------------------------------------------

    def message_count(self, run_id: str) -> int:
        if run_id not in self._counts:
            self._counts[run_id] = len(self._read_lines(run_id))
        return self._counts[run_id]

    def _read_lines(self, run_id: str) -> list[str]:
        self._existing_run_dir(run_id)
        path = self.transcript_path(run_id)
        if not path.exists():
            return []
        data = path.read_text(encoding="utf-8")
        if not data:
            return []
        lines = data.split("\n")
        # Anything after the final newline was never acknowledged.
        return [line for line in lines[:-1] if line]

    def append_message(self, run_id: str, msg: Message) -> None:
        """Durably append one message. Returns only after fsync."""
        count = self.message_count(run_id)
        if msg.seq != count:
            raise SeqGap(expected=count, got=msg.seq)
        path = self.transcript_path(run_id)
        line = _dump_line(msg.to_dict()) + "\n"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        self._counts[run_id] = count + 1

    def load_transcript(self, run_id: str, from_seq: int = 0) -> list[Message]:
        messages = [Message.from_dict(json.loads(line)) for line in self._read_lines(run_id)]
        return [m for m in messages if m.seq >= from_seq]

    # -- listing -------------------------------------------------------------

    def get_record(self, run_id: str) -> RunRecord:
        meta = self.read_meta(run_id)
        return RunRecord(
            run_id=meta["run_id"],
            study_id=meta.get("study_id", ""),
            study_title=meta.get("study_title", ""),
            started_at=meta.get("started_at", EPOCH_ISO),
            status=meta.get("status", STATUS_RUNNING),
            termination=meta.get("termination"),
            gate=meta.get("gate", "Closed"),
            message_count=len(self._read_lines(run_id)),
        )

    def list_runs(self) -> list[RunRecord]:
        records = []
        for d in self.runs_dir.iterdir():
            if not d.is_dir() or not (d / "meta").exists():
                continue
            try:
                records.append(self.get_record(d.name))
            except (json.JSONDecodeError, KeyError, UnknownRun):
                logger.warning("skipping unreadable run directory: %s", d)
        records.sort(key=lambda r: (r.started_at, r.run_id), reverse=True)
        return records

    # -- reports and verdicts --------------------------------------------------

    def _report_versions(self, run_id: str) -> list[int]:
        d = self._existing_run_dir(run_id)
        versions = []
        for p in d.glob("report.v*"):
            suffix = p.name.rsplit(".v", 1)[-1]
            if suffix.isdigit():
                versions.append(int(suffix))
        return sorted(versions)

    def save_report(self, run_id: str, report: dict) -> int:
        """Write the next report version; earlier versions are retained."""
        versions = self._report_versions(run_id)
        version = (versions[-1] if versions else 0) + 1
        path = self.run_dir(run_id) / f"report.v{version}"
        path.write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        return version

    def latest_report(self, run_id: str) -> tuple[int, dict] | None:
        versions = self._report_versions(run_id)
        if not versions:
            return None
        version = versions[-1]
        path = self.run_dir(run_id) / f"report.v{version}"
        return version, json.loads(path.read_text(encoding="utf-8"))

    def save_verdicts(self, run_id: str, verdicts: dict) -> None:
        d = self._existing_run_dir(run_id)
        path = d / "verdicts"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(verdicts, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        tmp.replace(path)

    def load_verdicts(self, run_id: str) -> dict:
        d = self._existing_run_dir(run_id)
        path = d / "verdicts"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    # -- export --------------------------------------------------------------

    def export_run(
        self, run_id: str, dest: str | Path, normalize_timestamps: bool = False
    ) -> Path:
        """Copy the run's artifacts into dest.

        With normalization on, every stored timestamp is zeroed so two
        replays of the same run can be compared byte for byte.
        """
        src = self._existing_run_dir(run_id)
        dest = Path(dest)
        dest.mkdir(parents=True, exist_ok=True)

        messages = [json.loads(line) for line in self._read_lines(run_id)]
        if normalize_timestamps:
            for m in messages:
                m["created_at"] = EPOCH_ISO
        with open(dest / "transcript.log", "w", encoding="utf-8") as fh:
            for m in messages:
                fh.write(_dump_line(m) + "\n")

        meta = self.read_meta(run_id)
        if normalize_timestamps:
            meta["started_at"] = EPOCH_ISO
        (dest / "meta").write_text(
            json.dumps(meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )

        if messages:
            (dest / "prompt.txt").write_bytes(messages[0]["content"].encode("utf-8"))

        for name in ("assertions.json", "verdicts", "cassette"):
            if (src / name).exists():
                shutil.copy(src / name, dest / name)
        for version in self._report_versions(run_id):
            shutil.copy(src / f"report.v{version}", dest / f"report.v{version}")
        return dest
