"""
Durable state: atomic JSON snapshots and append-only JSONL logs.

A snapshot is written to a temporary sibling and renamed over the target, so
readers see either the old or the new document. A log record is committed by
its trailing newline; a partial final line left by a crash is dropped on
replay and repaired on the next append.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1


class StoreError(Exception):
    pass


class IoFailure(StoreError):
    pass


class SchemaMismatch(StoreError):
    pass


class CorruptLog(StoreError):
    pass


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json_atomic(path: str | os.PathLike, obj: Any) -> None:
    _write_atomic(Path(path), dumps(obj))


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"writing {path}: {exc}") from exc


@dataclass(frozen=True)
class Snapshot:
    payload: Any
    version: int
    written_at: float


def write_snapshot(
    state: Any,
    path: str | os.PathLike,
    *,
    version: int = SCHEMA_VERSION,
    written_at: float | None = None,
) -> Snapshot:
    snap = Snapshot(state, version, time.time() if written_at is None else written_at)
    write_json_atomic(
        path,
        {"version": snap.version, "written_at": snap.written_at, "payload": snap.payload},
    )
    return snap


def read_snapshot(path: str | os.PathLike, *, version: int = SCHEMA_VERSION) -> Snapshot:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("version") != version:
        found = raw.get("version") if isinstance(raw, dict) else None
        raise SchemaMismatch(f"{path}: schema version {found!r}, expected {version}")
    return Snapshot(raw["payload"], raw["version"], raw.get("written_at", 0))


class AppendLog:
    """One JSON record per line; the newline is the commit marker."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self.truncated = False

    def append(self, record: Any) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        if "\n" in line:
            raise ValueError("record does not serialize to a single line")
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._repair_tail()
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise IoFailure(f"appending to {self.path}: {exc}") from exc

    def extend(self, records) -> None:
        for record in records:
            self.append(record)

    def _repair_tail(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, "rb+") as fh:
            data = fh.read()
            if data and not data.endswith(b"\n"):
                fh.truncate(data.rfind(b"\n") + 1)

    def replay(self) -> list[Any]:
        """Every fully written record, in write order.

        Sets ``truncated`` when a partial final line was dropped.
        """
        self.truncated = False
        try:
            data = self.path.read_text(encoding="utf-8")
        except FileNotFoundError:
            return []
        except OSError as exc:
            raise IoFailure(f"reading {self.path}: {exc}") from exc
        lines = data.split("\n")
        if lines[-1]:
            self.truncated = True
        records = []
        for lineno, line in enumerate(lines[:-1], 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptLog(f"{self.path}:{lineno}: {exc.msg}") from None
        return records
