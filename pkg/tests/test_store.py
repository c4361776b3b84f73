from __future__ import annotations

import json
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgxsupply import store
from sgxsupply.store import (
    AppendLog,
    CorruptLog,
    IoFailure,
    SchemaMismatch,
    read_snapshot,
    write_snapshot,
)


def test_roundtrip(tmp_path):
    state = {"caches": {"a": [1, 2]}, "last_merge": {"a": 5}}
    write_snapshot(state, tmp_path / "s.json", written_at=1.0)
    snap = read_snapshot(tmp_path / "s.json")
    assert snap.payload == state and snap.written_at == 1.0


def test_schema_mismatch(tmp_path):
    write_snapshot({}, tmp_path / "s.json", version=99)
    with pytest.raises(SchemaMismatch):
        read_snapshot(tmp_path / "s.json")


@pytest.mark.parametrize("victim", ["fsync", "replace"])
def test_fault_mid_write_keeps_old(tmp_path, monkeypatch, victim):
    path = tmp_path / "s.json"
    write_snapshot({"v": 1}, path)

    def boom(*args, **kwargs):
        raise OSError(28, "No space left on device")

    monkeypatch.setattr(store.os, victim, boom)
    with pytest.raises(IoFailure):
        write_snapshot({"v": 2}, path)
    monkeypatch.undo()
    assert read_snapshot(path).payload == {"v": 1}
    assert [p.name for p in tmp_path.iterdir()] == ["s.json"]


def test_partial_write_to_temp_is_invisible(tmp_path, monkeypatch):
    path = tmp_path / "s.json"
    write_snapshot({"v": 1}, path)
    real_fdopen = os.fdopen

    class Torn:
        def __init__(self, fh):
            self.fh = fh

        def __enter__(self):
            return self

        def __exit__(self, *exc):
            self.fh.close()

        def write(self, text):
            self.fh.write(text[: len(text) // 2])
            raise OSError(5, "I/O error")

    monkeypatch.setattr(store.os, "fdopen", lambda fd, *a, **k: Torn(real_fdopen(fd, *a, **k)))
    with pytest.raises(IoFailure):
        write_snapshot({"v": 2, "pad": "x" * 100}, path)
    monkeypatch.undo()
    assert read_snapshot(path).payload == {"v": 1}


def test_append_replay(tmp_path):
    log = AppendLog(tmp_path / "log.jsonl")
    for i in range(3):
        log.append({"i": i})
    assert log.replay() == [{"i": 0}, {"i": 1}, {"i": 2}]
    assert not log.truncated


def test_truncated_tail(tmp_path):
    path = tmp_path / "log.jsonl"
    log = AppendLog(path)
    log.extend([{"i": 0}, {"i": 1}])
    with open(path, "a") as fh:
        fh.write('{"i": 2')
    assert log.replay() == [{"i": 0}, {"i": 1}]
    assert log.truncated
    log.append({"i": 3})
    assert log.replay() == [{"i": 0}, {"i": 1}, {"i": 3}]
    assert not log.truncated


def test_empty_log(tmp_path):
    (tmp_path / "log.jsonl").write_text("")
    assert AppendLog(tmp_path / "log.jsonl").replay() == []
    assert AppendLog(tmp_path / "missing.jsonl").replay() == []


def test_corrupt_middle_line(tmp_path):
    (tmp_path / "log.jsonl").write_text('{"a":1}\nnot json\n{"a":2}\n')
    with pytest.raises(CorruptLog):
        AppendLog(tmp_path / "log.jsonl").replay()


records = st.lists(
    st.dictionaries(st.text(max_size=5), st.one_of(st.integers(), st.text(max_size=8)), max_size=3),
    max_size=12,
)


@settings(max_examples=60, deadline=None)
@given(records, st.data())
def test_replay_equals_prefix(tmp_path_factory, recs, data):
    path = tmp_path_factory.mktemp("log") / "log.jsonl"
    path.touch()
    log = AppendLog(path)
    log.extend(recs)
    assert log.replay() == recs
    # Chopping the file anywhere yields a prefix of the records.
    raw = path.read_bytes()
    cut = data.draw(st.integers(0, len(raw)))
    path.write_bytes(raw[:cut])
    replayed = AppendLog(path).replay()
    assert replayed == recs[: len(replayed)]
    assert len(replayed) == raw[:cut].count(b"\n")
    json.dumps(replayed)
