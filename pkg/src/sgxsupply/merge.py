"""
Simulated upstream/fork repository pair with line-based three-way merge.

Trees map normalized paths to tuples of lines. Hunks address base lines with
0-based half-open ranges ``[base_start, base_stop)``; ``line_range`` gives the
1-based inclusive form used in reports. A pure insertion has an empty range
located at the gap before ``base_start``.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .store import AppendLog, write_json_atomic


class MergeError(Exception):
    pass


class InvalidPath(MergeError):
    pass


class CorruptRepo(MergeError):
    pass


class StaleEscalation(MergeError):
    pass


def normalize_path(path: str) -> str:
    if not path or path.startswith("/") or path.endswith("/") or "//" in path:
        raise InvalidPath(f"malformed path: {path!r}")
    if any(part in (".", "..") for part in path.split("/")):
        raise InvalidPath(f"relative segment in path: {path!r}")
    return path


class FileTree:
    """Immutable mapping of path to lines."""

    __slots__ = ("_files",)

    def __init__(self, files: Mapping[str, Iterable[str]] | None = None) -> None:
        self._files = {
            normalize_path(p): tuple(lines) for p, lines in sorted((files or {}).items())
        }

    @property
    def files(self) -> Mapping[str, tuple[str, ...]]:
        return dict(self._files)

    def get(self, path: str) -> tuple[str, ...] | None:
        return self._files.get(path)

    def paths(self) -> list[str]:
        return list(self._files)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FileTree) and self._files == other._files

    def __hash__(self) -> int:
        return hash(tuple(self._files.items()))

    def __repr__(self) -> str:
        return f"FileTree({self._files!r})"

    def to_dict(self) -> dict[str, list[str]]:
        return {p: list(lines) for p, lines in self._files.items()}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Sequence[str]]) -> FileTree:
        return cls(raw)

    @classmethod
    def from_text(cls, files: Mapping[str, str]) -> FileTree:
        return cls({p: text.splitlines() for p, text in files.items()})


@dataclass(frozen=True)
class Hunk:
    path: str
    base_start: int
    base_stop: int
    lines: tuple[str, ...]
    change: str = "modify"  # "modify" | "add" | "delete"

    @property
    def line_range(self) -> tuple[int, int]:
        return (self.base_start + 1, self.base_stop)

    @property
    def is_insertion(self) -> bool:
        return self.base_start == self.base_stop

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "base_range": list(self.line_range),
            "lines": list(self.lines),
            "change": self.change,
        }


def diff_lines(path: str, a: Sequence[str], b: Sequence[str]) -> list[Hunk]:
    matcher = difflib.SequenceMatcher(None, a, b, autojunk=False)
    hunks: list[Hunk] = []
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            continue
        lines = tuple(b[j1:j2])
        if hunks and hunks[-1].base_stop == i1:
            # Adjacent opcodes form a single hunk.
            prev = hunks.pop()
            hunks.append(Hunk(path, prev.base_start, i2, prev.lines + lines))
        else:
            hunks.append(Hunk(path, i1, i2, lines))
    return hunks


def diff(base: FileTree, derived: FileTree) -> list[Hunk]:
    """Hunks turning ``base`` into ``derived``, sorted by path then position."""
    hunks: list[Hunk] = []
    for path in sorted(set(base.paths()) | set(derived.paths())):
        old, new = base.get(path), derived.get(path)
        if old == new:
            continue
        if old is None:
            hunks.append(Hunk(path, 0, 0, new, "add"))
        elif new is None:
            hunks.append(Hunk(path, 0, len(old), (), "delete"))
        else:
            hunks.extend(diff_lines(path, old, new))
    return hunks


def apply_hunks(hunks: Iterable[Hunk], tree: FileTree) -> FileTree:
    files = {p: list(lines) for p, lines in tree.files.items()}
    by_path: dict[str, list[Hunk]] = {}
    for h in hunks:
        by_path.setdefault(h.path, []).append(h)
    for path, hs in by_path.items():
        for h in sorted(hs, key=lambda h: (h.base_start, h.base_stop), reverse=True):
            if h.change == "add":
                files[path] = list(h.lines)
            elif h.change == "delete":
                files.pop(path, None)
            else:
                files[path][h.base_start:h.base_stop] = h.lines
    return FileTree(files)


@dataclass(frozen=True)
class Conflict:
    path: str
    line_range: tuple[int, int]
    upstream_lines: tuple[str, ...] | None
    fork_lines: tuple[str, ...] | None

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "line_range": list(self.line_range),
            "upstream_lines": None if self.upstream_lines is None else list(self.upstream_lines),
            "fork_lines": None if self.fork_lines is None else list(self.fork_lines),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> Conflict:
        up, fk = raw.get("upstream_lines"), raw.get("fork_lines")
        return cls(
            path=raw["path"],
            line_range=tuple(raw["line_range"]),
            upstream_lines=None if up is None else tuple(up),
            fork_lines=None if fk is None else tuple(fk),
        )


@dataclass(frozen=True)
class MergeOutcome:
    merged_tree: FileTree | None = None
    conflicts: tuple[Conflict, ...] = ()

    def __post_init__(self) -> None:
        if (self.merged_tree is None) == (not self.conflicts):
            raise ValueError("outcome is either a merged tree or a nonempty conflict list")

    @property
    def clean(self) -> bool:
        return self.merged_tree is not None


def _touches(a: Hunk, b: Hunk) -> bool:
    """Whether two hunks from different sides edit overlapping base regions.

    Insertions at the edge of a replaced range do not overlap it; two
    insertions at the same gap do.
    """
    if a.is_insertion and b.is_insertion:
        return a.base_start == b.base_start
    if a.is_insertion:
        return b.base_start < a.base_start < b.base_stop
    if b.is_insertion:
        return a.base_start < b.base_start < a.base_stop
    return max(a.base_start, b.base_start) < min(a.base_stop, b.base_stop)


def _splice(base: Sequence[str], start: int, hunks: Sequence[Hunk], stop: int) -> tuple[str, ...]:
    out: list[str] = []
    pos = start
    for h in hunks:
        out.extend(base[pos:h.base_start])
        out.extend(h.lines)
        pos = h.base_stop
    out.extend(base[pos:stop])
    return tuple(out)


def merge_lines(
    path: str, base: Sequence[str], upstream: Sequence[str], fork: Sequence[str]
) -> tuple[tuple[str, ...] | None, list[Conflict]]:
    ups = diff_lines(path, base, upstream)
    forks = diff_lines(path, base, fork)
    tagged = sorted(
        [(h, 0) for h in ups] + [(h, 1) for h in forks],
        key=lambda t: (t[0].base_start, t[0].base_stop, t[1]),
    )
    # Group hunks into regions that overlap across sides.
    groups: list[list[tuple[Hunk, int]]] = []
    for item in tagged:
        h, side = item
        if groups and any(s != side and _touches(g, h) for g, s in groups[-1]):
            groups[-1].append(item)
        else:
            groups.append([item])

    out: list[str] = []
    conflicts: list[Conflict] = []
    pos = 0
    for g in groups:
        start = min(h.base_start for h, _ in g)
        stop = max(h.base_stop for h, _ in g)
        up_h = [h for h, s in g if s == 0]
        fk_h = [h for h, s in g if s == 1]
        out.extend(base[pos:start])
        if not up_h or not fk_h or up_h == fk_h:
            out.extend(_splice(base, start, up_h or fk_h, stop))
        else:
            conflicts.append(
                Conflict(
                    path,
                    (start + 1, stop),
                    _splice(base, start, up_h, stop),
                    _splice(base, start, fk_h, stop),
                )
            )
        pos = stop
    out.extend(base[pos:])
    if conflicts:
        return None, conflicts
    return tuple(out), []


def three_way_merge(base: FileTree, upstream: FileTree, fork: FileTree) -> MergeOutcome:
    files: dict[str, tuple[str, ...]] = {}
    conflicts: list[Conflict] = []
    for path in sorted(set(base.paths()) | set(upstream.paths()) | set(fork.paths())):
        b, u, f = base.get(path), upstream.get(path), fork.get(path)
        if u == f or b == u:
            result = f
        elif b == f:
            result = u
        elif b is None or u is None or f is None:
            # add/add with different content, or edit/delete
            n = len(b) if b is not None else 0
            conflicts.append(Conflict(path, (1, n), u, f))
            continue
        else:
            result, found = merge_lines(path, b, u, f)
            if found:
                conflicts.extend(found)
                continue
        if result is not None:
            files[path] = result
    if conflicts:
        return MergeOutcome(conflicts=tuple(conflicts))
    return MergeOutcome(merged_tree=FileTree(files))


def _canonical(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class Commit:
    parent: str | None
    tree: FileTree
    message: str
    timestamp: int
    # Upstream commit folded in by a merge; keeps the merge base reachable.
    merge_parent: str | None = None
    id: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "id", self.compute_id())

    def compute_id(self) -> str:
        payload = {
            "parent": self.parent,
            "merge_parent": self.merge_parent,
            "tree": self.tree.to_dict(),
            "message": self.message,
            "timestamp": self.timestamp,
        }
        return hashlib.sha256(_canonical(payload).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "merge_parent": self.merge_parent,
            "tree": self.tree.to_dict(),
            "message": self.message,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> Commit:
        commit = cls(
            parent=raw.get("parent"),
            tree=FileTree.from_dict(raw["tree"]),
            message=raw["message"],
            timestamp=int(raw["timestamp"]),
            merge_parent=raw.get("merge_parent"),
        )
        if "id" in raw and raw["id"] != commit.id:
            raise CorruptRepo(f"commit id mismatch for {raw['id']}")
        return commit


@dataclass(frozen=True)
class Merged:
    fork_head: str
    merge_base: str


@dataclass(frozen=True)
class Escalation:
    library: str
    conflicts: tuple[Conflict, ...]
    upstream_head: str
    created_at: int

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "conflicts": [c.to_dict() for c in self.conflicts],
            "upstream_head": self.upstream_head,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> Escalation:
        return cls(
            library=raw["library"],
            conflicts=tuple(Conflict.from_dict(c) for c in raw["conflicts"]),
            upstream_head=raw["upstream_head"],
            created_at=int(raw["created_at"]),
        )


@dataclass
class RepoState:
    library: str
    commits: dict[str, Commit]
    upstream_head: str
    fork_head: str
    merge_base: str

    @classmethod
    def init(cls, library: str, tree: FileTree, timestamp: int = 0, message: str = "initial import") -> RepoState:
        root = Commit(None, tree, message, timestamp)
        return cls(library, {root.id: root}, root.id, root.id, root.id)

    def tree(self, commit_id: str) -> FileTree:
        return self.commits[commit_id].tree

    @property
    def fork_tree(self) -> FileTree:
        return self.tree(self.fork_head)

    @property
    def upstream_tree(self) -> FileTree:
        return self.tree(self.upstream_head)

    def ancestors(self, commit_id: str) -> set[str]:
        """All commits reachable from ``commit_id``, itself included."""
        seen: set[str] = set()
        stack = [commit_id]
        while stack:
            cid = stack.pop()
            if cid is None or cid in seen:
                continue
            if cid not in self.commits:
                raise CorruptRepo(f"{self.library}: dangling commit reference {cid}")
            seen.add(cid)
            c = self.commits[cid]
            stack.extend((c.parent, c.merge_parent))
        return seen

    def validate(self) -> None:
        for name in ("upstream_head", "fork_head", "merge_base"):
            if getattr(self, name) not in self.commits:
                raise CorruptRepo(f"{self.library}: {name} does not resolve")
        for cid, c in self.commits.items():
            if c.id != cid:
                raise CorruptRepo(f"{self.library}: commit {cid} has id {c.id}")
        if self.merge_base not in self.ancestors(self.upstream_head):
            raise CorruptRepo(f"{self.library}: merge base is not an upstream ancestor")
        if self.merge_base not in self.ancestors(self.fork_head):
            raise CorruptRepo(f"{self.library}: merge base is not a fork ancestor")

    def _add(self, commit: Commit) -> str:
        self.commits[commit.id] = commit
        return commit.id

    def commit_upstream(self, tree: FileTree, message: str, timestamp: int) -> str:
        self.upstream_head = self._add(Commit(self.upstream_head, tree, message, timestamp))
        return self.upstream_head

    def commit_fork(self, tree: FileTree, message: str, timestamp: int) -> str:
        self.fork_head = self._add(Commit(self.fork_head, tree, message, timestamp))
        return self.fork_head

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "commits": {cid: c.to_dict() for cid, c in sorted(self.commits.items())},
            "upstream_head": self.upstream_head,
            "fork_head": self.fork_head,
            "merge_base": self.merge_base,
        }


def _advance_fork(repo: RepoState, tree: FileTree, message: str, now: int) -> Merged:
    commit = Commit(repo.fork_head, tree, message, now, merge_parent=repo.upstream_head)
    repo.fork_head = repo._add(commit)
    repo.merge_base = repo.upstream_head
    return Merged(repo.fork_head, repo.merge_base)


def attempt_merge(repo: RepoState, now: int = 0) -> Merged | Escalation:
    """Merge upstream into the fork, or describe why a human must.

    The repository is only modified on success.
    """
    repo.validate()
    if repo.upstream_head == repo.merge_base:
        return Merged(repo.fork_head, repo.merge_base)
    outcome = three_way_merge(
        repo.tree(repo.merge_base), repo.upstream_tree, repo.fork_tree
    )
    if not outcome.clean:
        return Escalation(repo.library, outcome.conflicts, repo.upstream_head, now)
    return _advance_fork(
        repo, outcome.merged_tree, f"merge upstream {repo.upstream_head[:12]}", now
    )


def resolve_escalation(
    repo: RepoState, escalation: Escalation, resolved_tree: FileTree, now: int = 0
) -> Merged:
    if escalation.upstream_head != repo.upstream_head:
        raise StaleEscalation(
            f"{repo.library}: upstream moved from {escalation.upstream_head[:12]} "
            f"to {repo.upstream_head[:12]}"
        )
    return _advance_fork(
        repo, resolved_tree, f"resolve conflicts with upstream {repo.upstream_head[:12]}", now
    )


# On-disk layout: commits/<id>.json, HEADS.json, escalations.jsonl.

def save_repo(repo: RepoState, directory: str | os.PathLike) -> None:
    root = Path(directory)
    (root / "commits").mkdir(parents=True, exist_ok=True)
    for cid, commit in repo.commits.items():
        path = root / "commits" / f"{cid}.json"
        if not path.exists():
            write_json_atomic(path, commit.to_dict())
    write_json_atomic(
        root / "HEADS.json",
        {
            "library": repo.library,
            "upstream_head": repo.upstream_head,
            "fork_head": repo.fork_head,
            "merge_base": repo.merge_base,
        },
    )


def load_repo(directory: str | os.PathLike) -> RepoState:
    root = Path(directory)
    try:
        heads = json.loads((root / "HEADS.json").read_text(encoding="utf-8"))
        commits = {}
        for path in sorted((root / "commits").glob("*.json")):
            commit = Commit.from_dict(json.loads(path.read_text(encoding="utf-8")))
            if commit.id != path.stem:
                raise CorruptRepo(f"{path.name} holds commit {commit.id}")
            commits[commit.id] = commit
        repo = RepoState(
            library=heads.get("library", root.name),
            commits=commits,
            upstream_head=heads["upstream_head"],
            fork_head=heads["fork_head"],
            merge_base=heads["merge_base"],
        )
    except (OSError, KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, CorruptRepo):
            raise
        raise CorruptRepo(f"{root}: {exc}") from exc
    repo.validate()
    return repo


def record_escalation(directory: str | os.PathLike, escalation: Escalation) -> None:
    AppendLog(Path(directory) / "escalations.jsonl").append(escalation.to_dict())
