"""
Pull-request cache and merge scheduler.

Upstream patches collect in a bounded per-library cache. A library's cache is
flushed into a merge attempt when a patch message carries a keyword, when the
cache reaches capacity, or when the last merge is older than ``max_age``.
Libraries listed for mandatory review never merge automatically; their
patches wait in a review queue until a maintainer approves them.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .merge import Escalation, FileTree, Merged, RepoState, attempt_merge, resolve_escalation
from .store import AppendLog, read_snapshot, write_snapshot

DAY = 86_400
DEFAULT_KEYWORDS = frozenset({"fix", "bug", "issue", "release"})
DEFAULT_MAX_AGE = 30 * DAY
DEFAULT_CAPACITY = 10
MANDATORY_REVIEW = frozenset({"rustls", "webpki", "ring", "cryptocorrosion", "wasmi"})


class SchedulerError(Exception):
    pass


class DuplicatePatchId(SchedulerError):
    pass


class MissingRepo(SchedulerError):
    def __init__(self, library: str) -> None:
        super().__init__(f"no repository for library {library!r}")
        self.library = library


class NothingPending(SchedulerError):
    pass


class ClockSkew(SchedulerError):
    pass


class Trigger(str, Enum):
    KEYWORD = "keyword"
    CAPACITY = "capacity"
    AGE = "age"


class Route(str, Enum):
    AUTO_MERGE = "auto_merge"
    MANUAL_REVIEW = "manual_review"


@dataclass(frozen=True)
class Patch:
    id: str
    library: str
    message: str
    timestamp: int
    upstream_commit: str = ""

    def __post_init__(self) -> None:
        if not self.id or not self.library:
            raise ValueError("patch needs an id and a library")
        if self.timestamp < 0:
            raise ValueError(f"patch {self.id}: negative timestamp")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "library": self.library,
            "message": self.message,
            "timestamp": self.timestamp,
            "upstream_commit": self.upstream_commit,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> Patch:
        return cls(
            id=str(raw["id"]),
            library=str(raw["library"]),
            message=str(raw.get("message", "")),
            timestamp=int(raw["timestamp"]),
            upstream_commit=str(raw.get("upstream_commit", "")),
        )


@dataclass
class PatchCache:
    library: str
    capacity: int = DEFAULT_CAPACITY
    entries: list[Patch] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "capacity": self.capacity,
            "entries": [p.to_dict() for p in self.entries],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> PatchCache:
        return cls(
            library=raw["library"],
            capacity=int(raw["capacity"]),
            entries=[Patch.from_dict(p) for p in raw["entries"]],
        )


@dataclass(frozen=True)
class SchedulerConfig:
    keywords: frozenset[str] = DEFAULT_KEYWORDS
    max_age: int = DEFAULT_MAX_AGE
    default_capacity: int = DEFAULT_CAPACITY
    manual_review: frozenset[str] = MANDATORY_REVIEW

    def __post_init__(self) -> None:
        if self.max_age <= 0:
            raise ValueError("max_age must be positive")
        if self.default_capacity < 1:
            raise ValueError("default_capacity must be at least 1")
        object.__setattr__(self, "keywords", frozenset(k.lower() for k in self.keywords))
        object.__setattr__(self, "manual_review", frozenset(self.manual_review))

    def keyword_pattern(self) -> re.Pattern:
        if not self.keywords:
            return re.compile(r"(?!x)x")
        alternatives = "|".join(re.escape(k) for k in sorted(self.keywords))
        return re.compile(rf"\b(?:{alternatives})\b", re.IGNORECASE)


@dataclass(frozen=True)
class MergeDecision:
    library: str
    trigger: Trigger
    patch_ids: tuple[str, ...]
    routed_to: Route
    timestamp: int
    approver: str | None = None

    def __post_init__(self) -> None:
        if not self.patch_ids:
            raise ValueError("a merge decision must cover at least one patch")

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "trigger": self.trigger.value,
            "patch_ids": list(self.patch_ids),
            "routed_to": self.routed_to.value,
            "timestamp": self.timestamp,
            "approver": self.approver,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> MergeDecision:
        return cls(
            library=raw["library"],
            trigger=Trigger(raw["trigger"]),
            patch_ids=tuple(raw["patch_ids"]),
            routed_to=Route(raw["routed_to"]),
            timestamp=int(raw["timestamp"]),
            approver=raw.get("approver"),
        )


@dataclass
class ReviewEntry:
    library: str
    patches: list[Patch]
    reason: Trigger

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "patches": [p.to_dict() for p in self.patches],
            "reason": self.reason.value,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> ReviewEntry:
        return cls(
            library=raw["library"],
            patches=[Patch.from_dict(p) for p in raw["patches"]],
            reason=Trigger(raw["reason"]),
        )


@dataclass
class PendingEscalation:
    escalation: Escalation
    trigger: Trigger
    patch_ids: list[str]

    def to_dict(self) -> dict:
        return {
            "escalation": self.escalation.to_dict(),
            "trigger": self.trigger.value,
            "patch_ids": list(self.patch_ids),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> PendingEscalation:
        return cls(
            escalation=Escalation.from_dict(raw["escalation"]),
            trigger=Trigger(raw["trigger"]),
            patch_ids=list(raw["patch_ids"]),
        )


@dataclass
class SchedulerState:
    caches: dict[str, PatchCache] = field(default_factory=dict)
    last_merge: dict[str, int] = field(default_factory=dict)
    review_queue: list[ReviewEntry] = field(default_factory=list)
    decision_log: list[MergeDecision] = field(default_factory=list)
    pending_escalations: dict[str, PendingEscalation] = field(default_factory=dict)
    seen_ids: dict[str, set[str]] = field(default_factory=dict)

    def log(self, decision: MergeDecision) -> None:
        if self.decision_log and decision.timestamp < self.decision_log[-1].timestamp:
            raise ClockSkew(
                f"decision at {decision.timestamp} precedes {self.decision_log[-1].timestamp}"
            )
        self.decision_log.append(decision)

    def to_dict(self, include_log: bool = True) -> dict:
        out = {
            "caches": {lib: c.to_dict() for lib, c in sorted(self.caches.items())},
            "last_merge": dict(sorted(self.last_merge.items())),
            "review_queue": [e.to_dict() for e in self.review_queue],
            "pending_escalations": {
                lib: p.to_dict() for lib, p in sorted(self.pending_escalations.items())
            },
            "seen_ids": {lib: sorted(ids) for lib, ids in sorted(self.seen_ids.items())},
        }
        if include_log:
            out["decision_log"] = [d.to_dict() for d in self.decision_log]
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> SchedulerState:
        return cls(
            caches={lib: PatchCache.from_dict(c) for lib, c in raw.get("caches", {}).items()},
            last_merge={lib: int(t) for lib, t in raw.get("last_merge", {}).items()},
            review_queue=[ReviewEntry.from_dict(e) for e in raw.get("review_queue", [])],
            decision_log=[MergeDecision.from_dict(d) for d in raw.get("decision_log", [])],
            pending_escalations={
                lib: PendingEscalation.from_dict(p)
                for lib, p in raw.get("pending_escalations", {}).items()
            },
            seen_ids={lib: set(ids) for lib, ids in raw.get("seen_ids", {}).items()},
        )


@dataclass(frozen=True)
class StepAction:
    kind: str  # "auto_merge" | "manual_review" | "escalation"
    library: str
    trigger: Trigger
    patch_ids: tuple[str, ...]
    fork_head: str | None = None
    escalation: Escalation | None = None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "library": self.library,
            "trigger": self.trigger.value,
            "patch_ids": list(self.patch_ids),
        }
        if self.fork_head is not None:
            out["fork_head"] = self.fork_head
        if self.escalation is not None:
            out["escalation"] = self.escalation.to_dict()
        return out


def enqueue_patch(state: SchedulerState, config: SchedulerConfig, patch: Patch) -> SchedulerState:
    """Append ``patch`` to its library's cache; triggers are not evaluated here."""
    seen = state.seen_ids.get(patch.library, set())
    if patch.id in seen:
        raise DuplicatePatchId(f"{patch.library}: patch {patch.id!r} already seen")
    new = copy.deepcopy(state)
    cache = new.caches.setdefault(
        patch.library, PatchCache(patch.library, config.default_capacity)
    )
    cache.entries.append(patch)
    new.seen_ids.setdefault(patch.library, set()).add(patch.id)
    return new


def evaluate_triggers(
    cache: PatchCache, config: SchedulerConfig, now: int, last_merge: int | None = None
) -> Trigger | None:
    if not cache.entries:
        return None
    pattern = config.keyword_pattern()
    if any(pattern.search(p.message) for p in cache.entries):
        return Trigger.KEYWORD
    if len(cache.entries) >= cache.capacity:
        return Trigger.CAPACITY
    since = last_merge if last_merge is not None else min(p.timestamp for p in cache.entries)
    if now - since >= config.max_age:
        return Trigger.AGE
    return None


def _blocked(state: SchedulerState, library: str, repo: RepoState | None) -> bool:
    """An unresolved escalation against the current upstream head blocks retries."""
    pending = state.pending_escalations.get(library)
    return (
        pending is not None
        and repo is not None
        and pending.escalation.upstream_head == repo.upstream_head
    )


def _merge(
    state: SchedulerState,
    library: str,
    repo: RepoState,
    patches: list[Patch],
    trigger: Trigger,
    route: Route,
    now: int,
    approver: str | None = None,
) -> StepAction:
    ids = tuple(p.id for p in patches)
    result = attempt_merge(repo, now)
    if isinstance(result, Merged):
        state.log(MergeDecision(library, trigger, ids, route, now, approver))
        state.last_merge[library] = now
        state.pending_escalations.pop(library, None)
        kind = "auto_merge" if route is Route.AUTO_MERGE else "approved_merge"
        return StepAction(kind, library, trigger, ids, fork_head=result.fork_head)
    state.pending_escalations[library] = PendingEscalation(result, trigger, list(ids))
    return StepAction("escalation", library, trigger, ids, escalation=result)


def scheduler_step(
    state: SchedulerState,
    config: SchedulerConfig,
    repos: Mapping[str, RepoState],
    now: int,
) -> tuple[SchedulerState, list[StepAction]]:
    """Fire every triggered cache, in library-name order."""
    if state.decision_log and now < state.decision_log[-1].timestamp:
        raise ClockSkew(f"now={now} precedes the last decision")
    new = copy.deepcopy(state)
    actions: list[StepAction] = []
    for library in sorted(new.caches):
        cache = new.caches[library]
        trigger = evaluate_triggers(cache, config, now, new.last_merge.get(library))
        if trigger is None:
            continue
        repo = repos.get(library)
        if library not in config.manual_review and repo is None:
            raise MissingRepo(library)
        if _blocked(new, library, repo):
            continue
        patches = list(cache.entries)
        if library in config.manual_review:
            cache.entries.clear()
            new.review_queue.append(ReviewEntry(library, patches, trigger))
            ids = tuple(p.id for p in patches)
            new.log(MergeDecision(library, trigger, ids, Route.MANUAL_REVIEW, now))
            actions.append(StepAction("manual_review", library, trigger, ids))
            continue
        action = _merge(new, library, repo, patches, trigger, Route.AUTO_MERGE, now)
        if action.kind == "auto_merge":
            cache.entries.clear()
        actions.append(action)
    return new, actions


def approve_review(
    state: SchedulerState,
    library: str,
    approver: str,
    now: int,
    repo: RepoState | None,
) -> tuple[SchedulerState, StepAction]:
    """Merge the oldest pending review entry for ``library`` on a maintainer's say-so."""
    index = next((i for i, e in enumerate(state.review_queue) if e.library == library), None)
    if index is None:
        raise NothingPending(f"no pending review for {library!r}")
    if repo is None:
        raise MissingRepo(library)
    new = copy.deepcopy(state)
    entry = new.review_queue.pop(index)
    action = _merge(
        new, library, repo, entry.patches, entry.reason, Route.MANUAL_REVIEW, now, approver
    )
    if action.kind == "escalation":
        # Conflicting patches go back to the front of the cache until resolved.
        cache = new.caches.setdefault(library, PatchCache(library))
        cache.entries[:0] = entry.patches
    return new, action


def resolve_pending(
    state: SchedulerState,
    library: str,
    repo: RepoState,
    resolved_tree: FileTree,
    resolver: str,
    now: int,
) -> tuple[SchedulerState, Merged]:
    """Record a human conflict resolution and retire the escalated patches."""
    pending = state.pending_escalations.get(library)
    if pending is None:
        raise NothingPending(f"no pending escalation for {library!r}")
    merged = resolve_escalation(repo, pending.escalation, resolved_tree, now)
    new = copy.deepcopy(state)
    del new.pending_escalations[library]
    consumed = set(pending.patch_ids)
    cache = new.caches.get(library)
    if cache is not None:
        cache.entries = [p for p in cache.entries if p.id not in consumed]
    new.log(
        MergeDecision(
            library, pending.trigger, tuple(pending.patch_ids), Route.MANUAL_REVIEW, now, resolver
        )
    )
    new.last_merge[library] = now
    return new, merged


STATE_FILE = "scheduler_state.json"
DECISIONS_FILE = "decisions.jsonl"


def save_state(state: SchedulerState, directory: str | Path, *, written_at: float | None = None) -> None:
    """Snapshot the state and append decisions not yet in the log."""
    root = Path(directory)
    log = AppendLog(root / DECISIONS_FILE)
    logged = len(log.replay())
    log.extend(d.to_dict() for d in state.decision_log[logged:])
    write_snapshot(state.to_dict(include_log=False), root / STATE_FILE, written_at=written_at)


def load_state(directory: str | Path) -> SchedulerState:
    root = Path(directory)
    path = root / STATE_FILE
    raw = read_snapshot(path).payload if path.exists() else {}
    state = SchedulerState.from_dict(raw)
    state.decision_log = [
        MergeDecision.from_dict(d) for d in AppendLog(root / DECISIONS_FILE).replay()
    ]
    return state


def enqueue_all(
    state: SchedulerState, config: SchedulerConfig, patches: Iterable[Patch]
) -> tuple[SchedulerState, list[str]]:
    """Enqueue a feed, skipping ids already seen; returns the skipped ids."""
    skipped = []
    for patch in patches:
        try:
            state = enqueue_patch(state, config, patch)
        except DuplicatePatchId:
            skipped.append(patch.id)
    return state, skipped
