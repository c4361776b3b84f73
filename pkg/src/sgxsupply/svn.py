"""
Security-version consistency for live enclave builds.

Each live build of a library sits at a point (library revision, SDK svn).
Builds are ordered componentwise. A single svn per build is sound only if
``svn(a) <= svn(b)`` exactly when ``a <= b``, which requires the live builds
of each library to form a chain. Keeping several library versions alive
across an SDK bump breaks that; retiring the previous revision on every
release restores it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


class RetireUnknownVersion(Exception):
    pass


class InvalidEvent(ValueError):
    pass


@dataclass(frozen=True)
class LibRelease:
    library: str
    security_bump: bool = False


@dataclass(frozen=True)
class SdkBump:
    pass


@dataclass(frozen=True)
class Retire:
    library: str
    lib_rev: int


VersionEvent = LibRelease | SdkBump | Retire


def event_from_dict(raw: Mapping) -> VersionEvent:
    kind = raw.get("type")
    if kind == "lib_release":
        return LibRelease(str(raw["library"]), bool(raw.get("security_bump", False)))
    if kind == "sdk_bump":
        return SdkBump()
    if kind == "retire":
        return Retire(str(raw["library"]), int(raw["lib_rev"]))
    raise InvalidEvent(f"unknown event type {kind!r}")


def event_to_dict(event: VersionEvent) -> dict:
    if isinstance(event, LibRelease):
        return {"type": "lib_release", "library": event.library, "security_bump": event.security_bump}
    if isinstance(event, SdkBump):
        return {"type": "sdk_bump"}
    return {"type": "retire", "library": event.library, "lib_rev": event.lib_rev}


def load_events(text: str) -> list[VersionEvent]:
    return [event_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


@dataclass(frozen=True, order=True)
class BuildPoint:
    library: str
    lib_rev: int
    sdk_svn: int
    live: bool = True

    def __post_init__(self) -> None:
        if self.lib_rev < 0 or self.sdk_svn < 0:
            raise ValueError("revisions are non-negative")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.library, self.lib_rev, self.sdk_svn)

    def leq(self, other: BuildPoint) -> bool:
        """Security order; builds of different libraries are never related."""
        return (
            self.library == other.library
            and self.lib_rev <= other.lib_rev
            and self.sdk_svn <= other.sdk_svn
        )

    def comparable(self, other: BuildPoint) -> bool:
        return self.leq(other) or other.leq(self)

    def to_dict(self) -> dict:
        return {"library": self.library, "lib_rev": self.lib_rev, "sdk_svn": self.sdk_svn}


@dataclass(frozen=True)
class SecurityOrder:
    builds: tuple[BuildPoint, ...]

    @property
    def live(self) -> list[BuildPoint]:
        return [b for b in self.builds if b.live]


def derive_order(events: Iterable[VersionEvent]) -> SecurityOrder:
    """Replay version events into the set of builds that were ever live."""
    sdk = 0
    current_rev: dict[str, int] = {}
    points: dict[tuple[str, int, int], bool] = {}  # key -> live
    for ev in events:
        if isinstance(ev, LibRelease):
            if ev.library not in current_rev:
                current_rev[ev.library] = 0
            elif ev.security_bump:
                current_rev[ev.library] += 1
            points[(ev.library, current_rev[ev.library], sdk)] = True
        elif isinstance(ev, SdkBump):
            live_revs = sorted({(lib, rev) for (lib, rev, _), live in points.items() if live})
            sdk += 1
            for lib, rev in live_revs:
                points[(lib, rev, sdk)] = True
        elif isinstance(ev, Retire):
            keys = [k for k in points if k[0] == ev.library and k[1] == ev.lib_rev]
            if not keys:
                raise RetireUnknownVersion(f"{ev.library} has no revision {ev.lib_rev}")
            for k in keys:
                points[k] = False
        else:
            raise InvalidEvent(f"not a version event: {ev!r}")
    return SecurityOrder(
        tuple(BuildPoint(lib, rev, s, live) for (lib, rev, s), live in sorted(points.items()))
    )


@dataclass(frozen=True)
class LinearOk:
    assignment: dict[tuple[str, int, int], int]

    ok = True

    def to_dict(self) -> dict:
        return {
            "status": "ok",
            "assignment": [
                {"library": lib, "lib_rev": rev, "sdk_svn": sdk, "svn": svn}
                for (lib, rev, sdk), svn in sorted(self.assignment.items())
            ],
        }


@dataclass(frozen=True)
class Violation:
    first: BuildPoint
    second: BuildPoint

    ok = False

    @property
    def pair(self) -> frozenset[tuple[int, int]]:
        return frozenset({(self.first.lib_rev, self.first.sdk_svn), (self.second.lib_rev, self.second.sdk_svn)})

    def to_dict(self) -> dict:
        return {
            "status": "violation",
            "library": self.first.library,
            "witness": [self.first.to_dict(), self.second.to_dict()],
        }


def check_linear(order: SecurityOrder) -> LinearOk | Violation:
    """Rank-assign svns per library, or return an incomparable live pair."""
    by_lib: dict[str, list[BuildPoint]] = {}
    for b in order.live:
        by_lib.setdefault(b.library, []).append(b)
    assignment: dict[tuple[str, int, int], int] = {}
    for lib in sorted(by_lib):
        chain = sorted(by_lib[lib], key=lambda b: (b.lib_rev + b.sdk_svn, b.lib_rev))
        for lo, hi in zip(chain, chain[1:]):
            if not lo.leq(hi):
                # A chain sorted by coordinate sum must be increasing pairwise.
                witness = sorted((lo, hi), key=lambda b: (-b.lib_rev, b.sdk_svn))
                return Violation(*witness)
        rank = -1
        prev = None
        for b in chain:
            if prev is None or (b.lib_rev, b.sdk_svn) != (prev.lib_rev, prev.sdk_svn):
                rank += 1
            assignment[b.key] = rank
            prev = b
    return LinearOk(assignment)


def assignment_is_sound(builds: Sequence[BuildPoint], svn: Mapping[tuple[str, int, int], int]) -> bool:
    return all(
        (svn[a.key] <= svn[b.key]) == a.leq(b)
        for a in builds
        for b in builds
        if a.library == b.library
    )


def enforce_latest_only(events: Iterable[VersionEvent]) -> list[VersionEvent]:
    """Retire the previous revision whenever a release bumps the revision."""
    out: list[VersionEvent] = []
    current_rev: dict[str, int] = {}
    live: dict[str, set[int]] = {}
    for ev in events:
        if isinstance(ev, LibRelease):
            out.append(ev)
            revs = live.setdefault(ev.library, set())
            if ev.library not in current_rev:
                current_rev[ev.library] = 0
            elif ev.security_bump:
                current_rev[ev.library] += 1
            new = current_rev[ev.library]
            revs.add(new)
            for old in sorted(revs - {new}):
                out.append(Retire(ev.library, old))
            revs.intersection_update({new})
        elif isinstance(ev, Retire):
            revs = live.get(ev.library, set())
            known = ev.library in current_rev and ev.lib_rev <= current_rev[ev.library]
            if known and ev.lib_rev not in revs:
                continue  # already retired
            revs.discard(ev.lib_rev)
            out.append(ev)
        else:
            out.append(ev)
    return out
