"""
Package universe model: dependency closures, coverage and diversity reports.

A registry snapshot is a point-in-time JSON document::

    {"packages": [{"name", "version", "deps", "status", "is_meta",
                   "category", "security_critical"}, ...]}

The graph built from it is immutable and always acyclic.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence


class RegistryError(Exception):
    pass


class DuplicateName(RegistryError):
    def __init__(self, name: str) -> None:
        super().__init__(f"duplicate package name: {name!r}")
        self.name = name


class UnresolvedDependency(RegistryError):
    def __init__(self, name: str, dependent: str | None = None) -> None:
        where = f" (required by {dependent!r})" if dependent else ""
        super().__init__(f"unresolved dependency: {name!r}{where}")
        self.name = name
        self.dependent = dependent


class CycleDetected(RegistryError):
    def __init__(self, path: Sequence[str]) -> None:
        super().__init__("dependency cycle: " + " -> ".join(path))
        self.path = list(path)


class UnknownPackage(RegistryError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unknown package: {name!r}")
        self.name = name


class TopNOutOfRange(RegistryError):
    pass


class InvalidRecord(RegistryError):
    """A snapshot record is malformed; ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class Status(str, Enum):
    PORTED = "ported"
    DIRECTLY_USABLE = "directly_usable"
    INAPPLICABLE = "inapplicable"
    CANDIDATE = "candidate"


@dataclass(frozen=True)
class PackageRecord:
    name: str
    version: str = "0.0.0"
    deps: tuple[str, ...] = ()
    status: Status = Status.CANDIDATE
    is_meta: bool = False
    category: str = ""
    security_critical: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise InvalidRecord("package name must be nonempty", field="name")
        if self.is_meta and self.status is not Status.DIRECTLY_USABLE:
            raise InvalidRecord(
                f"{self.name}: meta packages must have status directly_usable",
                field="status",
            )

    @property
    def needs_port(self) -> bool:
        """False for packages usable inside an enclave without modification."""
        return not (self.is_meta or self.status is Status.DIRECTLY_USABLE)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "deps": list(self.deps),
            "status": self.status.value,
            "is_meta": self.is_meta,
            "category": self.category,
            "security_critical": self.security_critical,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> PackageRecord:
        if not isinstance(raw, Mapping):
            raise InvalidRecord("package entry must be an object", field="packages")
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            raise InvalidRecord("package name must be a nonempty string", field="name")
        deps = raw.get("deps", [])
        if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
            raise InvalidRecord(f"{name}: deps must be a list of names", field="deps")
        try:
            status = Status(raw.get("status", "candidate"))
        except ValueError:
            raise InvalidRecord(
                f"{name}: bad status {raw.get('status')!r}", field="status"
            ) from None
        return cls(
            name=name,
            version=str(raw.get("version", "0.0.0")),
            deps=tuple(deps),
            status=status,
            is_meta=bool(raw.get("is_meta", False)),
            category=str(raw.get("category", "")),
            security_critical=bool(raw.get("security_critical", False)),
        )


class RegistryGraph:
    """Immutable, acyclic package graph keyed by name."""

    def __init__(self, records: Iterable[PackageRecord]) -> None:
        packages: dict[str, PackageRecord] = {}
        for rec in records:
            if rec.name in packages:
                raise DuplicateName(rec.name)
            packages[rec.name] = rec
        for rec in packages.values():
            for dep in rec.deps:
                if dep not in packages:
                    raise UnresolvedDependency(dep, rec.name)
        self._packages = MappingProxyType(packages)
        self._topo = _topological_order(packages)

    @property
    def packages(self) -> Mapping[str, PackageRecord]:
        return self._packages

    def __contains__(self, name: object) -> bool:
        return name in self._packages

    def __len__(self) -> int:
        return len(self._packages)

    def __getitem__(self, name: str) -> PackageRecord:
        try:
            return self._packages[name]
        except KeyError:
            raise UnknownPackage(name) from None

    def deps(self, name: str) -> tuple[str, ...]:
        return self[name].deps

    @property
    def edge_count(self) -> int:
        return sum(len(rec.deps) for rec in self._packages.values())

    def topological_order(self) -> list[str]:
        """Dependencies before dependents, ties broken by name."""
        return list(self._topo)

    def to_dict(self) -> dict:
        return {"packages": [rec.to_dict() for rec in self._packages.values()]}


def _topological_order(packages: Mapping[str, PackageRecord]) -> list[str]:
    # DFS first so a cycle can be reported with its path.
    WHITE, GREY, BLACK = 0, 1, 2
    colour = dict.fromkeys(packages, WHITE)
    for start in sorted(packages):
        if colour[start] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(start, 0)]
        trail = [start]
        colour[start] = GREY
        while stack:
            node, idx = stack[-1]
            deps = packages[node].deps
            if idx < len(deps):
                stack[-1] = (node, idx + 1)
                dep = deps[idx]
                if colour[dep] == GREY:
                    raise CycleDetected(trail[trail.index(dep):] + [dep])
                if colour[dep] == WHITE:
                    colour[dep] = GREY
                    stack.append((dep, 0))
                    trail.append(dep)
            else:
                colour[node] = BLACK
                stack.pop()
                trail.pop()

    # Kahn's algorithm for a reproducible order.
    pending = {name: len(set(rec.deps)) for name, rec in packages.items()}
    dependents: dict[str, set[str]] = {name: set() for name in packages}
    for name, rec in packages.items():
        for dep in rec.deps:
            dependents[dep].add(name)
    ready = [name for name, n in pending.items() if n == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for parent in dependents[name]:
            pending[parent] -= 1
            if pending[parent] == 0:
                heapq.heappush(ready, parent)
    return order


def load_registry(snapshot: Mapping | str) -> RegistryGraph:
    """Build a graph from a snapshot document (parsed or JSON text)."""
    if isinstance(snapshot, str):
        snapshot = json.loads(snapshot)
    if not isinstance(snapshot, Mapping) or not isinstance(snapshot.get("packages"), list):
        raise InvalidRecord("snapshot must be an object with a 'packages' list", field="packages")
    return RegistryGraph(PackageRecord.from_dict(raw) for raw in snapshot["packages"])


def port_closure(graph: RegistryGraph, root: str) -> set[str]:
    """Transitive dependencies of ``root`` that must be ported.

    Packages usable without modification (meta or directly usable) are
    traversed but not reported.
    """
    graph[root]
    seen: set[str] = set()
    stack = list(graph.deps(root))
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        stack.extend(graph.deps(name))
    seen.discard(root)
    return {name for name in seen if graph[name].needs_port}


BUCKETS = ("0", "1", "2", "3", "4", "5", "6-10", "11-20", ">=21")


def bucket_label(size: int) -> str:
    if size < 0:
        raise ValueError("closure size cannot be negative")
    if size <= 5:
        return str(size)
    if size <= 10:
        return "6-10"
    if size <= 20:
        return "11-20"
    return ">=21"


@dataclass
class ClosureHistogram:
    buckets: dict[str, int] = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))

    @classmethod
    def from_sizes(cls, sizes: Iterable[int]) -> ClosureHistogram:
        hist = cls()
        for size in sizes:
            hist.buckets[bucket_label(size)] += 1
        return hist

    @property
    def total(self) -> int:
        return sum(self.buckets.values())

    def to_dict(self) -> dict:
        return {"buckets": dict(self.buckets), "total": self.total}


def closure_histogram(graph: RegistryGraph, roots: Sequence[str]) -> ClosureHistogram:
    return ClosureHistogram.from_sizes(len(port_closure(graph, r)) for r in roots)


@dataclass(frozen=True)
class CoverageReport:
    total: int
    ported: int
    directly_usable: int
    inapplicable: int
    not_ported: int

    @property
    def covered(self) -> int:
        return self.ported + self.directly_usable

    @property
    def availability_rate(self) -> float:
        return self.covered / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "ported": self.ported,
            "directly_usable": self.directly_usable,
            "inapplicable": self.inapplicable,
            "not_ported": self.not_ported,
            "covered": self.covered,
            "availability_rate": self.availability_rate,
        }


def coverage_report(graph: RegistryGraph, ranked: Sequence[str], top_n: int) -> CoverageReport:
    """Status breakdown of the ``top_n`` most popular packages."""
    if top_n < 0 or top_n > len(ranked):
        raise TopNOutOfRange(f"top_n={top_n} outside [0, {len(ranked)}]")
    counts = Counter(graph[name].status for name in ranked[:top_n])
    return CoverageReport(
        total=top_n,
        ported=counts[Status.PORTED],
        directly_usable=counts[Status.DIRECTLY_USABLE],
        inapplicable=counts[Status.INAPPLICABLE],
        not_ported=counts[Status.CANDIDATE],
    )


def category_tally(graph: RegistryGraph) -> dict[str, int]:
    counts = Counter(
        rec.category for rec in graph.packages.values() if rec.status is Status.PORTED
    )
    return dict(sorted(counts.items()))


@dataclass(frozen=True)
class ProjectManifest:
    id: str
    manifest_text: str
    has_description: bool = False
    has_docs: bool = False
    active_commits: bool = False
    is_educational: bool = False

    @property
    def passes_screening(self) -> bool:
        return (
            self.has_description
            and self.has_docs
            and self.active_commits
            and not self.is_educational
        )

    @classmethod
    def from_dict(cls, raw: Mapping) -> ProjectManifest:
        if "id" not in raw:
            raise InvalidRecord("manifest entry missing 'id'", field="id")
        return cls(
            id=str(raw["id"]),
            manifest_text=str(raw.get("manifest_text", "")),
            has_description=bool(raw.get("has_description", False)),
            has_docs=bool(raw.get("has_docs", False)),
            active_commits=bool(raw.get("active_commits", False)),
            is_educational=bool(raw.get("is_educational", False)),
        )


def load_manifests(text: str) -> list[ProjectManifest]:
    """Parse the JSONL manifest corpus."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidRecord(f"line {lineno}: {exc.msg}", field="manifest") from None
        out.append(ProjectManifest.from_dict(raw))
    return out


def find_dependents(manifests: Iterable[ProjectManifest], keyword: str) -> list[str]:
    """Projects whose manifest mentions ``keyword`` and that pass screening."""
    if not keyword:
        raise ValueError("keyword must be nonempty")
    return [
        m.id for m in manifests if keyword in m.manifest_text and m.passes_screening
    ]


ADMISSION_CRITERIA = (
    "widely_demanded",
    "high_quality",
    "api_stable",
    "irreplaceable_dependency",
)
ADMISSION_HINT_THRESHOLD = 2


@dataclass(frozen=True)
class AdmissionReport:
    score: int
    admitted_hint: bool
    met: tuple[str, ...]


def admission_check(candidate: Mapping[str, bool]) -> AdmissionReport:
    """Score a candidate against the selection criteria.

    The hint is advisory only; admission stays a human, case-by-case call.
    """
    met = tuple(c for c in ADMISSION_CRITERIA if candidate.get(c, False))
    return AdmissionReport(
        score=len(met),
        admitted_hint=len(met) >= ADMISSION_HINT_THRESHOLD,
        met=met,
    )


_RANKED_SPLIT = re.compile(r"[\s,]+")


def parse_name_list(text: str) -> list[str]:
    """Accept a JSON array or whitespace/comma separated names."""
    stripped = text.strip()
    if stripped.startswith("["):
        names = json.loads(stripped)
        if not all(isinstance(n, str) for n in names):
            raise InvalidRecord("name list must contain strings", field="ranked")
        return names
    return [n for n in _RANKED_SPLIT.split(stripped) if n]
