"""Porting plans: build order, resource remediation, threading/test/feature pruning."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .kinds import ResourceKind
from .registry import RegistryGraph, Status, port_closure


class PortAborted(Exception):
    """A closure member cannot be ported, so the root cannot be either."""

    def __init__(self, root: str, blockers: Sequence[str]) -> None:
        self.root = root
        self.blockers = sorted(blockers)
        super().__init__(
            f"cannot port {root!r}: inapplicable dependencies {', '.join(self.blockers)}"
        )


class Action(str, Enum):
    OCALL_WRAPPER = "ocall_wrapper"
    TRUSTED_SUBSTITUTE = "trusted_substitute"
    PRUNE = "prune"


# Trusted counterparts for security-sensitive resource use.
TRUSTED_SUBSTITUTES = {
    ResourceKind.FILE_IO: "protected-fs",
    ResourceKind.RANDOMNESS: "hw-rng",
    ResourceKind.TIME: "trusted-time",
}


@dataclass(frozen=True)
class ResourceUsage:
    function: str
    kind: ResourceKind
    security_sensitive: bool = False

    @classmethod
    def from_dict(cls, raw: Mapping) -> ResourceUsage:
        return cls(
            function=str(raw["function"]),
            kind=ResourceKind.parse(raw["kind"]),
            security_sensitive=bool(raw.get("security_sensitive", False)),
        )

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "kind": self.kind.value,
            "security_sensitive": self.security_sensitive,
        }


@dataclass(frozen=True)
class RemediationAction:
    usage: ResourceUsage
    action: Action
    substitute: str | None = None
    # Substitutes cost performance; a maintainer confirms they are necessary.
    needs_review: bool = False

    def __post_init__(self) -> None:
        if self.action is Action.OCALL_WRAPPER and self.usage.security_sensitive:
            raise ValueError("security-sensitive usage cannot be wrapped in an OCall")
        if (self.action is Action.TRUSTED_SUBSTITUTE) != (self.substitute is not None):
            raise ValueError("substitute name is required exactly for trusted_substitute")

    def to_dict(self) -> dict:
        return {
            "usage": self.usage.to_dict(),
            "action": self.action.value,
            "substitute": self.substitute,
            "needs_review": self.needs_review,
        }


def _remediate(usage: ResourceUsage) -> RemediationAction:
    if usage.kind is ResourceKind.THREAD_SPAWN:
        # The threading pass removes these; nothing to wrap.
        return RemediationAction(usage, Action.PRUNE)
    if not usage.security_sensitive:
        return RemediationAction(usage, Action.OCALL_WRAPPER)
    substitute = TRUSTED_SUBSTITUTES.get(usage.kind)
    if substitute is not None:
        return RemediationAction(
            usage, Action.TRUSTED_SUBSTITUTE, substitute=substitute, needs_review=True
        )
    return RemediationAction(usage, Action.PRUNE, needs_review=True)


def plan_remediations(usages: Iterable[ResourceUsage]) -> list[RemediationAction]:
    return [_remediate(u) for u in usages]


def _effective_deps(graph: RegistryGraph, node: str, members: set[str]) -> set[str]:
    """Nearest members reachable from ``node``, looking through non-members."""
    out: set[str] = set()
    seen: set[str] = set()
    stack = list(graph.deps(node))
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        if name in members:
            out.add(name)
        else:
            stack.extend(graph.deps(name))
    return out


def port_order(graph: RegistryGraph, root: str) -> list[str]:
    """Dependencies-first port order of the closure, with ``root`` last.

    Raises :class:`PortAborted` when any closure member is inapplicable.
    """
    closure = port_closure(graph, root)
    blockers = [n for n in closure if graph[n].status is Status.INAPPLICABLE]
    if blockers:
        raise PortAborted(root, blockers)
    members = closure | {root}
    deps = {n: _effective_deps(graph, n, members) for n in members}
    pending = {n: len(d) for n, d in deps.items()}
    dependents: dict[str, list[str]] = {n: [] for n in members}
    for n, ds in deps.items():
        for d in ds:
            dependents[d].append(n)
    ready = [n for n, k in pending.items() if k == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        n = heapq.heappop(ready)
        order.append(n)
        for parent in dependents[n]:
            pending[parent] -= 1
            if pending[parent] == 0:
                heapq.heappush(ready, parent)
    assert order[-1] == root
    return order


@dataclass(frozen=True)
class DeclaredTest:
    name: str
    depends_on_pruned: bool = False


@dataclass(frozen=True)
class FeatureSpec:
    flag: str
    sgx_relevant: bool = True


@dataclass
class PortPlan:
    root: str
    order: list[str]
    remediations: list[RemediationAction]
    thread_removals: list[str]
    pruned_tests: list[str]
    surviving_tests: list[str]
    consolidated_entrypoint: str
    feature_prunes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        # Field order is fixed so emitted plans diff cleanly.
        return {
            "root": self.root,
            "order": list(self.order),
            "remediations": [r.to_dict() for r in self.remediations],
            "thread_removals": list(self.thread_removals),
            "test_actions": {
                "pruned_tests": list(self.pruned_tests),
                "surviving_tests": list(self.surviving_tests),
                "consolidated_entrypoint": self.consolidated_entrypoint,
            },
            "feature_prunes": list(self.feature_prunes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def consolidated_entrypoint_name(root: str) -> str:
    safe = "".join(c if c.isalnum() else "_" for c in root)
    return f"ecall_run_{safe}_tests"


def build_plan(
    graph: RegistryGraph,
    root: str,
    usages: Sequence[ResourceUsage] = (),
    declared_tests: Sequence[DeclaredTest] = (),
    features: Sequence[FeatureSpec] = (),
) -> PortPlan:
    order = port_order(graph, root)
    thread_removals: list[str] = []
    for u in usages:
        if u.kind is ResourceKind.THREAD_SPAWN and u.function not in thread_removals:
            thread_removals.append(u.function)
    return PortPlan(
        root=root,
        order=order,
        remediations=plan_remediations(usages),
        thread_removals=thread_removals,
        pruned_tests=[t.name for t in declared_tests if t.depends_on_pruned],
        surviving_tests=[t.name for t in declared_tests if not t.depends_on_pruned],
        consolidated_entrypoint=consolidated_entrypoint_name(root),
        feature_prunes=[f.flag for f in features if not f.sgx_relevant],
    )


def parse_plan_request(doc: Mapping) -> tuple[list[ResourceUsage], list[DeclaredTest], list[FeatureSpec]]:
    """Split a plan-request document into usages, tests and features.

    Shape: ``{"usages": [{"function", "kind", "security_sensitive"}],
    "tests": [{"name", "depends_on_pruned"}], "features": [{"flag", "sgx_relevant"}]}``.
    A bare list is read as the usages alone.
    """
    if isinstance(doc, list):
        doc = {"usages": doc}
    usages = [ResourceUsage.from_dict(u) for u in doc.get("usages", [])]
    tests = [
        DeclaredTest(str(t["name"]), bool(t.get("depends_on_pruned", False)))
        for t in doc.get("tests", [])
    ]
    features = [
        FeatureSpec(str(f["flag"]), bool(f.get("sgx_relevant", True)))
        for f in doc.get("features", [])
    ]
    return usages, tests, features
