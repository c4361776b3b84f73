"""
Call-graph audit of untrusted-resource use reachable from enclave entry points.

Facts document::

    {"functions": [{"name", "is_entrypoint", "calls": [...],
                    "resources": [{"kind", "site"}]}]}

Reachability is context- and flow-insensitive. Each (entrypoint, sink, kind)
yields one warning whose witness is the lexicographically smallest among the
shortest call paths.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .kinds import ResourceKind
from .planner import RemediationAction, ResourceUsage, plan_remediations


class AuditError(Exception):
    pass


class UnknownCallee(AuditError):
    def __init__(self, caller: str, callee: str) -> None:
        super().__init__(f"{caller!r} calls undeclared function {callee!r}")
        self.caller = caller
        self.callee = callee


class DuplicateFunction(AuditError):
    pass


class MissingSensitivity(AuditError):
    def __init__(self, function: str) -> None:
        super().__init__(f"no sensitivity entry for sink {function!r}")
        self.function = function


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Resource:
    kind: ResourceKind
    site: str = ""


@dataclass(frozen=True)
class Function:
    name: str
    calls: tuple[str, ...] = ()
    resources: tuple[Resource, ...] = ()
    is_entrypoint: bool = False


@dataclass(frozen=True)
class CallGraph:
    functions: Mapping[str, Function]

    @property
    def entrypoints(self) -> list[str]:
        return sorted(n for n, f in self.functions.items() if f.is_entrypoint)

    @property
    def edge_count(self) -> int:
        return sum(len(set(f.calls)) for f in self.functions.values())

    def callees(self, name: str) -> list[str]:
        return sorted(set(self.functions[name].calls))

    def to_dict(self) -> dict:
        return {
            "functions": [
                {
                    "name": f.name,
                    "is_entrypoint": f.is_entrypoint,
                    "calls": list(f.calls),
                    "resources": [{"kind": r.kind.value, "site": r.site} for r in f.resources],
                }
                for f in sorted(self.functions.values(), key=lambda f: f.name)
            ]
        }


def load_facts(document: Mapping) -> CallGraph:
    functions: dict[str, Function] = {}
    for raw in document.get("functions", []):
        name = str(raw["name"])
        if name in functions:
            raise DuplicateFunction(f"function {name!r} declared twice")
        functions[name] = Function(
            name=name,
            calls=tuple(raw.get("calls", [])),
            resources=tuple(
                Resource(ResourceKind.parse(r["kind"]), str(r.get("site", "")))
                for r in raw.get("resources", [])
            ),
            is_entrypoint=bool(raw.get("is_entrypoint", False)),
        )
    for f in functions.values():
        for callee in f.calls:
            if callee not in functions:
                raise UnknownCallee(f.name, callee)
    return CallGraph(functions)


@dataclass(frozen=True)
class ResourceWarning:
    entrypoint: str
    sink_function: str
    kind: ResourceKind
    path: tuple[str, ...]
    severity: Severity
    sites: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "entrypoint": self.entrypoint,
            "sink_function": self.sink_function,
            "kind": self.kind.value,
            "path": list(self.path),
            "severity": self.severity.value,
            "sites": list(self.sites),
        }

    def text(self) -> str:
        return (
            f"{self.severity.value.upper()} {self.kind.value} {self.entrypoint}: "
            f"{'→'.join(self.path)} at {', '.join(self.sites) or '?'}"
        )


def shortest_paths(graph: CallGraph, source: str) -> dict[str, tuple[str, ...]]:
    """BFS over sorted callees; the first path found to each node is the
    lexicographically smallest shortest one."""
    paths = {source: (source,)}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for callee in graph.callees(node):
            if callee not in paths:
                paths[callee] = paths[node] + (callee,)
                queue.append(callee)
    return paths


def severity_for(kind: ResourceKind) -> Severity:
    # Ported libraries must not spawn threads at all.
    return Severity.ERROR if kind is ResourceKind.THREAD_SPAWN else Severity.WARNING


def audit(graph: CallGraph) -> list[ResourceWarning]:
    warnings = []
    for entry in graph.entrypoints:
        for name, path in shortest_paths(graph, entry).items():
            by_kind: dict[ResourceKind, list[str]] = {}
            for r in graph.functions[name].resources:
                by_kind.setdefault(r.kind, []).append(r.site)
            for kind, sites in by_kind.items():
                warnings.append(
                    ResourceWarning(
                        entry, name, kind, path, severity_for(kind), tuple(sorted(set(sites)))
                    )
                )
    warnings.sort(key=lambda w: (w.entrypoint, w.sink_function, w.kind.value))
    return warnings


def text_report(warnings: Iterable[ResourceWarning]) -> str:
    return "".join(w.text() + "\n" for w in warnings)


def audit_to_plan(
    warnings: Iterable[ResourceWarning], sensitivity: Mapping[str, bool]
) -> list[RemediationAction]:
    usages: dict[tuple[str, ResourceKind], ResourceUsage] = {}
    for w in warnings:
        if w.sink_function not in sensitivity:
            raise MissingSensitivity(w.sink_function)
        key = (w.sink_function, w.kind)
        usages.setdefault(
            key, ResourceUsage(w.sink_function, w.kind, bool(sensitivity[w.sink_function]))
        )
    ordered = [usages[k] for k in sorted(usages, key=lambda k: (k[0], k[1].value))]
    return plan_remediations(ordered)


# Extraction front end: a rigid, documented mini-convention rather than a parser.

@dataclass(frozen=True)
class CallSyntax:
    """Textual shape of definitions, calls and entrypoint markers.

    ``definition`` must capture the function name in group ``name``; a body
    runs from the definition's first ``{`` to its matching ``}``. A marker
    line above a definition (blank lines and other attributes allowed) flags
    an entrypoint. Line comments start with ``comment``.
    """

    definition: re.Pattern = re.compile(r"^\s*(?:pub(?:\([^)]*\))?\s+)?(?:unsafe\s+)?(?:extern\s+\"C\"\s+)?fn\s+(?P<name>[A-Za-z_]\w*)")
    call: re.Pattern = re.compile(r"(?P<name>[A-Za-z_][\w]*(?:::[A-Za-z_]\w*)*)\s*(?:::<[^>]*>)?\s*\(")
    entry_marker: re.Pattern = re.compile(r"^\s*(?:#\[ecall\]|//\s*@ecall\b)")
    comment: str = "//"


RUST_LIKE = CallSyntax()

_KEYWORDS = frozenset({"if", "while", "for", "match", "return", "loop", "fn", "Some", "Ok", "Err"})


@dataclass
class _Def:
    name: str
    path: str
    is_entrypoint: bool
    body: list[tuple[int, str]] = field(default_factory=list)


def _strip_comment(line: str, syntax: CallSyntax) -> str:
    idx = line.find(syntax.comment)
    return line if idx < 0 else line[:idx]


def _definitions(path: str, text: str, syntax: CallSyntax) -> list[_Def]:
    lines = text.splitlines()
    defs: list[_Def] = []
    marker_pending = False
    i = 0
    while i < len(lines):
        line = lines[i]
        if syntax.entry_marker.match(line):
            marker_pending = True
            i += 1
            continue
        m = syntax.definition.match(line)
        if not m:
            if line.strip() and not line.lstrip().startswith("#["):
                marker_pending = False
            i += 1
            continue
        d = _Def(m.group("name"), path, marker_pending)
        marker_pending = False
        depth = 0
        opened = False
        j = i
        while j < len(lines):
            code = _strip_comment(lines[j], syntax)
            start_col = m.end() if j == i else 0
            segment = code[start_col:]
            if opened or "{" in segment:
                d.body.append((j + 1, segment if j == i else code))
            for ch in segment:
                if ch == "{":
                    depth += 1
                    opened = True
                elif ch == "}":
                    depth -= 1
            if opened and depth <= 0:
                break
            if not opened and ";" in segment:
                break  # declaration without a body
            j += 1
        defs.append(d)
        i = j + 1
    return defs


def _pattern_regex(pattern: str) -> re.Pattern:
    head = r"(?<!\w)" if re.match(r"\w", pattern) else ""
    tail = r"(?![\w])" if re.search(r"\w$", pattern) else ""
    return re.compile(head + re.escape(pattern) + tail)


def extract_facts(
    sources: Mapping[str, str],
    table: Mapping[str, ResourceKind | str],
    call_syntax: CallSyntax = RUST_LIKE,
) -> dict:
    """Best-effort facts document from source text; never raises on odd input."""
    compiled = [(pat, _pattern_regex(pat), ResourceKind.parse(kind)) for pat, kind in sorted(table.items()) if pat]
    defs: dict[str, _Def] = {}
    for path in sorted(sources):
        for d in _definitions(path, sources[path], call_syntax):
            defs.setdefault(d.name, d)
    functions = []
    for name in sorted(defs):
        d = defs[name]
        calls: list[str] = []
        resources: list[dict] = []
        for lineno, code in d.body:
            for m in call_syntax.call.finditer(code):
                token = m.group("name")
                callee = token if token in defs else token.rsplit("::", 1)[-1]
                if callee in _KEYWORDS or callee not in defs:
                    continue
                if callee not in calls:
                    calls.append(callee)
            for pat, rx, kind in compiled:
                for _ in rx.finditer(code):
                    resources.append({"kind": kind.value, "site": f"{d.path}:{lineno}"})
        functions.append(
            {
                "name": name,
                "is_entrypoint": d.is_entrypoint,
                "calls": calls,
                "resources": resources,
            }
        )
    return {"functions": functions}
