"""
CI matrix expansion, post-merge and daily runs, and weekly history reports.

A runner is any callable ``runner(library, config) -> str`` returning
``"pass"`` or a raw failure kind. Raw kinds map onto the failure taxonomy via
:data:`RAW_KIND_CATEGORY`; anything unrecognised counts as deterministic so a
human looks at it. Only transient network failures are retried.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import shlex
import subprocess
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

WEEK = 7 * 86_400
DEFAULT_RETRY_BUDGET = 2
DEFAULT_MASS_FAILURE_THRESHOLD = 0.25


class CiError(Exception):
    pass


class EmptyAxis(CiError):
    pass


class DuplicateAxisValue(CiError):
    pass


class RunnerUnavailable(CiError):
    pass


class FailureCategory(str, Enum):
    TRANSIENT_NETWORK = "transient_network"
    DETERMINISTIC = "deterministic"
    EXTERNAL_DEPENDENCY_BREAKAGE = "external_dependency_breakage"


RAW_KIND_CATEGORY = {
    "network": FailureCategory.TRANSIENT_NETWORK,
    "transient_network": FailureCategory.TRANSIENT_NETWORK,
    "deterministic": FailureCategory.DETERMINISTIC,
    "test": FailureCategory.DETERMINISTIC,
    "external": FailureCategory.EXTERNAL_DEPENDENCY_BREAKAGE,
    "external_dependency_breakage": FailureCategory.EXTERNAL_DEPENDENCY_BREAKAGE,
}


def classify(raw: str) -> FailureCategory:
    return RAW_KIND_CATEGORY.get(raw, FailureCategory.DETERMINISTIC)


@dataclass(frozen=True)
class PipelineConfig:
    package_manager: str
    os_version: str
    build_type: str

    @property
    def label(self) -> str:
        return f"{self.package_manager}/{self.os_version}/{self.build_type}"

    def to_dict(self) -> dict:
        return {
            "package_manager": self.package_manager,
            "os_version": self.os_version,
            "build_type": self.build_type,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> PipelineConfig:
        return cls(raw["package_manager"], raw["os_version"], raw["build_type"])


@dataclass(frozen=True)
class BuildMatrix:
    package_managers: tuple[str, ...] = ("cargo", "xargo")
    os_versions: tuple[str, ...] = ("ubuntu-16.04", "ubuntu-18.04")
    build_types: tuple[str, ...] = ("release", "debug")

    def validate(self) -> None:
        for axis in ("package_managers", "os_versions", "build_types"):
            values = getattr(self, axis)
            if not values:
                raise EmptyAxis(f"matrix axis {axis} is empty")
            if len(set(values)) != len(values):
                raise DuplicateAxisValue(f"matrix axis {axis} repeats a value")


def expand_matrix(matrix: BuildMatrix) -> list[PipelineConfig]:
    matrix.validate()
    return [
        PipelineConfig(pm, osv, bt)
        for pm, osv, bt in itertools.product(
            matrix.package_managers, matrix.os_versions, matrix.build_types
        )
    ]


@dataclass(frozen=True)
class CiRecord:
    library: str
    config: PipelineConfig
    when: int
    category: FailureCategory | None = None
    attempts: int = 1

    @property
    def passed(self) -> bool:
        return self.category is None

    @property
    def outcome(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "library": self.library,
            "config": self.config.to_dict(),
            "when": self.when,
            "outcome": self.outcome,
            "category": None if self.category is None else self.category.value,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> CiRecord:
        cat = raw.get("category")
        if (raw.get("outcome") == "fail") != (cat is not None):
            raise ValueError("failure category must be present exactly for failures")
        return cls(
            library=raw["library"],
            config=PipelineConfig.from_dict(raw["config"]),
            when=int(raw["when"]),
            category=None if cat is None else FailureCategory(cat),
            attempts=int(raw.get("attempts", 1)),
        )


Runner = Callable[[str, PipelineConfig], str]


def _run_one(library: str, config: PipelineConfig, runner: Runner, retry_budget: int, when: int) -> CiRecord:
    attempts = 0
    while True:
        attempts += 1
        raw = runner(library, config)
        if raw == "pass":
            return CiRecord(library, config, when, None, attempts)
        category = classify(raw)
        if category is FailureCategory.TRANSIENT_NETWORK and attempts <= retry_budget:
            logger.info("%s %s: transient failure, retrying", library, config.label)
            continue
        return CiRecord(library, config, when, category, attempts)


def run_ci(
    library: str,
    configs: Sequence[PipelineConfig],
    runner: Runner | None,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    *,
    when: int = 0,
    max_parallel: int = 1,
) -> list[CiRecord]:
    """One record per pipeline, in ``configs`` order regardless of parallelism."""
    if runner is None or not callable(runner):
        raise RunnerUnavailable("no CI runner configured")
    if retry_budget < 0:
        raise ValueError("retry_budget must be non-negative")
    if max_parallel <= 1:
        return [_run_one(library, c, runner, retry_budget, when) for c in configs]
    with ThreadPoolExecutor(max_workers=max_parallel) as pool:
        futures = [pool.submit(_run_one, library, c, runner, retry_budget, when) for c in configs]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class MassFailureEvent:
    count: int
    total: int
    suspected_external: bool
    libraries: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "total": self.total,
            "suspected_external": self.suspected_external,
            "libraries": list(self.libraries),
        }


def daily_sweep(
    libraries: Iterable[str],
    configs: Sequence[PipelineConfig],
    runner: Runner | None,
    now: int,
    mass_failure_threshold: float = DEFAULT_MASS_FAILURE_THRESHOLD,
    retry_budget: int = DEFAULT_RETRY_BUDGET,
    *,
    max_parallel: int = 1,
) -> tuple[list[CiRecord], MassFailureEvent | None]:
    """Run every library; flag a day on which many libraries break at once."""
    if not 0 < mass_failure_threshold <= 1:
        raise ValueError("mass_failure_threshold must lie in (0, 1]")
    libs = sorted(libraries)
    records: list[CiRecord] = []
    failing = []
    for lib in libs:
        recs = run_ci(lib, configs, runner, retry_budget, when=now, max_parallel=max_parallel)
        records.extend(recs)
        if any(not r.passed for r in recs):
            failing.append(lib)
    if libs and Fraction(len(failing), len(libs)) >= Fraction(mass_failure_threshold).limit_denominator(10**6):
        return records, MassFailureEvent(len(failing), len(libs), True, tuple(failing))
    return records, None


@dataclass(frozen=True)
class Attempt:
    """One auto-merge or CI invocation for a library; the unit of the weekly report."""

    when: int
    failed: bool
    library: str = ""
    kind: str = "ci"


def attempts_from_records(records: Iterable[CiRecord]) -> list[Attempt]:
    """Collapse per-pipeline records into per-library invocations."""
    grouped: dict[tuple[str, int], bool] = {}
    for r in records:
        key = (r.library, r.when)
        grouped[key] = grouped.get(key, False) or not r.passed
    ordered = sorted(grouped.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    return [Attempt(when, failed, lib, "ci") for (lib, when), failed in ordered]


@dataclass(frozen=True)
class WeeklyReport:
    week_index: int
    total_attempts: int
    failed_attempts: int

    @property
    def rate(self) -> Fraction:
        if self.total_attempts == 0:
            return Fraction(0)
        return Fraction(self.failed_attempts, self.total_attempts)

    @property
    def failure_rate(self) -> float:
        return float(self.rate)

    def to_dict(self) -> dict:
        return {
            "week": self.week_index,
            "total": self.total_attempts,
            "failed": self.failed_attempts,
            "rate": self.failure_rate,
        }


def week_of(when: int, epoch: int = 0) -> int:
    """1-based index of the 7-day window starting at ``epoch``."""
    return (when - epoch) // WEEK + 1


def weekly_aggregate(
    history: Iterable[Attempt],
    epoch: int = 0,
    weeks: int | None = None,
) -> list[WeeklyReport]:
    """Bucket attempts into weeks; gaps up to ``weeks`` appear as empty weeks."""
    totals: dict[int, int] = defaultdict(int)
    failed: dict[int, int] = defaultdict(int)
    for a in history:
        w = week_of(a.when, epoch)
        if w < 1:
            raise ValueError(f"attempt at {a.when} precedes the report epoch")
        totals[w] += 1
        failed[w] += a.failed
    last = max(totals, default=0)
    if weeks is not None:
        last = max(last, weeks)
    return [WeeklyReport(w, totals[w], failed[w]) for w in range(1, last + 1)]


def weekly_csv(reports: Iterable[WeeklyReport]) -> str:
    """``week,total,failed,rate`` rows; an attempt is one per-library CI
    invocation or one merge attempt."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["week", "total", "failed", "rate"])
    for r in reports:
        writer.writerow([r.week_index, r.total_attempts, r.failed_attempts, f"{r.failure_rate:.4f}"])
    return buf.getvalue()


@dataclass
class ScriptedRunner:
    """Deterministic runner: per (library, pipeline label) outcome queues.

    Keys are ``"library"`` or ``"library:label"``; the more specific key wins.
    Once a queue is exhausted its last outcome repeats; unknown pairs pass.
    """

    script: Mapping[str, Sequence[str]] = field(default_factory=dict)
    calls: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._cursor: dict[str, int] = defaultdict(int)

    def __call__(self, library: str, config: PipelineConfig) -> str:
        self.calls.append((library, config.label))
        for key in (f"{library}:{config.label}", library):
            outcomes = self.script.get(key)
            if outcomes:
                i = self._cursor[key]
                self._cursor[key] += 1
                return outcomes[min(i, len(outcomes) - 1)]
        return "pass"


NETWORK_MARKERS = ("could not resolve host", "connection reset", "timed out", "network is unreachable")


@dataclass
class CommandRunner:
    """Run a shell command template per pipeline; exit 0 means pass.

    The template is formatted with ``library``, ``package_manager``,
    ``os_version`` and ``build_type``. Failing output that mentions a network
    error is reported as ``network``.
    """

    template: str
    timeout: float | None = None

    def __call__(self, library: str, config: PipelineConfig) -> str:
        cmd = self.template.format(library=library, **config.to_dict())
        try:
            proc = subprocess.run(
                shlex.split(cmd), capture_output=True, text=True, timeout=self.timeout
            )
        except FileNotFoundError as exc:
            raise RunnerUnavailable(str(exc)) from exc
        except subprocess.TimeoutExpired:
            return "timeout"
        if proc.returncode == 0:
            return "pass"
        output = (proc.stdout + proc.stderr).lower()
        if any(m in output for m in NETWORK_MARKERS):
            return "network"
        return "deterministic"
