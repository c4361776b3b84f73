"""Operator configuration: scheduler keys at top level, CI keys under ``[ci]``.

Example ``scheduler.toml``::

    keywords = ["fix", "bug", "issue", "release"]
    max_age_days = 30
    capacity = 10
    manual_review = ["rustls", "webpki", "ring", "cryptocorrosion", "wasmi"]

    [ci]
    package_managers = ["cargo", "xargo"]
    os_versions = ["ubuntu-16.04", "ubuntu-18.04"]
    build_types = ["release", "debug"]
    retry_budget = 2
    mass_failure_threshold = 0.25
    epoch = 0
    max_parallel = 1
    command = "make -C {library} test PM={package_manager}"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ci import DEFAULT_MASS_FAILURE_THRESHOLD, DEFAULT_RETRY_BUDGET, BuildMatrix
from .scheduler import DAY, SchedulerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CiConfig:
    matrix: BuildMatrix = field(default_factory=BuildMatrix)
    retry_budget: int = DEFAULT_RETRY_BUDGET
    mass_failure_threshold: float = DEFAULT_MASS_FAILURE_THRESHOLD
    epoch: int = 0
    max_parallel: int = 1
    command: str | None = None
    script: str | None = None


@dataclass(frozen=True)
class Config:
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    ci: CiConfig = field(default_factory=CiConfig)


def _str_list(raw: Mapping, key: str, default):
    value = raw.get(key, default)
    if not isinstance(value, (list, tuple, frozenset, set)) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{key} must be a list of strings")
    return value


def parse_config(raw: Mapping) -> Config:
    base = SchedulerConfig()
    try:
        sched = SchedulerConfig(
            keywords=frozenset(_str_list(raw, "keywords", base.keywords)),
            max_age=int(raw.get("max_age_days", base.max_age // DAY)) * DAY,
            default_capacity=int(raw.get("capacity", base.default_capacity)),
            manual_review=frozenset(_str_list(raw, "manual_review", base.manual_review)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ci_raw = raw.get("ci", {})
    m = BuildMatrix()
    try:
        ci = CiConfig(
            matrix=BuildMatrix(
                tuple(_str_list(ci_raw, "package_managers", m.package_managers)),
                tuple(_str_list(ci_raw, "os_versions", m.os_versions)),
                tuple(_str_list(ci_raw, "build_types", m.build_types)),
            ),
            retry_budget=int(ci_raw.get("retry_budget", DEFAULT_RETRY_BUDGET)),
            mass_failure_threshold=float(
                ci_raw.get("mass_failure_threshold", DEFAULT_MASS_FAILURE_THRESHOLD)
            ),
            epoch=int(ci_raw.get("epoch", 0)),
            max_parallel=int(ci_raw.get("max_parallel", 1)),
            command=ci_raw.get("command"),
            script=ci_raw.get("script"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ci: {exc}") from exc
    return Config(sched, ci)


def load_config(path: str | Path | None) -> Config:
    if path is None or not Path(path).exists():
        return Config()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)
