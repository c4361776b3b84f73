"""Resource kinds shared by the port planner and the enclave auditor."""

from __future__ import annotations

from enum import Enum


class ResourceKind(str, Enum):
    FILE_IO = "file_io"
    TIME = "time"
    RANDOMNESS = "randomness"
    THREAD_SPAWN = "thread_spawn"
    NETWORK = "network"
    ENV_VAR = "env_var"
    PROCESS_SPAWN = "process_spawn"

    @classmethod
    def parse(cls, value: str | ResourceKind) -> ResourceKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown resource kind: {value!r}") from None
