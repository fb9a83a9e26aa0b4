"""Run configuration echo and JSON report serialization.

Payload determinism is part of the contract: the same config produces the
same payload bytes, so payloads are rendered canonically (sorted keys,
shortest round-trip float rendering). Wall time lives only in the
envelope and is excluded from that contract.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "1"


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    """Canonical rendering: sorted keys, no spaces, full double precision."""
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    out: str | None = None

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "params": jsonable(self.params),
            "seed": self.seed,
            "threads": self.threads,
            "out": self.out,
        }


@dataclass(frozen=True)
class Report:
    config: dict
    payload: dict
    wall_time_seconds: float
    version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": jsonable(self.config),
            "wall_time_seconds": self.wall_time_seconds,
            "payload": jsonable(self.payload),
        }

    def payload_json(self) -> str:
        """Canonical payload bytes; identical across runs of the same config."""
        return canonical_json(self.payload)

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")
