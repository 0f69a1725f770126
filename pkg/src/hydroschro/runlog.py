"""Append-only JSON-lines run log."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, no whitespace)."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def append_record(path, op: str, config, metrics: dict, flags=(), wall_time: float = 0.0):
    from .bridge import _jsonable

    rec = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "op": op,
        "config_hash": config_hash(config),
        "metrics": _jsonable(metrics),
        "flags": list(flags),
        "wall_time": wall_time,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return rec
