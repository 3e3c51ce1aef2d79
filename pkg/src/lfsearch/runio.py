"""Run persistence: canonical JSON with 17-significant-digit floats so
determinism checks can compare files byte for byte, append-only JSON Lines
metric streams, and CSV curve export.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np


def format_float(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"cannot serialize non-finite float {value!r}")
    return format(value, ".17g")


def dumps(value) -> str:
    """Canonical JSON: insertion-ordered keys, full-precision floats."""
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}:{dumps(v)}" for k, v in value.items())
        return "{" + ",".join(items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in value) + "]"
    if isinstance(value, np.ndarray):
        return dumps(value.tolist())
    raise TypeError(f"cannot serialize {type(value).__name__}")


class MetricsWriter:
    """Append-only JSON Lines stream; every record lands flushed, so a crashed
    run leaves a valid prefix."""

    def __init__(self, path):
        self._handle = open(path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._handle.write(dumps(record) + "\n")
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


def write_xy_csv(path, points) -> None:
    """Two-column CSV of (x, y) points at full float precision."""
    lines = ["x,y"]
    lines.extend(f"{format_float(x)},{format_float(y)}" for x, y in points)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def run_id(config: dict) -> str:
    """Short stable identifier derived from the resolved configuration."""
    return hashlib.sha256(dumps(config).encode("utf-8")).hexdigest()[:12]
