"""Small shared helpers for deterministic text output."""

from __future__ import annotations

import json
import os
from pathlib import Path


def fmt_float(x) -> str:
    """Shortest decimal string that round-trips the float64 exactly."""
    return repr(float(x))


def write_rows(path, header, rows) -> None:
    """Write a delimited text table with a fixed header.

    Rows are iterables of already-formatted strings; output uses plain
    commas and newline line endings so repeated runs are byte-identical.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def atomic_write_json(path, obj) -> None:
    """Serialize to JSON with sorted keys and replace the target atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
