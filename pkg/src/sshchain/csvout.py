"""Deterministic CSV and JSON writers shared by the emitting modules.

Floats are rendered with 12 significant digits, '.' decimal and ','
separator, so repeated runs with identical inputs produce byte-identical
files.
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, Sequence


def fmt(value) -> str:
    """Render a cell: floats at 12 significant digits, others via str."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".12g")
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_sanitize(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sanitize(obj):
    """Make a payload JSON-safe: inf -> 'inf', numpy scalars -> python."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
