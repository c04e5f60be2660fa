"""Bit-stable writers for series tables, run summaries and jump logs.

Numbers are written with 17 significant digits in C-locale scientific
notation, so a table round-trips every float exactly.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .observables import SCHEMA_VERSION, ObservableSeries

FLOAT_FORMAT = "%.16e"


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def format_series(series: ObservableSeries, header: dict) -> str:
    names, table = series.table()
    lines = [f"# {key}={header[key]}" for key in sorted(header)]
    lines.append("\t".join(names))
    for row in table:
        lines.append("\t".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_series(path: str) -> tuple[dict, tuple[str, ...], np.ndarray]:
    """Inverse of ``format_series``: (header, column names, values)."""
    header, rows, names = {}, [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                header[key] = value
            elif names is None:
                names = tuple(line.split("\t"))
            elif line:
                rows.append([float(v) for v in line.split("\t")])
    return header, names, np.array(rows)


def format_jumps(logs, seeds) -> str:
    lines = ["trajectory\tseed\tt\tchannel"]
    for k, (log, seed) in enumerate(zip(logs, seeds)):
        for t, channel in log:
            lines.append(f"{k}\t{seed}\t{_fmt(t)}\t{channel}")
    return "\n".join(lines) + "\n"


def _plain(obj):
    """Recursively convert numpy scalars and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def format_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def write_text(path: str, text: str) -> None:
    # newline="" keeps "\n" on every platform
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def series_header(version: str, digest: str, seed: int | None, backend: str) -> dict:
    h = {"rotmaster_version": version, "schema_version": SCHEMA_VERSION, "scenario_sha256": digest, "backend": backend}
    if seed is not None:
        h["master_seed"] = seed
    return h


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
