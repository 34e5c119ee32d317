"""CSV/JSON/TOML plumbing: dataset ingestion, report emission and run configuration."""
from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .diffusion import SamplePaths
from .errors import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCHEMA_VERSION = "1.0"
LAYOUTS = ("wide", "long")


def fmt(x) -> str:
    """17 significant digits: round-trips every IEEE-754 double."""
    return format(float(x), ".17g")


def _cell(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return fmt(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path: Path, payload: dict, kind: str) -> Path:
    """Write a report with ``schema_version`` and ``kind`` fields; non-finite floats become null."""
    path = Path(path)
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, **_clean(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read JSON {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def _number(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"row {row}, column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"row {row}, column {col!r}: value is not finite")
    return v


def ingest_csv(path, layout: str = "wide") -> SamplePaths:
    """Read sample paths from CSV.

    ``wide``: header row, first column time, one column per path.
    ``long``: header row with columns (path_id, time, value), rows grouped by path
    in order of first appearance.  Values must be positive and times strictly
    increasing within each path.
    """
    if layout not in LAYOUTS:
        raise ValidationError(f"layout must be one of {LAYOUTS}")
    try:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ValidationError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValidationError(f"row {i}: expected {len(header)} cells, found {len(r)}")

    def positive(v, row, col):
        if not v > 0:
            raise ValidationError(f"row {row}, column {col!r}: value must be positive, got {v}")
        return v

    if layout == "wide":
        if len(header) < 2:
            raise ValidationError("wide layout needs a time column and at least one path column")
        t = np.array([_number(r[0], i, header[0]) for i, r in enumerate(body, start=2)])
        bad = np.nonzero(np.diff(t) <= 0)[0]
        if bad.size:
            raise ValidationError(f"row {bad[0] + 3}: times must be strictly increasing")
        vals = [[positive(_number(r[j], i, header[j]), i, header[j]) for i, r in enumerate(body, start=2)]
                for j in range(1, len(header))]
        return SamplePaths(tuple(t.copy() for _ in vals), tuple(np.array(v) for v in vals))

    if len(header) != 3:
        raise ValidationError("long layout needs exactly the columns path_id, time, value")
    order, times, values = [], {}, {}
    for i, r in enumerate(body, start=2):
        pid = r[0].strip()
        t = _number(r[1], i, header[1])
        v = positive(_number(r[2], i, header[2]), i, header[2])
        if pid not in times:
            order.append(pid)
            times[pid], values[pid] = [], []
        elif t <= times[pid][-1]:
            raise ValidationError(f"row {i}: times of path {pid!r} must be strictly increasing")
        times[pid].append(t)
        values[pid].append(v)
    return SamplePaths(tuple(np.array(times[p]) for p in order), tuple(np.array(values[p]) for p in order))


def write_paths_csv(paths: SamplePaths, path, layout: str = "long") -> Path:
    if layout not in LAYOUTS:
        raise ValidationError(f"layout must be one of {LAYOUTS}")
    if layout == "wide":
        if not paths.common_grid:
            raise ValidationError("wide layout needs a common time grid")
        grid, mat = paths.grid(), paths.matrix()
        header = ["time"] + [f"path_{i}" for i in range(paths.d)]
        return write_csv(path, header, ([t, *mat[:, j]] for j, t in enumerate(grid)))
    rows = ((i, t, v) for i, (ts, vs) in enumerate(zip(paths.times, paths.values)) for t, v in zip(ts, vs))
    return write_csv(path, ["path_id", "time", "value"], rows)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path) -> dict[str, Any]:
    """TOML run configuration flattened to dotted keys (``model.q``, ``fit.method``, ...)."""
    try:
        with Path(path).open("rb") as fh:
            return _flatten(tomllib.load(fh))
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from exc
