"""Files: NIW checkpoints, per-step CSV, run summaries and gradient traces.

Floats are written with ``repr`` (shortest string that round-trips), so
every file reloads to the exact same doubles.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .diagnostics import CSV_COLUMNS, StepRecord
from .editor import EditBatch
from .errors import CheckpointError, TraceError
from .niw import DiagStats, NiwState
from .streams import TraceSource

CHECKPOINT_VERSION = 1
_CHECKPOINT_KEYS = ("version", "d", "d_h", "kappa", "nu", "m", "psi", "h_mean", "h_ssd", "h_count")


# -- checkpoints ----------------------------------------------------------

def checkpoint_dict(state: NiwState) -> dict:
    arrays = {"m": state.m, "psi": state.psi, "h_mean": state.h_stats.mean, "h_ssd": state.h_stats.ssd}
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"cannot save a state with non-finite values in {name!r}")
    for name in ("kappa", "nu"):
        if not math.isfinite(getattr(state, name)):
            raise CheckpointError(f"cannot save a state with non-finite {name!r}")
    return {
        "version": CHECKPOINT_VERSION,
        "d": state.d,
        "d_h": state.d_h,
        "kappa": float(state.kappa),
        "nu": float(state.nu),
        "m": state.m.tolist(),
        "psi": state.psi.tolist(),
        "h_mean": state.h_stats.mean.tolist(),
        "h_ssd": state.h_stats.ssd.tolist(),
        "h_count": int(state.h_stats.count),
    }


def save_checkpoint(state: NiwState, path) -> None:
    text = json.dumps(checkpoint_dict(state), allow_nan=False)
    Path(path).write_text(text + "\n")


def _reject_constant(name):
    raise CheckpointError(f"checkpoint contains a non-finite value ({name})")


def _array(obj, key, shape):
    try:
        arr = np.array(obj[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise CheckpointError(f"field {key!r} is not a numeric array") from None
    if arr.shape != shape:
        raise CheckpointError(f"field {key!r} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(f"checkpoint contains a non-finite value in {key!r}")
    return arr


def state_from_dict(obj) -> NiwState:
    if not isinstance(obj, dict):
        raise CheckpointError("malformed checkpoint: top level must be a JSON object")
    missing = [k for k in _CHECKPOINT_KEYS if k not in obj]
    if missing:
        raise CheckpointError(f"malformed checkpoint: missing fields {missing}")
    if obj["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {obj['version']!r} (expected {CHECKPOINT_VERSION})"
        )
    d, d_h, h_count = obj["d"], obj["d_h"], obj["h_count"]
    for key, val, low in (("d", d, 1), ("d_h", d_h, 0), ("h_count", h_count, 0)):
        if not isinstance(val, int) or isinstance(val, bool) or val < low:
            raise CheckpointError(f"field {key!r} must be an integer >= {low}, got {val!r}")
    scalars = {}
    for key in ("kappa", "nu"):
        val = obj[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise CheckpointError(f"field {key!r} must be a number")
        if not math.isfinite(val):
            raise CheckpointError(f"checkpoint contains a non-finite value in {key!r}")
        scalars[key] = float(val)
    psi = _array(obj, "psi", (d, d))
    return NiwState(
        m=_array(obj, "m", (d,)),
        kappa=scalars["kappa"],
        psi=psi,
        nu=scalars["nu"],
        h_stats=DiagStats(_array(obj, "h_mean", (d_h,)), _array(obj, "h_ssd", (d_h,)), h_count),
    )


def load_checkpoint(path) -> NiwState:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed JSON in checkpoint {path}: {exc}") from None
    return state_from_dict(obj)


# -- per-step CSV and summaries -------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_steps_csv(records: Iterable[StepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = rec.as_row()
            writer.writerow([_cell(row[c]) for c in CSV_COLUMNS])


def read_steps_csv(path) -> list[StepRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns in {path}")
        for row in reader:
            values = {}
            for c in CSV_COLUMNS:
                raw = row[c]
                if c == "step":
                    values[c] = int(raw)
                elif c == "phase":
                    values[c] = raw
                else:
                    values[c] = float(raw) if raw != "" else None
            out.append(StepRecord(**values))
    return out


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# -- gradient traces ------------------------------------------------------

def trace_header(d: int, d_h: int) -> list[str]:
    return ["step", "sample"] + [f"h_{i}" for i in range(d_h)] + [f"v_{i}" for i in range(d)]


def write_trace(steps: Iterable[tuple[int, EditBatch]], path, d: int, d_h: int) -> int:
    """Write ``(step, batch)`` pairs as trace rows; returns the number of steps written."""
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(trace_header(d, d_h))
        for step, batch in steps:
            for j in range(batch.n):
                writer.writerow(
                    [str(step), str(j)]
                    + [repr(float(x)) for x in batch.h[:, j]]
                    + [repr(float(x)) for x in batch.v_raw[:, j]]
                )
            count += 1
    return count


def _parse_header(header: list[str], path) -> tuple[int, int]:
    if not header or header[:2] != ["step", "sample"]:
        raise TraceError(f"{path}: line 1: header must start with 'step,sample'")
    h_cols = [c for c in header[2:] if c.startswith("h_")]
    v_cols = [c for c in header[2:] if c.startswith("v_")]
    d_h, d = len(h_cols), len(v_cols)
    if d == 0:
        raise TraceError(f"{path}: line 1: missing columns v_0..v_(d-1)")
    expected = trace_header(d, d_h)
    if header != expected:
        missing = [c for c in expected if c not in header]
        detail = f"missing columns {missing}" if missing else f"expected columns {expected}"
        raise TraceError(f"{path}: line 1: {detail}")
    return d, d_h


def ingest_trace(path) -> TraceSource:
    """Read a recorded ``(h, v)`` trace; rows of one step must be contiguous."""
    batches: list[EditBatch] = []
    step_ids: list[int] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: empty file")
        d, d_h = _parse_header([c.strip() for c in header], path)
        width = 2 + d + d_h
        current: Optional[int] = None
        cols: list[np.ndarray] = []

        def flush():
            block = np.array(cols)
            batches.append(EditBatch(h=block[:, :d_h].T.copy(), v_raw=block[:, d_h:].T.copy()))

        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise TraceError(f"{path}: line {line_no}: expected {width} fields, got {len(row)}")
            try:
                step = int(row[0])
                values = np.array([float(x) for x in row[2:]])
            except ValueError as exc:
                raise TraceError(f"{path}: line {line_no}: bad value ({exc})") from None
            if not np.all(np.isfinite(values)):
                raise TraceError(f"{path}: line {line_no}: non-finite value")
            if current is None or step != current:
                if current is not None:
                    if step < current:
                        raise TraceError(
                            f"{path}: line {line_no}: step id {step} follows {current} "
                            "(steps must be increasing and contiguous)"
                        )
                    flush()
                current = step
                cols = []
                step_ids.append(step)
            cols.append(values)
        if current is None:
            raise TraceError(f"{path}: trace has no rows")
        flush()
    return TraceSource(batches, step_ids)
