"""Labeled multi-channel performance-counter traces and their on-disk format.

A trace is stored as a CSV file (``t_ms`` plus one column per counter) and an
optional ``<name>.labels.json`` sidecar holding the app id and the payload
intervals.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_CHANNELS = (
    "branch_mispred",
    "load_store",
    "integer_ops",
    "indirect_branch",
    "imm_branch",
    "inst_retired",
)


class TraceFormatError(ValueError):
    """Raised when a trace file or trace object violates the format."""


class PayloadKind(str, enum.Enum):
    SmsSteal = "SmsSteal"
    ContactSteal = "ContactSteal"
    FileSteal = "FileSteal"
    IdGpsSteal = "IdGpsSteal"
    ClickFraud = "ClickFraud"
    Ddos = "Ddos"
    PasswordCracker = "PasswordCracker"


@dataclass(frozen=True)
class PayloadInterval:
    start_ms: float
    end_ms: float
    payload_kind: PayloadKind
    config_id: str = ""

    def __post_init__(self):
        if not self.end_ms > self.start_ms:
            raise TraceFormatError(
                f"interval end {self.end_ms} must exceed start {self.start_ms}")
        object.__setattr__(self, "payload_kind", PayloadKind(self.payload_kind))

    def overlaps(self, start_ms: float, end_ms: float) -> bool:
        return start_ms < self.end_ms and end_ms > self.start_ms


@dataclass(frozen=True, eq=False)
class CounterTrace:
    """Uniformly sampled counter deltas, one row per sample period."""

    samples: np.ndarray
    sample_period_ms: float = 1.0
    channels: tuple = DEFAULT_CHANNELS
    app_id: str = ""
    label_intervals: tuple = field(default_factory=tuple)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise TraceFormatError("samples must be a 2-D matrix")
        channels = tuple(self.channels)
        if samples.shape[1] != len(channels):
            raise TraceFormatError(
                f"rows have {samples.shape[1]} entries, expected {len(channels)}")
        if not self.sample_period_ms > 0:
            raise TraceFormatError("sample_period_ms must be positive")
        if samples.size and not np.all(np.isfinite(samples)):
            raise TraceFormatError("samples must be finite")
        bad = np.argwhere(samples < 0)
        if len(bad):
            raise TraceFormatError(f"negative counter value at row {int(bad[0, 0])}")
        intervals = tuple(sorted(self.label_intervals, key=lambda iv: iv.start_ms))
        span = samples.shape[0] * self.sample_period_ms
        for i, iv in enumerate(intervals):
            if iv.start_ms < 0 or iv.end_ms > span:
                raise TraceFormatError(
                    f"interval {i} [{iv.start_ms}, {iv.end_ms}) outside [0, {span})")
            if i and iv.start_ms < intervals[i - 1].end_ms:
                raise TraceFormatError(f"interval {i} overlaps its predecessor")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "label_intervals", intervals)
        object.__setattr__(self, "sample_period_ms", float(self.sample_period_ms))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_ms(self) -> float:
        return self.n_samples * self.sample_period_ms

    @property
    def is_benign(self) -> bool:
        return not self.label_intervals

    def replace(self, **changes) -> "CounterTrace":
        kwargs = dict(samples=self.samples, sample_period_ms=self.sample_period_ms,
                      channels=self.channels, app_id=self.app_id,
                      label_intervals=self.label_intervals)
        kwargs.update(changes)
        return CounterTrace(**kwargs)

    def __eq__(self, other):
        if not isinstance(other, CounterTrace):
            return NotImplemented
        return (self.sample_period_ms == other.sample_period_ms
                and self.channels == other.channels
                and self.app_id == other.app_id
                and self.label_intervals == other.label_intervals
                and self.samples.shape == other.samples.shape
                and np.array_equal(self.samples, other.samples))

    __hash__ = None


def labels_path(path) -> Path:
    path = Path(path)
    stem = path.name[:-4] if path.name.endswith(".csv") else path.name
    return path.with_name(stem + ".labels.json")


def _fmt(x: float) -> str:
    # repr() is the shortest string that parses back to the same double
    return repr(float(x))


def write_trace(trace: CounterTrace, path) -> None:
    """Write ``trace`` as CSV (+ label sidecar when it has intervals).

    Output bytes depend only on the trace contents. Files are written to a
    temporary name and renamed into place.
    """
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(("t_ms",) + trace.channels) + "\n")
    period = trace.sample_period_ms
    for i, row in enumerate(trace.samples.tolist()):
        buf.write(_fmt(i * period))
        for v in row:
            buf.write(",")
            buf.write(_fmt(v))
        buf.write("\n")
    _atomic_write(path, buf.getvalue())

    sidecar = labels_path(path)
    if trace.label_intervals:
        doc = {
            "app_id": trace.app_id,
            "intervals": [
                {"start_ms": iv.start_ms, "end_ms": iv.end_ms,
                 "payload_kind": iv.payload_kind.value, "config_id": iv.config_id}
                for iv in trace.label_intervals
            ],
        }
        _atomic_write(sidecar, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    elif sidecar.exists():
        sidecar.unlink()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def read_trace(path, app_id: str | None = None) -> CounterTrace:
    """Parse a trace CSV and its optional label sidecar.

    Unlabeled traces carry no sidecar, so their app id comes from ``app_id``
    (the suite manifest records it). Errors name the offending row.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: empty file") from None
        if not header or header[0].strip() != "t_ms" or len(header) < 2:
            raise TraceFormatError(f"{path}: malformed header, expected 't_ms,<channels>'")
        channels = tuple(h.strip() for h in header[1:])
        if any(not c for c in channels) or len(set(channels)) != len(channels):
            raise TraceFormatError(f"{path}: malformed header, empty or duplicate channel")
        times, rows = [], []
        for lineno, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise TraceFormatError(
                    f"{path}: row {lineno} has {len(rec) - 1} values, expected {len(channels)}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                raise TraceFormatError(f"{path}: row {lineno} has a non-numeric value") from None
            if any(v < 0 for v in vals[1:]):
                raise TraceFormatError(f"{path}: row {lineno} has a negative counter value")
            times.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise TraceFormatError(f"{path}: no samples")
    if times[0] != 0.0:
        raise TraceFormatError(f"{path}: row 1 timestamp must be 0")
    period = times[1] - times[0] if len(times) > 1 else 1.0
    if not period > 0:
        raise TraceFormatError(f"{path}: row 2 timestamp is not increasing")
    t = np.asarray(times)
    expected = np.arange(len(t)) * period
    bad = np.flatnonzero(np.abs(t - expected) > 1e-9 * max(1.0, float(expected[-1])))
    if len(bad):
        raise TraceFormatError(
            f"{path}: row {int(bad[0]) + 1} timestamp breaks the uniform {period} ms step")

    intervals: list[PayloadInterval] = []
    sidecar = labels_path(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            doc = json.load(fh)
        app_id = doc.get("app_id", app_id)
        for i, rec in enumerate(doc.get("intervals", [])):
            try:
                intervals.append(PayloadInterval(
                    float(rec["start_ms"]), float(rec["end_ms"]),
                    PayloadKind(rec["payload_kind"]), str(rec.get("config_id", ""))))
            except (KeyError, ValueError) as exc:
                raise TraceFormatError(f"{sidecar}: interval record {i}: {exc}") from None
    try:
        return CounterTrace(np.asarray(rows), period, channels, app_id or "", tuple(intervals))
    except TraceFormatError as exc:
        raise TraceFormatError(f"{path}: {exc}") from None


def window_count(n_samples: int, period_ms: float, window_ms: float, step_ms: float) -> int:
    span = n_samples * period_ms
    if span + 1e-9 < window_ms:
        return 0
    return int(np.floor((span - window_ms) / step_ms + 1e-9)) + 1


def window_rows(trace: CounterTrace, window_ms: float, step_ms: float):
    """Start times and first-row indices of the full windows in ``trace``."""
    period = trace.sample_period_ms
    if window_ms < period or step_ms < period:
        raise ValueError("window and step must be at least one sample period")
    width = int(np.floor(window_ms / period + 1e-9))
    count = window_count(trace.n_samples, period, window_ms, step_ms)
    starts_ms = np.arange(count) * float(step_ms)
    first = np.floor(starts_ms / period + 1e-9).astype(np.int64)
    keep = first + width <= trace.n_samples
    return starts_ms[keep], first[keep], width


def slice_windows(trace: CounterTrace, window_ms: float, step_ms: float):
    """List of ``(start_ms, submatrix)`` for every full sliding window."""
    starts, first, width = window_rows(trace, window_ms, step_ms)
    return [(float(s), trace.samples[f:f + width]) for s, f in zip(starts, first)]
