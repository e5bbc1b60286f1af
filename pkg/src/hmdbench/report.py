"""Per-window detector output shared by every detector and the evaluation harness."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Scores and alarm flags over non-overlapping windows of one trace.

    ``scores`` are anomaly scores (higher means more anomalous). ``onsets_ms``
    holds, for every window, the start of the window where the evidence behind
    its alarm began; detectors that decide each window on its own set it to the
    window start.
    """

    trace_id: str
    window_starts_ms: np.ndarray
    window_len_ms: float
    scores: np.ndarray
    flagged: np.ndarray
    model_id: str = ""
    onsets_ms: np.ndarray | None = None
    notes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        starts = np.asarray(self.window_starts_ms, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        flagged = np.asarray(self.flagged, dtype=bool)
        if not (len(starts) == len(scores) == len(flagged)):
            raise ValueError("window starts, scores and flags must align")
        if len(starts) > 1 and np.any(np.diff(starts) < self.window_len_ms - 1e-9):
            raise ValueError("report windows overlap")
        onsets = starts.copy() if self.onsets_ms is None else np.asarray(self.onsets_ms, dtype=np.float64)
        if len(onsets) != len(starts):
            raise ValueError("onsets must align with windows")
        object.__setattr__(self, "window_starts_ms", starts)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "flagged", flagged)
        object.__setattr__(self, "onsets_ms", onsets)
        object.__setattr__(self, "window_len_ms", float(self.window_len_ms))

    def __len__(self):
        return len(self.window_starts_ms)

    @property
    def any_alarm(self) -> bool:
        return bool(self.flagged.any())

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.mean()) if len(self) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window_start_ms", "window_len_ms", "score", "flagged", "onset_ms"])
        for s, sc, f, o in zip(self.window_starts_ms.tolist(), self.scores.tolist(),
                               self.flagged.tolist(), self.onsets_ms.tolist()):
            w.writerow([repr(s), repr(self.window_len_ms), repr(sc), int(f), repr(o)])
        return buf.getvalue()
