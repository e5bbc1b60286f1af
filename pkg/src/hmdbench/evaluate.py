"""Evaluation harness: TP/FP accounting, ROC/AUC, operating ranges, folds, latency, PCA."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .report import DetectionReport

DELAY_ORDER = {"H": 0, "M": 1, "Z": 2}


# --- window accounting -----------------------------------------------------

def payload_window_mask(report: DetectionReport, labels) -> np.ndarray:
    """Windows overlapping any labeled interval."""
    starts = report.window_starts_ms
    ends = starts + report.window_len_ms
    mask = np.zeros(len(starts), dtype=bool)
    for iv in labels:
        mask |= (starts < iv.end_ms) & (ends > iv.start_ms)
    return mask


def window_counts(report: DetectionReport, labels):
    """``(flagged, total)`` over the windows that count for this trace.

    Malicious traces count only payload-overlapping windows; benign traces
    count every window.
    """
    if labels:
        mask = payload_window_mask(report, labels)
        return int(report.flagged[mask].sum()), int(mask.sum())
    return int(report.flagged.sum()), len(report)


def score_tp_fp(report: DetectionReport, labels):
    """``(tp_rate, fp_rate)``; the rate the trace cannot inform is NaN."""
    flagged, total = window_counts(report, labels)
    rate = flagged / total if total else math.nan
    return (rate, math.nan) if labels else (math.nan, rate)


def window_scores(report: DetectionReport, labels) -> np.ndarray:
    """Scores of the windows used for TP (malicious) or FP (benign) accounting."""
    if labels:
        return report.scores[payload_window_mask(report, labels)]
    return report.scores


# --- ROC ---------------------------------------------------------------------

def roc_auc(scores_benign, scores_malicious, higher_is_anomalous: bool = True):
    """ROC points ``(fpr, tpr, threshold)`` over every distinct score, and trapezoid AUC.

    A window is called malicious when its score is at or above the threshold
    (at or below when ``higher_is_anomalous`` is False). Tied scores move
    both rates together, so they contribute half.
    """
    b = np.asarray(scores_benign, dtype=np.float64).ravel()
    m = np.asarray(scores_malicious, dtype=np.float64).ravel()
    if len(b) == 0 or len(m) == 0:
        raise ValueError("both score sets must be non-empty")
    if not higher_is_anomalous:
        b, m = -b, -m
    values = np.unique(np.concatenate([b, m]))[::-1]
    bs, ms = np.sort(b), np.sort(m)
    fp = len(b) - np.searchsorted(bs, values, side="left")
    tp = len(m) - np.searchsorted(ms, values, side="left")
    fpr = np.concatenate([[0.0], fp / len(b)])
    tpr = np.concatenate([[0.0], tp / len(m)])
    thr = np.concatenate([[math.inf], values])
    if not higher_is_anomalous:
        thr = -thr
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return np.stack([fpr, tpr, thr], axis=1), auc


def roc_to_csv(points: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr", "threshold"])
    for f, t, th in points.tolist():
        w.writerow([repr(f), repr(t), repr(th)])
    return buf.getvalue()


def threshold_for_fp(scores_benign, fp_target: float) -> float:
    """Smallest threshold ``t`` with ``mean(score > t) <= fp_target`` on benign scores."""
    b = np.sort(np.asarray(scores_benign, dtype=np.float64).ravel())
    if len(b) == 0:
        raise ValueError("no benign scores")
    cand = np.concatenate([[-math.inf], np.unique(b)])
    rates = (len(b) - np.searchsorted(b, cand, side="right")) / len(b)
    return float(cand[np.flatnonzero(rates <= fp_target)[0]])


# --- operating range ----------------------------------------------------------

@dataclass(frozen=True)
class OperatingRangeCell:
    config_id: str
    archetype: str
    detection_rate: float
    fp_rate_at_threshold: float

    def __post_init__(self):
        for v in (self.detection_rate, self.fp_rate_at_threshold):
            if not (0.0 <= v <= 1.0):
                raise ValueError("rates must lie in [0, 1]")


def config_sort_key(config_id: str, kind_order=None):
    """Kind (grid order), then size ascending, then delay H -> M -> Z."""
    kind, size, delay = config_id.rsplit("-", 2)
    order = list(kind_order or [])
    rank = order.index(kind) if kind in order else len(order)
    return (rank, kind, int(size.lstrip("s")), DELAY_ORDER.get(delay, 9))


def operating_range(results, kind_order=None) -> list[OperatingRangeCell]:
    """Cells from per-trace results.

    ``results`` holds dicts with ``archetype``, ``config_id`` (None for benign),
    ``flagged`` and ``total`` window counts. Detection rate pools flagged over
    countable payload windows across the cell's traces; the FP rate pools the
    archetype's benign traces.
    """
    fp = {}
    cells = {}
    for r in results:
        key = r["archetype"]
        if r.get("config_id") is None:
            f, t = fp.get(key, (0, 0))
            fp[key] = (f + r["flagged"], t + r["total"])
        else:
            ck = (r["config_id"], key)
            f, t = cells.get(ck, (0, 0))
            cells[ck] = (f + r["flagged"], t + r["total"])
    out = []
    for (cid, arch), (f, t) in cells.items():
        bf, bt = fp.get(arch, (0, 0))
        out.append(OperatingRangeCell(cid, arch, f / t if t else 0.0, bf / bt if bt else 0.0))
    out.sort(key=lambda c: (config_sort_key(c.config_id, kind_order), c.archetype))
    return out


def operating_range_to_csv(cells) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config_id", "archetype", "detection_rate", "fp_rate_at_threshold"])
    for c in cells:
        w.writerow([c.config_id, c.archetype, repr(c.detection_rate), repr(c.fp_rate_at_threshold)])
    return buf.getvalue()


def _ramp(v: float) -> str:
    # green (0) -> yellow -> red (1)
    v = min(max(v, 0.0), 1.0)
    r = int(round(255 * min(1.0, 2 * v)))
    g = int(round(255 * min(1.0, 2 * (1 - v))))
    return f"#{r:02x}{g:02x}00"


def heatmap_svg(cells, title: str = "detection rate") -> str:
    """Configs as rows (size increasing downwards), archetypes as columns."""
    rows = list(dict.fromkeys(c.config_id for c in cells))
    cols = sorted({c.archetype for c in cells})
    value = {(c.config_id, c.archetype): c.detection_rate for c in cells}
    cw, ch, left, top = 110, 14, 150, 40
    width = left + cw * len(cols) + 10
    height = top + ch * len(rows) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="monospace" font-size="10">',
           f'<text x="4" y="14" font-size="12">{title}</text>']
    for j, a in enumerate(cols):
        out.append(f'<text x="{left + j * cw + 4}" y="{top - 6}">{a}</text>')
    for i, r in enumerate(rows):
        y = top + i * ch
        out.append(f'<text x="4" y="{y + 11}">{r}</text>')
        for j, a in enumerate(cols):
            v = value.get((r, a))
            fill = "#cccccc" if v is None else _ramp(v)
            label = "" if v is None else f"{v:.2f}"
            x = left + j * cw
            out.append(f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" fill="{fill}"/>')
            out.append(f'<text x="{x + 4}" y="{y + 10}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --- folds -----------------------------------------------------------------

def kfold(items, k: int = 10, seed: int = 0) -> list[list]:
    """Seeded shuffle of ``items`` (e.g. trace ids) into ``k`` near-equal disjoint folds."""
    items = list(items)
    n = len(items)
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng([seed, 19]).permutation(n)
    return [[items[i] for i in sorted(perm[f::k].tolist())] for f in range(k)]


# --- time to detection ------------------------------------------------------

def time_to_detection(report: DetectionReport, labels) -> list:
    """Latency per interval: first attributable flagged window start - interval start.

    An alarm is attributed to an interval when the evidence behind it (the
    report's onset) began inside the interval. Undetected intervals get None.
    """
    out = []
    flagged = report.flagged
    for iv in labels:
        cand = flagged & (report.onsets_ms >= iv.start_ms) & (report.onsets_ms < iv.end_ms)
        idx = np.flatnonzero(cand)
        out.append(None if len(idx) == 0 else float(report.window_starts_ms[idx[0]] - iv.start_ms))
    return out


# --- PCA -------------------------------------------------------------------

def pca_project(vectors, dims: int = 2):
    """``(projections, explained_fraction, directions)`` from the covariance eigendecomposition.

    Each direction is signed so its largest-magnitude component is positive.
    Zero-variance directions come back as zero vectors.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or len(x) <= dims:
        raise ValueError("need more rows than projection dimensions")
    xc = x - x.mean(0)
    cov = xc.T @ xc / (len(x) - 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, v = np.maximum(w[order], 0.0), v[:, order]
    total = w.sum()
    dirs = v[:, :dims].copy()
    for j in range(dirs.shape[1]):
        if w[j] <= 1e-12 * max(total, 1e-300):
            dirs[:, j] = 0.0
            continue
        if dirs[np.argmax(np.abs(dirs[:, j])), j] < 0:
            dirs[:, j] = -dirs[:, j]
    explained = float(w[:dims].sum() / total) if total > 0 else 0.0
    return xc @ dirs, explained, dirs.T


def model_size(path) -> int:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file {p} not found")
    return p.stat().st_size
