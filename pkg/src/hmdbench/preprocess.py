"""Trace conditioning: clip -> smooth -> normalize, plus Box-Cox for the baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .trace import CounterTrace


@dataclass(frozen=True)
class PreprocessConfig:
    clip_percentile: float = 99.99
    smooth_window_ms: float = 100.0
    normalize: bool = True

    def __post_init__(self):
        if not 0 < self.clip_percentile <= 100:
            raise ValueError("clip_percentile must lie in (0, 100]")
        if not self.smooth_window_ms > 0:
            raise ValueError("smooth_window_ms must be positive")

    def to_dict(self):
        return asdict(self)


def nearest_rank(values: np.ndarray, p: float) -> np.ndarray:
    """Nearest-rank percentile along axis 0: the ceil(p/100 * n)-th order statistic."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    k = min(n, max(1, math.ceil(p / 100.0 * n - 1e-12)))
    return np.partition(values, k - 1, axis=0)[k - 1]


def clip_outliers(trace: CounterTrace, p: float = 99.99) -> CounterTrace:
    if trace.n_samples == 0:
        raise ValueError("cannot clip an empty trace")
    cutoff = nearest_rank(trace.samples, p)
    return trace.replace(samples=np.minimum(trace.samples, cutoff[None, :]))


def moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average along axis 0, averaging only the in-range samples at the edges."""
    x = np.asarray(x, dtype=np.float64)
    if width <= 1:
        return x.copy()
    if width % 2 == 0:
        width += 1
    half = width // 2
    n = x.shape[0]
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    count = (hi - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (csum[hi] - csum[lo]) / count


def smooth(trace: CounterTrace, window_ms: float = 100.0) -> CounterTrace:
    if window_ms < trace.sample_period_ms:
        raise ValueError("smoothing window shorter than one sample period")
    width = int(math.floor(window_ms / trace.sample_period_ms + 1e-9))
    # cumulative sums can leave -1e-13 style residue on zero runs
    out = np.maximum(moving_average(trace.samples, width), 0.0)
    return trace.replace(samples=out)


def fit_ranges(samples: np.ndarray) -> np.ndarray:
    """Per-channel ``[min, max]`` rows, shape ``(2, channels)``."""
    samples = np.asarray(samples, dtype=np.float64)
    return np.stack([samples.min(axis=0), samples.max(axis=0)])


def apply_ranges(samples: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    lo, hi = np.asarray(ranges)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (np.asarray(samples) - lo) / safe
    out[:, span <= 0] = 0.0
    return np.clip(out, 0.0, 1.0)


def normalize01(trace: CounterTrace, ranges: np.ndarray | None = None):
    """Scale each channel to [0, 1]; returns ``(trace, ranges)``.

    Pass the ``ranges`` fitted on training data to scale a test trace the same
    way; values outside the fitted range are clamped.
    """
    if trace.n_samples == 0:
        raise ValueError("cannot normalize an empty trace")
    if ranges is None:
        ranges = fit_ranges(trace.samples)
    return trace.replace(samples=apply_ranges(trace.samples, ranges)), np.asarray(ranges)


def condition(trace: CounterTrace, cfg: PreprocessConfig) -> CounterTrace:
    """Clip and smooth (the part of the pipeline fitted per trace)."""
    out = clip_outliers(trace, cfg.clip_percentile)
    return smooth(out, cfg.smooth_window_ms)


def fit_preprocess(traces, cfg: PreprocessConfig) -> np.ndarray | None:
    """Normalization ranges pooled over the conditioned training traces."""
    if not cfg.normalize:
        return None
    conditioned = [condition(t, cfg).samples for t in traces]
    lo = np.min([c.min(axis=0) for c in conditioned], axis=0)
    hi = np.max([c.max(axis=0) for c in conditioned], axis=0)
    return np.stack([lo, hi])


def preprocess(trace: CounterTrace, cfg: PreprocessConfig, ranges=None) -> CounterTrace:
    out = condition(trace, cfg)
    if cfg.normalize:
        out, _ = normalize01(out, ranges)
    return out


# --- Box-Cox ---------------------------------------------------------------

LAMBDA_GRID = np.round(np.arange(-200, 201) * 0.01, 2)


@dataclass(frozen=True)
class PowerTransform:
    """Per-channel Box-Cox parameters (``lam`` and ``shift`` are equal-length tuples)."""

    lam: tuple
    shift: tuple

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in np.atleast_1d(self.lam)))
        object.__setattr__(self, "shift", tuple(float(v) for v in np.atleast_1d(self.shift)))
        if len(self.lam) != len(self.shift) or min(self.shift) < 0:
            raise ValueError("invalid power transform")

    def to_dict(self):
        return {"lam": list(self.lam), "shift": list(self.shift)}


def boxcox(x, lam: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if lam == 0:
        return np.log(x)
    return np.expm1(lam * np.log(x)) / lam


def boxcox_loglik(x, lam: float) -> float:
    """Profile log-likelihood of ``lam`` for positive data ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = boxcox(x, lam)
    var = y.var()
    n = x.size
    if var <= 0:
        return -np.inf if lam else np.inf
    return -0.5 * n * math.log(var) + (lam - 1.0) * float(np.log(x).sum())


def fit_boxcox_1d(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot fit Box-Cox on empty input")
    if np.any(x < 0):
        raise ValueError("Box-Cox input must be non-negative")
    shift = 1.0 if np.any(x == 0) else 0.0
    x = x + shift
    if np.all(x == x[0]):
        return 1.0, shift
    logx = np.log(x)
    sum_log = float(logx.sum())
    best, best_ll = 1.0, -np.inf
    for lam in LAMBDA_GRID:
        y = logx if lam == 0 else np.expm1(lam * logx) / lam
        var = y.var()
        if not var > 0 or not np.isfinite(var):
            continue
        ll = -0.5 * x.size * math.log(var) + (lam - 1.0) * sum_log
        if ll > best_ll:
            best, best_ll = float(lam), ll
    return best, shift


def fit_boxcox(values) -> PowerTransform:
    """Grid-search lambda in [-2, 2] (step 0.01) per column of ``values``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot fit Box-Cox on empty input")
    if v.ndim == 1:
        v = v[:, None]
    lams, shifts = zip(*(fit_boxcox_1d(v[:, j]) for j in range(v.shape[1])))
    return PowerTransform(lams, shifts)


def apply_boxcox_array(pt: PowerTransform, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[1] != len(pt.lam):
        raise ValueError("channel count does not match the power transform")
    shifted = x + np.asarray(pt.shift)[None, :]
    if np.any(shifted <= 0):
        raise ValueError("value + shift must be positive for Box-Cox")
    out = np.empty_like(shifted)
    for j, lam in enumerate(pt.lam):
        out[:, j] = boxcox(shifted[:, j], lam)
    return out[:, 0] if squeeze else out


def apply_boxcox(pt: PowerTransform, trace: CounterTrace) -> np.ndarray:
    """Box-Cox each channel of ``trace``; returns the transformed sample matrix.

    Transformed values can be negative, so they are returned as a plain
    array rather than a ``CounterTrace``.
    """
    return apply_boxcox_array(pt, trace.samples)
