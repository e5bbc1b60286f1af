"""Prior-work style baseline: per-sample power-transformed counters + one-class SVM.

No wavelet features and no codebook. Each 1 ms sample (or 4 consecutive
samples in temporal mode) is one vector; decisions are pooled into the same
time-to-detection windows the bag-of-words detector reports on.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .bow import DEFAULT_GAMMA_GRID, DEFAULT_NU_GRID, grid_search_ocsvm
from .ocsvm import OneClassSVM, train_ocsvm
from .preprocess import (PowerTransform, apply_boxcox_array, apply_ranges, clip_outliers,
                         fit_boxcox, fit_ranges)
from .report import DetectionReport
from .trace import CounterTrace

TEMPORAL_SPAN = 4


def baseline_features(samples, temporal: bool = False) -> np.ndarray:
    """One vector per sample, or ``TEMPORAL_SPAN`` consecutive samples concatenated (stride 1)."""
    x = samples.samples if isinstance(samples, CounterTrace) else np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (samples, channels) matrix")
    if not temporal:
        return x.copy()
    if len(x) < TEMPORAL_SPAN:
        raise ValueError(f"temporal features need at least {TEMPORAL_SPAN} samples, got {len(x)}")
    win = np.lib.stride_tricks.sliding_window_view(x, TEMPORAL_SPAN, axis=0)
    # (n - 3, channels, 4) -> sample-major concatenation
    return np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(len(win), -1)


@dataclass(frozen=True)
class BaselineConfig:
    temporal: bool = False
    clip_percentile: float = 99.99
    ttd_ms: float = 1500.0
    nu: float | None = None
    gamma: float | None = None
    target_fp: float = 0.2
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    nu_grid: tuple = DEFAULT_NU_GRID
    max_train_vectors: int = 1500
    max_fit_samples: int = 20000
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["gamma_grid"] = list(self.gamma_grid)
        d["nu_grid"] = list(self.nu_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        d = dict(d)
        for k in ("gamma_grid", "nu_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BaselineModel:
    power: PowerTransform
    ranges: np.ndarray
    ocsvm: OneClassSVM
    temporal: bool = False
    clip_percentile: float = 99.99
    ttd_ms: float = 1500.0
    channels: tuple = ()
    sample_period_ms: float = 1.0
    model_id: str = "baseline"
    # windows whose worst -f exceeds this are flagged; 0 means any outlier vector
    threshold: float = 0.0

    kind = "baseline"

    def transform(self, trace: CounterTrace) -> np.ndarray:
        if self.channels and tuple(trace.channels) != tuple(self.channels):
            raise ValueError(f"trace channels {trace.channels} do not match the model's {self.channels}")
        if trace.sample_period_ms != self.sample_period_ms:
            raise ValueError("trace sample period does not match the model's")
        x = clip_outliers(trace, self.clip_percentile).samples
        x = apply_ranges(apply_boxcox_array(self.power, x), self.ranges)
        return baseline_features(x, self.temporal)

    def detect(self, trace, trace_id: str = "") -> DetectionReport:
        return detect_baseline(self, trace, trace_id)

    def recalibrate(self, benign_traces, target_fp: float) -> "BaselineModel":
        from .evaluate import threshold_for_fp
        scores = np.concatenate([self.detect(t).scores for t in benign_traces])
        return replace(self, threshold=threshold_for_fp(scores, target_fp))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "baseline": True, "model_id": self.model_id,
                "power": self.power.to_dict(), "ranges": self.ranges, "ocsvm": self.ocsvm.to_dict(),
                "temporal": self.temporal, "clip_percentile": self.clip_percentile,
                "ttd_ms": self.ttd_ms, "channels": list(self.channels),
                "sample_period_ms": self.sample_period_ms, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineModel":
        pt = PowerTransform(**d["power"])
        return cls(pt, np.asarray(d["ranges"], dtype=np.float64).reshape(2, -1),
                   OneClassSVM.from_dict(d["ocsvm"]), bool(d["temporal"]),
                   float(d["clip_percentile"]), float(d["ttd_ms"]), tuple(d["channels"]),
                   float(d["sample_period_ms"]), d.get("model_id", "baseline"),
                   float(d.get("threshold", 0.0)))


def pool_windows(values: np.ndarray, period_ms: float, ttd_ms: float):
    """Max of per-vector values over consecutive ``ttd_ms`` windows (by vector start time)."""
    n = len(values)
    if n == 0:
        return np.zeros(0), np.zeros(0)
    per = max(int(round(ttd_ms / period_ms)), 1)
    n_win = -(-n // per)
    padded = np.full(n_win * per, -np.inf)
    padded[:n] = values
    return np.arange(n_win) * per * period_ms, padded.reshape(n_win, per).max(1)


def detect_baseline(model: BaselineModel, trace: CounterTrace, trace_id: str = "") -> DetectionReport:
    """A window is flagged when any vector in it is an outlier; its score is the max of -f."""
    x = model.transform(trace)
    f = model.ocsvm.decision_function(x) if len(x) else np.zeros(0)
    starts, worst = pool_windows(-f, trace.sample_period_ms, model.ttd_ms)
    return DetectionReport(trace_id, starts, model.ttd_ms, worst, worst > model.threshold,
                           model.model_id)


def _subsample(x: np.ndarray, k: int, rng) -> np.ndarray:
    if len(x) <= k:
        return x
    return x[np.sort(rng.choice(len(x), k, replace=False))]


def train_baseline(train_traces, validation_traces, cfg: BaselineConfig = BaselineConfig()) -> BaselineModel:
    train_traces = list(train_traces)
    if not train_traces:
        raise ValueError("need at least one benign training trace")
    first = train_traces[0]
    rng = np.random.default_rng([cfg.seed, 5])
    clipped = [clip_outliers(t, cfg.clip_percentile).samples for t in train_traces]
    pooled = np.concatenate(clipped)
    power = fit_boxcox(_subsample(pooled, cfg.max_fit_samples, rng))
    ranges = fit_ranges(apply_boxcox_array(power, pooled))

    def vectors(samples_list, k):
        out = [baseline_features(apply_ranges(apply_boxcox_array(power, s), ranges), cfg.temporal)
               for s in samples_list]
        return _subsample(np.concatenate(out), k, rng)

    x_train = vectors(clipped, cfg.max_train_vectors)
    nu, gamma = cfg.nu, cfg.gamma
    if nu is None or gamma is None:
        val = None
        if validation_traces:
            val = vectors([clip_outliers(t, cfg.clip_percentile).samples for t in validation_traces],
                          cfg.max_train_vectors)
        nu, gamma = grid_search_ocsvm(
            x_train, cfg.target_fp,
            (gamma,) if gamma is not None else cfg.gamma_grid, cfg.seed,
            (nu,) if nu is not None else cfg.nu_grid, validation=val)
    svm = train_ocsvm(x_train, nu, gamma, cfg.seed)
    return BaselineModel(power, ranges, svm, cfg.temporal, cfg.clip_percentile, cfg.ttd_ms,
                         first.channels, first.sample_period_ms)
