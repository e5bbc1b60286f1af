"""Shared front end: raw trace -> preprocessed trace -> DWT feature vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureConfig, SegmentFeatureSet, extract_features
from .preprocess import PreprocessConfig, fit_preprocess, preprocess
from .trace import CounterTrace


@dataclass(frozen=True, eq=False)
class FrontEnd:
    preprocess: PreprocessConfig
    features: FeatureConfig
    ranges: np.ndarray | None = None
    channels: tuple = ()
    sample_period_ms: float = 1.0

    @classmethod
    def fit(cls, traces, pcfg: PreprocessConfig, fcfg: FeatureConfig) -> "FrontEnd":
        traces = list(traces)
        if not traces:
            raise ValueError("need at least one training trace")
        first = traces[0]
        for t in traces:
            if t.channels != first.channels or t.sample_period_ms != first.sample_period_ms:
                raise ValueError("training traces disagree on channels or sample period")
        ranges = fit_preprocess(traces, pcfg)
        return cls(pcfg, fcfg, ranges, first.channels, first.sample_period_ms)

    def check(self, trace: CounterTrace) -> None:
        if self.channels and tuple(trace.channels) != tuple(self.channels):
            raise ValueError(f"trace channels {trace.channels} do not match the model's {self.channels}")
        if trace.sample_period_ms != self.sample_period_ms:
            raise ValueError(
                f"trace sample period {trace.sample_period_ms} ms does not match the model's "
                f"{self.sample_period_ms} ms")

    def transform(self, trace: CounterTrace) -> SegmentFeatureSet:
        self.check(trace)
        return extract_features(preprocess(trace, self.preprocess, self.ranges), self.features)

    def to_dict(self) -> dict:
        return {"preprocess": self.preprocess.to_dict(), "features": self.features.to_dict(),
                "ranges": self.ranges, "channels": list(self.channels),
                "sample_period_ms": self.sample_period_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "FrontEnd":
        ranges = d.get("ranges")
        return cls(PreprocessConfig(**d["preprocess"]), FeatureConfig(**d["features"]),
                   None if ranges is None else np.asarray(ranges, dtype=np.float64).reshape(2, -1),
                   tuple(d["channels"]), float(d["sample_period_ms"]))
