"""Sliding-window DWT features.

Each window of a (preprocessed) trace is decomposed channel by channel with a
multi-level discrete wavelet transform; the final approximation coefficients
of all channels are concatenated into one feature vector.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from .trace import CounterTrace, window_rows

SQRT2 = math.sqrt(2.0)

# Daubechies-3 low-pass filter in closed form; decomposition taps are the
# reconstruction taps reversed
_R10 = math.sqrt(10.0)
_S = math.sqrt(5.0 + 2.0 * _R10)
DB3_REC_LO = np.array([
    1.0 + _R10 + _S,
    5.0 + _R10 + 3.0 * _S,
    10.0 - 2.0 * _R10 + 2.0 * _S,
    10.0 - 2.0 * _R10 - 2.0 * _S,
    5.0 + _R10 - 3.0 * _S,
    1.0 + _R10 - _S,
]) / (16.0 * SQRT2)
DB3_DEC_LO = DB3_REC_LO[::-1].copy()
HAAR_DEC_LO = np.array([1.0 / SQRT2, 1.0 / SQRT2])


class Wavelet(str, enum.Enum):
    Db3 = "Db3"
    Haar = "Haar"

    @property
    def dec_lo(self) -> np.ndarray:
        return DB3_DEC_LO if self is Wavelet.Db3 else HAAR_DEC_LO

    @property
    def dec_hi(self) -> np.ndarray:
        lo = self.dec_lo
        # quadrature mirror: g[k] = (-1)^(k+1) h[L-1-k]
        return np.array([(-1) ** (k + 1) * lo[len(lo) - 1 - k] for k in range(len(lo))])


def _analysis_step(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, mode: str):
    n, flen = len(x), len(lo)
    if mode == "symmetric":
        # half-sample symmetric extension, output length floor((n + L - 1) / 2);
        # coefficient k = sum_j h[j] * x~[2k + 1 - j]
        ext = np.pad(x, flen - 1, mode="symmetric")
        out_len = (n + flen - 1) // 2
        idx = 2 * np.arange(out_len)[:, None] + 1 + np.arange(flen)[None, :]
        taps = ext[idx]
    elif mode == "periodization":
        if n % 2:
            raise ValueError("periodization needs an even-length signal")
        out_len = n // 2
        shift = flen // 2 - 1
        idx = 2 * np.arange(out_len)[:, None] + 2 - flen + shift + np.arange(flen)[None, :]
        taps = x[idx % n]
    else:
        raise ValueError(f"unknown boundary mode {mode!r}")
    return taps @ lo[::-1], taps @ hi[::-1]


def dwt_1d(signal, wavelet: Wavelet | str = Wavelet.Db3, levels: int = 3,
           mode: str = "symmetric"):
    """Pyramid decomposition; returns ``(approx, [detail_1, ..., detail_levels])``.

    ``detail_1`` is the finest level.
    """
    wavelet = Wavelet(wavelet)
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("dwt_1d expects a 1-D signal")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    lo, hi = wavelet.dec_lo, wavelet.dec_hi
    details = []
    for level in range(levels):
        if len(x) < len(lo) and not (wavelet is Wavelet.Haar and len(x) >= 2):
            raise ValueError(
                f"signal of length {len(x)} too short for level {level + 1} with {wavelet.value}")
        x, d = _analysis_step(x, lo, hi, mode)
        details.append(d)
    return x, details


@functools.lru_cache(maxsize=32)
def approx_operator(n: int, wavelet: Wavelet, levels: int, mode: str = "symmetric") -> np.ndarray:
    """Matrix ``A`` with ``A @ x`` equal to the level-``levels`` approximation of ``x``."""
    eye = np.eye(n)
    cols = [dwt_1d(eye[i], wavelet, levels, mode)[0] for i in range(n)]
    op = np.stack(cols, axis=1)
    op.setflags(write=False)
    return op


def min_window_samples(wavelet: Wavelet, levels: int) -> int:
    return len(Wavelet(wavelet).dec_lo) * 2 ** levels


@dataclass(frozen=True)
class FeatureConfig:
    state_window_ms: float = 100.0
    shift_step_ms: float = 50.0
    wavelet: Wavelet = Wavelet.Db3
    levels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "wavelet", Wavelet(self.wavelet))
        if not 50.0 <= self.state_window_ms <= 150.0:
            raise ValueError("state_window_ms must lie in [50, 150]")
        if not 0 < self.shift_step_ms <= self.state_window_ms:
            raise ValueError("shift_step_ms must lie in (0, state_window_ms]")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    def window_samples(self, period_ms: float) -> int:
        n = int(math.floor(self.state_window_ms / period_ms + 1e-9))
        if n < min_window_samples(self.wavelet, self.levels):
            raise ValueError(
                f"{n}-sample window is too short for a {self.levels}-level {self.wavelet.value} DWT")
        return n

    def to_dict(self):
        return {"state_window_ms": self.state_window_ms, "shift_step_ms": self.shift_step_ms,
                "wavelet": self.wavelet.value, "levels": self.levels}


@dataclass(frozen=True, eq=False)
class SegmentFeatureSet:
    config: FeatureConfig
    starts_ms: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.starts_ms)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def extract_features(trace: CounterTrace, cfg: FeatureConfig) -> SegmentFeatureSet:
    n = cfg.window_samples(trace.sample_period_ms)
    op = approx_operator(n, cfg.wavelet, cfg.levels)
    n_coef = op.shape[0]
    dim = n_coef * len(trace.channels)
    if trace.duration_ms + 1e-9 < cfg.state_window_ms:
        return SegmentFeatureSet(cfg, np.zeros(0), np.zeros((0, dim)))
    starts, first, width = window_rows(trace, cfg.state_window_ms, cfg.shift_step_ms)
    x = trace.samples
    # (windows, channels, width), then coefficients (windows, channels, n_coef)
    win = np.lib.stride_tricks.sliding_window_view(x, width, axis=0)[first]
    coeffs = win @ op.T
    return SegmentFeatureSet(cfg, starts, coeffs.reshape(len(starts), dim))


def features_to_csv(fs: SegmentFeatureSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(["start_ms"] + [f"f{i}" for i in range(fs.dim)]) + "\n")
        for s, row in zip(fs.starts_ms.tolist(), fs.vectors.tolist()):
            fh.write(",".join([repr(s)] + [repr(v) for v in row]) + "\n")
