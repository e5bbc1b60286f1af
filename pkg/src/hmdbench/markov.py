"""First-order Markov-chain detector over codebook state sequences.

Training estimates transition probabilities from benign sequences by pair
counting. Detection tracks the joint probability of the most recent
``consecutive_required`` states, smooths that curve with a trailing moving
average, and raises an alarm once ``consecutive_required`` consecutive
smoothed values fall below the threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .codebook import Codebook, assign_states, build_codebook, select_m_bic
from .pipeline import FrontEnd
from .report import DetectionReport


@dataclass(frozen=True)
class MarkovConfig:
    self_transition: float | None = 0.2
    prob_floor: float = 1e-4
    consecutive_required: int = 5
    prob_smooth_window: int = 5
    # "first": initial distribution from the first symbol of each sequence;
    # "all": from every position, i.e. every position may open a scoring window
    initial: str = "first"

    def __post_init__(self):
        if self.self_transition is not None and not 0 < self.self_transition < 1:
            raise ValueError("self_transition must lie in (0, 1)")
        if self.prob_floor < 0:
            raise ValueError("prob_floor must be non-negative")
        if self.consecutive_required < 1 or self.prob_smooth_window < 1:
            raise ValueError("consecutive_required and prob_smooth_window must be >= 1")
        if self.initial not in ("first", "all"):
            raise ValueError("initial must be 'first' or 'all'")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MarkovModel:
    P: np.ndarray
    Q: np.ndarray
    config: MarkovConfig = MarkovConfig()
    threshold: float = -math.inf
    codebook: Codebook | None = None

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        Q = np.array(self.Q, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or Q.shape != (P.shape[0],):
            raise ValueError("P must be square and Q must match its size")
        if np.any(np.abs(P.sum(1) - 1) > 1e-9) or abs(Q.sum() - 1) > 1e-9:
            raise ValueError("P rows and Q must each sum to 1")
        if self.codebook is not None and self.codebook.n_symbols != len(Q):
            raise ValueError("codebook size does not match the transition matrix")
        P.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_logP", np.log(P))
            object.__setattr__(self, "_logQ", np.log(Q))

    @property
    def n_states(self) -> int:
        return len(self.Q)

    def with_threshold(self, threshold: float) -> "MarkovModel":
        return replace(self, threshold=float(threshold))

    def to_dict(self) -> dict:
        return {"P": self.P, "Q": self.Q, "config": self.config.to_dict(),
                "threshold": self.threshold,
                "codebook": None if self.codebook is None else self.codebook.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovModel":
        n = int(np.asarray(d["Q"]).size)
        cb = d.get("codebook")
        return cls(np.asarray(d["P"], dtype=np.float64).reshape(n, n), np.asarray(d["Q"]),
                   MarkovConfig(**d["config"]), float(d["threshold"]),
                   None if cb is None else Codebook.from_dict(cb))


def floor_simplex(p: np.ndarray, floor: float, total: float = 1.0) -> np.ndarray:
    """Rescale ``p`` to sum to ``total`` with every entry at least ``floor``.

    Entries that would fall under the floor are pinned to it and the rest
    share the remaining mass in proportion to their values.
    """
    p = np.asarray(p, dtype=np.float64)
    n = len(p)
    if n == 0:
        return p.copy()
    if floor * n > total + 1e-15:
        raise ValueError("floor too large for the simplex")
    if p.sum() <= 0:
        return np.full(n, total / n)
    pinned = np.zeros(n, dtype=bool)
    out = p.copy()
    for _ in range(n + 1):
        free_mass = total - floor * pinned.sum()
        s = p[~pinned].sum()
        if s <= 0:
            out[~pinned] = free_mass / max((~pinned).sum(), 1)
        else:
            out[~pinned] = (p[~pinned] / s) * free_mass
        out[pinned] = floor
        low = (~pinned) & (out < floor)
        if not low.any():
            break
        pinned |= low
    return out


def transition_counts(state_seqs, n_states: int) -> np.ndarray:
    counts = np.zeros((n_states, n_states))
    for seq in state_seqs:
        s = np.asarray(seq, dtype=np.int64)
        if len(s) > 1:
            np.add.at(counts, (s[:-1], s[1:]), 1.0)
    return counts


def train_markov(state_seqs, n_states: int, cfg: MarkovConfig = MarkovConfig()) -> MarkovModel:
    """Maximum-likelihood transition matrix, then floor, then self-transition heuristic."""
    seqs = [np.asarray(s, dtype=np.int64) for s in state_seqs if len(s)]
    if not seqs:
        raise ValueError("no state sequences to train on")
    for s in seqs:
        if s.min() < 0 or s.max() >= n_states:
            raise ValueError(f"state outside 0..{n_states - 1}")
    counts = transition_counts(seqs, n_states)
    if counts.sum() == 0:
        raise ValueError("no transitions observed")
    rows = counts.sum(1)
    P = np.where(rows[:, None] > 0, counts / np.where(rows > 0, rows, 1)[:, None], 1.0 / n_states)
    if cfg.initial == "first":
        q_counts = np.bincount([int(s[0]) for s in seqs], minlength=n_states).astype(float)
    else:
        q_counts = np.bincount(np.concatenate(seqs), minlength=n_states).astype(float)
    Q = q_counts / q_counts.sum()

    if cfg.prob_floor > 0:
        P = np.stack([floor_simplex(r, cfg.prob_floor) for r in P])
        Q = floor_simplex(Q, cfg.prob_floor)
    if cfg.self_transition is not None and n_states > 1:
        s = cfg.self_transition
        for i in range(n_states):
            off = np.delete(P[i], i)
            off = floor_simplex(off, cfg.prob_floor, 1.0 - s)
            P[i] = np.insert(off, i, s)
    return MarkovModel(P, Q, cfg)


def _check_states(model: MarkovModel, states) -> np.ndarray:
    s = np.asarray(states, dtype=np.int64)
    if s.ndim != 1:
        raise ValueError("state sequence must be 1-D")
    if len(s) and (s.min() < 0 or s.max() >= model.n_states):
        raise ValueError(f"state outside 0..{model.n_states - 1}")
    return s


def sequence_logprob(model: MarkovModel, states) -> float:
    """log of q[s1] * prod p[s(t-1), s(t)]."""
    s = _check_states(model, states)
    if len(s) == 0:
        raise ValueError("empty state sequence")
    return float(model._logQ[s[0]] + model._logP[s[:-1], s[1:]].sum())


def rolling_logprob(model: MarkovModel, states, k: int) -> np.ndarray:
    """Joint log-probability of the ``k`` states ending at each position.

    The first ``k - 1`` positions use the shorter prefix that is available.
    """
    s = _check_states(model, states)
    n = len(s)
    if n == 0:
        return np.zeros(0)
    trans = model._logP[s[:-1], s[1:]]
    c = np.concatenate([[0.0], np.cumsum(trans)])
    t = np.arange(n)
    first = np.maximum(t - k + 1, 0)
    return model._logQ[s[first]] + (c[t] - c[first])


def trailing_mean(x: np.ndarray, w: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if w <= 1 or len(x) == 0:
        return x.copy()
    c = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(1, len(x) + 1)
    lo = np.maximum(t - w, 0)
    return (c[t] - c[lo]) / (t - lo)


def probability_curve(model: MarkovModel, states) -> np.ndarray:
    cfg = model.config
    return trailing_mean(rolling_logprob(model, states, cfg.consecutive_required),
                         cfg.prob_smooth_window)


def alarm_runs(curve: np.ndarray, threshold: float, k: int):
    """Alarm flags and the index where each alarm's sub-threshold run began."""
    below = np.asarray(curve) < threshold
    n = len(below)
    run = np.zeros(n, dtype=np.int64)
    acc = 0
    for i, b in enumerate(below.tolist()):
        acc = acc + 1 if b else 0
        run[i] = acc
    flagged = run >= k
    onset = np.arange(n) - np.maximum(run, 1) + 1
    return flagged, onset


def _flag_count(curve: np.ndarray, threshold: float, k: int) -> int:
    below = curve < threshold
    if not below.any():
        return 0
    # lengths of runs of True
    padded = np.concatenate([[0], below.astype(np.int8), [0]])
    d = np.diff(padded)
    lengths = np.flatnonzero(d == -1) - np.flatnonzero(d == 1)
    return int(np.maximum(lengths - k + 1, 0).sum())


def detect_markov(model: MarkovModel, states, starts_ms, step_ms: float | None = None,
                  trace_id: str = "", model_id: str = "markov") -> DetectionReport:
    """Alarm report over the windows that produced ``states``.

    Each state window is reported as the non-overlapping slot
    ``[start, start + step)``; scores are the negated smoothed log-probability.
    """
    s = _check_states(model, states)
    starts = np.asarray(starts_ms, dtype=np.float64)
    if len(starts) != len(s):
        raise ValueError("states and starts must align")
    if step_ms is None:
        step_ms = float(np.diff(starts).min()) if len(starts) > 1 else 1.0
    k = model.config.consecutive_required
    if len(s) < k:
        return DetectionReport(trace_id, np.zeros(0), step_ms, np.zeros(0), np.zeros(0, bool),
                               model_id, notes=("sequence shorter than consecutive_required",))
    curve = probability_curve(model, s)
    flagged, onset = alarm_runs(curve, model.threshold, k)
    return DetectionReport(trace_id, starts, step_ms, -curve, flagged, model_id,
                           onsets_ms=starts[onset])


def calibrate_threshold(model: MarkovModel, benign_validation_seqs, target_fp_rate: float) -> float:
    """Largest threshold whose alarm-window fraction on benign data stays within target."""
    curves = [probability_curve(model, s) for s in benign_validation_seqs if len(s)]
    if not curves:
        raise ValueError("empty validation set")
    k = model.config.consecutive_required
    total = sum(len(c) for c in curves)
    values = np.unique(np.concatenate(curves))
    candidates = np.append(values, values[-1] + 1.0)

    def rate(th):
        return sum(_flag_count(c, th, k) for c in curves) / total

    lo, hi = 0, len(candidates) - 1
    if rate(candidates[hi]) <= target_fp_rate:
        return float(candidates[hi])
    # invariant: rate(candidates[lo]) <= target < rate(candidates[hi])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if rate(candidates[mid]) <= target_fp_rate:
            lo = mid
        else:
            hi = mid
    return float(candidates[lo])


def flag_rate(model: MarkovModel, seqs) -> float:
    curves = [probability_curve(model, s) for s in seqs if len(s)]
    total = sum(len(c) for c in curves)
    k = model.config.consecutive_required
    return sum(_flag_count(c, model.threshold, k) for c in curves) / max(total, 1)


# --- end-to-end detector -----------------------------------------------------

@dataclass(frozen=True)
class MarkovTrainConfig:
    markov: MarkovConfig = MarkovConfig(initial="all")
    m: int | None = None
    m_range: tuple = (10, 20)
    bic_sample: int = 4000
    kmeans_n_init: int = 10
    kmeans_max_iter: int = 300
    codebook_max_vectors: int | None = 20000
    target_fp: float = 0.2
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["m_range"] = list(self.m_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovTrainConfig":
        d = dict(d)
        if "markov" in d:
            d["markov"] = MarkovConfig(**d["markov"])
        if "m_range" in d:
            d["m_range"] = tuple(d["m_range"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class MarkovDetector:
    frontend: FrontEnd
    model: MarkovModel
    model_id: str = "markov"

    kind = "markov"

    def states(self, trace):
        fs = self.frontend.transform(trace)
        return fs, assign_states(self.model.codebook, fs)

    def detect(self, trace, trace_id: str = "") -> DetectionReport:
        return self.detect_features(self.frontend.transform(trace), trace_id)

    def detect_features(self, fs, trace_id: str = "") -> DetectionReport:
        st = assign_states(self.model.codebook, fs)
        return detect_markov(self.model, st, fs.starts_ms, fs.config.shift_step_ms,
                             trace_id, self.model_id)

    def recalibrate(self, benign_features, target_fp: float) -> "MarkovDetector":
        """Threshold from benign feature sets (or traces) for the target alarm rate."""
        feats = [f if hasattr(f, "vectors") else self.frontend.transform(f) for f in benign_features]
        seqs = [assign_states(self.model.codebook, f) for f in feats]
        th = calibrate_threshold(self.model, seqs, target_fp)
        return replace(self, model=self.model.with_threshold(th))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "model_id": self.model_id,
                "frontend": self.frontend.to_dict(), "model": self.model.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovDetector":
        return cls(FrontEnd.from_dict(d["frontend"]), MarkovModel.from_dict(d["model"]),
                   d.get("model_id", "markov"))


def train_markov_detector(train_traces, validation_traces, frontend_cfgs,
                          cfg: MarkovTrainConfig = MarkovTrainConfig(),
                          frontend: FrontEnd | None = None,
                          train_features=None, validation_features=None) -> MarkovDetector:
    """Codebook, transition model and calibrated threshold from benign traces."""
    pcfg, fcfg = frontend_cfgs
    if frontend is None:
        frontend = FrontEnd.fit(train_traces, pcfg, fcfg)
    if train_features is None:
        train_features = [frontend.transform(t) for t in train_traces]
    pooled = np.concatenate([f.vectors for f in train_features])
    m = cfg.m
    if m is None:
        rng = np.random.default_rng([cfg.seed, 11])
        sample = pooled
        if len(pooled) > cfg.bic_sample:
            sample = pooled[np.sort(rng.choice(len(pooled), cfg.bic_sample, replace=False))]
        lo, hi = cfg.m_range
        m = select_m_bic(sample, range(lo, hi + 1), seed=cfg.seed, n_init=1)
    cb = build_codebook(pooled, m, seed=cfg.seed, n_init=cfg.kmeans_n_init,
                        max_iter=cfg.kmeans_max_iter, max_vectors=cfg.codebook_max_vectors)
    seqs = [assign_states(cb, f) for f in train_features]
    model = train_markov(seqs, cb.n_symbols, cfg.markov)
    model = replace(model, codebook=cb)
    det = MarkovDetector(frontend, model)
    if validation_features is None and validation_traces:
        validation_features = [frontend.transform(t) for t in validation_traces]
    if validation_features:
        det = det.recalibrate(validation_features, cfg.target_fp)
    return det
