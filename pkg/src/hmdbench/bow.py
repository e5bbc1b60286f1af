"""Bag-of-words detector: codeword histograms per time-to-detection window + one-class SVM."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .codebook import Codebook, assign_states, build_codebook
from .ocsvm import OneClassSVM, train_ocsvm
from .pipeline import FrontEnd
from .report import DetectionReport

DEFAULT_GAMMA_GRID = tuple(2.0 ** e for e in range(-7, 4))
DEFAULT_NU_GRID = (0.05, 0.1, 0.15, 0.2, 0.3)


def histogram(states, starts_ms, ttd_ms: float, n_bins: int, step_ms: float | None = None):
    """L1-normalized codeword histograms over consecutive ``ttd_ms`` windows.

    A segment belongs to the window holding its start time. Windows without
    segments are dropped. Returns ``(window_starts_ms, histograms)``.
    """
    s = np.asarray(states, dtype=np.int64)
    t = np.asarray(starts_ms, dtype=np.float64)
    if len(s) != len(t):
        raise ValueError("states and starts must align")
    if step_ms is None and len(t) > 1:
        step_ms = float(np.diff(t).min())
    if step_ms is not None and ttd_ms < step_ms:
        raise ValueError("ttd window shorter than one segment step")
    if len(s) == 0:
        return np.zeros(0), np.zeros((0, n_bins))
    if s.min() < 0 or s.max() >= n_bins:
        raise ValueError("state outside the histogram range")
    win = np.floor(t / ttd_ms + 1e-9).astype(np.int64)
    ids, inverse = np.unique(win, return_inverse=True)
    h = np.zeros((len(ids), n_bins))
    np.add.at(h, (inverse, s), 1.0)
    h /= h.sum(1, keepdims=True)
    return ids * float(ttd_ms), h


def measured_fp(model: OneClassSVM, x) -> float:
    x = np.asarray(x)
    if len(x) == 0:
        return 0.0
    return float(model.is_outlier(x).mean())


def grid_search_ocsvm(histograms, target_fp: float, gamma_grid=DEFAULT_GAMMA_GRID,
                      seed: int = 0, nu_grid=DEFAULT_NU_GRID, validation=None,
                      validation_fraction: float = 0.3):
    """``(nu, gamma)`` whose validation false-positive rate is closest to ``target_fp``.

    ``validation`` holds benign histograms kept apart from training; when it is
    omitted a seeded ``validation_fraction`` of ``histograms`` is held out.
    Ties go to the smaller gamma, then the smaller nu.
    """
    gamma_grid = sorted(float(g) for g in gamma_grid)
    nu_grid = sorted(float(v) for v in nu_grid)
    if not gamma_grid or not nu_grid:
        raise ValueError("empty parameter grid")
    x = np.asarray(histograms, dtype=np.float64)
    if validation is None:
        perm = np.random.default_rng([seed, 3]).permutation(len(x))
        n_val = max(1, int(round(validation_fraction * len(x))))
        val, x = x[perm[:n_val]], x[perm[n_val:]]
    else:
        val = np.asarray(validation, dtype=np.float64)
    if len(gamma_grid) == 1 and len(nu_grid) == 1:
        return nu_grid[0], gamma_grid[0]
    best, best_key = None, None
    for gi, gamma in enumerate(gamma_grid):
        for ni, nu in enumerate(nu_grid):
            model = train_ocsvm(x, nu, gamma, seed)
            key = (abs(measured_fp(model, val) - target_fp), gi, ni)
            if best_key is None or key < best_key:
                best, best_key = (nu, gamma), key
    return best


@dataclass(frozen=True)
class BowConfig:
    m: int = 1000
    ttd_ms: float = 1500.0
    nu: float | None = None
    gamma: float | None = None
    target_fp: float = 0.2
    gamma_grid: tuple = DEFAULT_GAMMA_GRID
    nu_grid: tuple = DEFAULT_NU_GRID
    kmeans_n_init: int = 1
    kmeans_max_iter: int = 100
    codebook_max_vectors: int | None = 12000
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["gamma_grid"] = list(self.gamma_grid)
        d["nu_grid"] = list(self.nu_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BowConfig":
        d = dict(d)
        for k in ("gamma_grid", "nu_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BowModel:
    frontend: FrontEnd
    codebook: Codebook
    ocsvm: OneClassSVM
    ttd_ms: float = 1500.0
    model_id: str = "bow"
    # windows with -f above this are flagged; 0 is the plain f < 0 rule
    threshold: float = 0.0

    kind = "bow"

    @property
    def n_bins(self) -> int:
        return self.codebook.n_symbols

    def histograms_from_features(self, fs):
        st = assign_states(self.codebook, fs)
        return histogram(st, fs.starts_ms, self.ttd_ms, self.n_bins, fs.config.shift_step_ms)

    def histograms(self, trace):
        return self.histograms_from_features(self.frontend.transform(trace))

    def detect(self, trace, trace_id: str = "") -> DetectionReport:
        return detect_bow(self, trace, trace_id)

    def detect_features(self, fs, trace_id: str = "") -> DetectionReport:
        starts, h = self.histograms_from_features(fs)
        if h.shape[1] != self.ocsvm.dim:
            raise ValueError("histogram dimension does not match the trained one-class SVM")
        score = -self.ocsvm.decision_function(h) if len(h) else np.zeros(0)
        return DetectionReport(trace_id, starts, self.ttd_ms, score, score > self.threshold,
                               self.model_id)

    def recalibrate(self, benign_features, target_fp: float) -> "BowModel":
        """Move the alarm threshold so the benign window flag rate is at most ``target_fp``."""
        from .evaluate import threshold_for_fp
        scores = np.concatenate([self.detect_features(f).scores for f in benign_features])
        return replace(self, threshold=threshold_for_fp(scores, target_fp))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "model_id": self.model_id, "frontend": self.frontend.to_dict(),
                "codebook": self.codebook.to_dict(), "ocsvm": self.ocsvm.to_dict(),
                "ttd_ms": self.ttd_ms, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "BowModel":
        return cls(FrontEnd.from_dict(d["frontend"]), Codebook.from_dict(d["codebook"]),
                   OneClassSVM.from_dict(d["ocsvm"]), float(d["ttd_ms"]), d.get("model_id", "bow"),
                   float(d.get("threshold", 0.0)))


def detect_bow(model: BowModel, trace, trace_id: str = "") -> DetectionReport:
    """Preprocess, featurize, histogram and score one trace; flagged windows have f < 0."""
    return model.detect_features(model.frontend.transform(trace), trace_id)


def train_bow(train_traces, validation_traces, frontend_cfgs, cfg: BowConfig = BowConfig(),
              frontend: FrontEnd | None = None, train_features=None,
              validation_features=None) -> BowModel:
    pcfg, fcfg = frontend_cfgs
    if frontend is None:
        frontend = FrontEnd.fit(train_traces, pcfg, fcfg)
    if train_features is None:
        train_features = [frontend.transform(t) for t in train_traces]
    if validation_features is None:
        validation_features = [frontend.transform(t) for t in validation_traces]
    pooled = np.concatenate([f.vectors for f in train_features])
    m = min(cfg.m, len(pooled))
    cb = build_codebook(pooled, m, seed=cfg.seed, n_init=cfg.kmeans_n_init,
                        max_iter=cfg.kmeans_max_iter, max_vectors=cfg.codebook_max_vectors)

    def hists(feats):
        out = [histogram(assign_states(cb, f), f.starts_ms, cfg.ttd_ms, cb.n_symbols,
                         f.config.shift_step_ms)[1] for f in feats]
        return np.concatenate(out) if out else np.zeros((0, cb.n_symbols))

    h_train = hists(train_features)
    h_val = hists(validation_features) if validation_features else None
    nu, gamma = cfg.nu, cfg.gamma
    if nu is None or gamma is None:
        nu_grid = (nu,) if nu is not None else cfg.nu_grid
        gamma_grid = (gamma,) if gamma is not None else cfg.gamma_grid
        nu, gamma = grid_search_ocsvm(h_train, cfg.target_fp, gamma_grid, cfg.seed, nu_grid,
                                      validation=h_val if h_val is not None and len(h_val) else None)
    svm = train_ocsvm(h_train, nu, gamma, cfg.seed)
    return BowModel(frontend, cb, svm, cfg.ttd_ms)
