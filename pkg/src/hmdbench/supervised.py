"""Two-class Random Forest over labeled feature windows (benign vs malicious)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BENIGN = "benign"


@dataclass(frozen=True, eq=False)
class LabeledWindowSet:
    """Rows of feature vectors with a 0/1 label (1 = malicious) and a behavior tag.

    ``groups`` names the trace each row came from, for trace-level folds.
    """

    vectors: np.ndarray
    labels: np.ndarray
    behavior_tag: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.vectors, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int64)
        tag = np.asarray(self.behavior_tag, dtype=object)
        if x.ndim != 2 or not (len(x) == len(y) == len(tag)):
            raise ValueError("vectors, labels and behavior tags must align")
        if np.any((y != 0) & (y != 1)):
            raise ValueError("labels must be 0 (benign) or 1 (malicious)")
        groups = None if self.groups is None else np.asarray(self.groups, dtype=object)
        if groups is not None and len(groups) != len(x):
            raise ValueError("groups must align with vectors")
        object.__setattr__(self, "vectors", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "behavior_tag", tag)
        object.__setattr__(self, "groups", groups)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledWindowSet":
        idx = np.asarray(idx)
        return LabeledWindowSet(self.vectors[idx], self.labels[idx], self.behavior_tag[idx],
                                None if self.groups is None else self.groups[idx])

    @staticmethod
    def concat(sets) -> "LabeledWindowSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        groups = None
        if all(s.groups is not None for s in sets):
            groups = np.concatenate([s.groups for s in sets])
        return LabeledWindowSet(np.concatenate([s.vectors for s in sets]),
                                np.concatenate([s.labels for s in sets]),
                                np.concatenate([s.behavior_tag for s in sets]), groups)


def build_balanced_set(windows: LabeledWindowSet, behaviors, size: int, seed: int = 0) -> LabeledWindowSet:
    """``size // 2`` benign rows plus malicious rows split equally across ``behaviors``.

    ``size`` must be even and ``size // 2`` divisible by the number of
    behaviors so that both class counts are exact.
    """
    behaviors = [str(getattr(b, "value", b)) for b in behaviors]
    if not behaviors:
        raise ValueError("need at least one behavior")
    half = size // 2
    if size % 2 or half % len(behaviors):
        raise ValueError(f"size {size} cannot be split evenly over {len(behaviors)} behaviors")
    per = half // len(behaviors)
    rng = np.random.default_rng([seed, 13])
    tags = windows.behavior_tag.astype(str)
    benign = np.flatnonzero(windows.labels == 0)
    if len(benign) < half:
        raise ValueError(f"need {half} benign rows, have {len(benign)}")
    pick = [rng.choice(benign, half, replace=False)]
    for b in behaviors:
        rows = np.flatnonzero((windows.labels == 1) & (tags == b))
        if len(rows) == 0:
            raise ValueError(f"behavior {b} not present")
        if len(rows) < per:
            raise ValueError(f"need {per} rows of {b}, have {len(rows)}")
        pick.append(rng.choice(rows, per, replace=False))
    return windows.subset(np.sort(np.concatenate(pick)))


# --- trees ------------------------------------------------------------------

def _gini(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(-1)
    safe = np.where(n > 0, n, 1)
    p = counts / safe[..., None]
    return 1.0 - (p * p).sum(-1)


def best_split(x: np.ndarray, y: np.ndarray, features):
    """Best Gini split over ``features``: ``(feature, threshold, weighted impurity)`` or None.

    Thresholds are midpoints between consecutive distinct values. Impurities
    within 1e-15 of the best count as ties, which go to the earlier feature in
    ``features`` and then the lower threshold.
    """
    features = np.asarray(features, dtype=np.int64)
    n = len(y)
    if n < 2 or len(features) == 0:
        return None
    cols = x[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    v = np.take_along_axis(cols, order, axis=0)
    yy = y[order].astype(np.float64)
    ones = np.cumsum(yy, axis=0)[:-1]
    k = np.arange(1, n, dtype=np.float64)[:, None]
    n1 = float(y.sum())
    zeros = k - ones
    r1, r0 = n1 - ones, (n - n1) - zeros
    gl = 1.0 - (zeros ** 2 + ones ** 2) / (k * k)
    gr = 1.0 - (r0 ** 2 + r1 ** 2) / ((n - k) ** 2)
    imp = (k * gl + (n - k) * gr) / n
    imp = np.where(v[1:] > v[:-1], imp, np.inf)
    col_best = imp.min(axis=0)
    top = col_best.min()
    if not np.isfinite(top):
        return None
    j = int(np.flatnonzero(col_best <= top + 1e-15)[0])
    i = int(np.flatnonzero(imp[:, j] <= top + 1e-15)[0])
    return int(features[j]), float((v[i, j] + v[i + 1, j]) / 2.0), float(imp[i, j])


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf. ``counts`` holds (benign, malicious)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_index(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        c = self.counts[self.leaf_index(x)]
        return c[:, 1] / c.sum(1)

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "counts": self.counts}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        f = np.asarray(d["feature"], dtype=np.int64)
        return cls(f, np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["counts"], dtype=np.float64).reshape(len(f), 2))


def build_tree(x: np.ndarray, y: np.ndarray, max_depth: int, features_per_split: int,
               rng: np.random.Generator, min_samples_split: int = 2) -> DecisionTree:
    d = x.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        ones = int(y[idx].sum())
        counts.append((len(idx) - ones, ones))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c0, c1 = counts[node]
        if depth >= max_depth or len(idx) < min_samples_split or c0 == 0 or c1 == 0:
            continue
        feats = rng.choice(d, min(features_per_split, d), replace=False)
        split = best_split(x[idx], y[idx], feats)
        if split is None:
            continue
        f, t, imp = split
        if imp >= _gini(np.array([c0, c1], dtype=float)) - 1e-15:
            continue
        mask = x[idx, f] <= t
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, t
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return DecisionTree(np.array(feature, dtype=np.int64), np.array(threshold),
                        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                        np.array(counts, dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True)
class RFConfig:
    n_trees: int = 100
    max_depth: int = 16
    features_per_split: int | None = None
    bootstrap: bool = True

    def to_dict(self):
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "features_per_split": self.features_per_split, "bootstrap": self.bootstrap}


@dataclass(frozen=True, eq=False)
class RandomForestModel:
    trees: list
    n_features: int
    config: RFConfig = RFConfig()
    seed: int = 0
    extra: dict = field(default_factory=dict)

    kind = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_features": self.n_features, "config": self.config.to_dict(),
                "seed": self.seed, "trees": [t.to_dict() for t in self.trees], "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], int(d["n_features"]),
                   RFConfig(**d["config"]), int(d["seed"]), dict(d.get("extra", {})))


def train_rf(data: LabeledWindowSet, cfg: RFConfig = RFConfig(), seed: int = 0) -> RandomForestModel:
    y = data.labels
    if len(np.unique(y)) < 2:
        raise ValueError("training set must contain both classes")
    x = data.vectors
    n, d = x.shape
    k = cfg.features_per_split or max(1, math.ceil(math.sqrt(d)))
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng([seed, 17, t])
        idx = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        trees.append(build_tree(x[idx], y[idx], cfg.max_depth, k, rng))
    return RandomForestModel(trees, d, cfg, seed)


def score_rf(model: RandomForestModel, vectors) -> np.ndarray:
    """Malicious probability: mean over trees of the leaf's malicious fraction."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.n_features:
        raise ValueError(f"input dimension {x.shape[1]} does not match the forest's {model.n_features}")
    if len(x) == 0:
        return np.zeros(0)
    return np.mean([t.predict_proba(x) for t in model.trees], axis=0)


@dataclass(frozen=True, eq=False)
class RFDetector:
    """Front end + codebook histograms + forest; windows with probability > threshold are flagged."""

    frontend: object
    codebook: object
    forest: RandomForestModel
    ttd_ms: float = 1500.0
    threshold: float = 0.5
    model_id: str = "rf"

    kind = "rf"

    def window_vectors(self, fs):
        from .bow import histogram
        from .codebook import assign_states
        st = assign_states(self.codebook, fs)
        return histogram(st, fs.starts_ms, self.ttd_ms, self.codebook.n_symbols,
                         fs.config.shift_step_ms)

    def detect_features(self, fs, trace_id: str = ""):
        from .report import DetectionReport
        starts, h = self.window_vectors(fs)
        p = score_rf(self.forest, h) if len(h) else np.zeros(0)
        return DetectionReport(trace_id, starts, self.ttd_ms, p, p > self.threshold, self.model_id)

    def detect(self, trace, trace_id: str = ""):
        return self.detect_features(self.frontend.transform(trace), trace_id)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "model_id": self.model_id, "frontend": self.frontend.to_dict(),
                "codebook": self.codebook.to_dict(), "forest": self.forest.to_dict(),
                "ttd_ms": self.ttd_ms, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "RFDetector":
        from .codebook import Codebook
        from .pipeline import FrontEnd
        return cls(FrontEnd.from_dict(d["frontend"]), Codebook.from_dict(d["codebook"]),
                   RandomForestModel.from_dict(d["forest"]), float(d["ttd_ms"]),
                   float(d["threshold"]), d.get("model_id", "rf"))
