"""k-means state codebooks with an extra symbol for unobserved states."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import SegmentFeatureSet

_CHUNK = 4096


def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(x), len(c))``, clamped at 0."""
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def nearest(x: np.ndarray, c: np.ndarray):
    """Index of the nearest centroid (lowest index on ties) and its squared distance."""
    x = np.asarray(x, dtype=np.float64)
    idx = np.empty(len(x), dtype=np.int64)
    dist = np.empty(len(x))
    cc = (c * c).sum(1)
    for a in range(0, len(x), _CHUNK):
        xb = x[a:a + _CHUNK]
        d = (xb * xb).sum(1)[:, None] - 2.0 * xb @ c.T + cc[None, :]
        i = d.argmin(axis=1)
        idx[a:a + _CHUNK] = i
        dist[a:a + _CHUNK] = np.maximum(d[np.arange(len(xb)), i], 0.0)
    return idx, dist


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen center
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=closest / total)]
        np.minimum(closest, ((x - centers[j]) ** 2).sum(1), out=closest)
    return centers


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-6,
          history: list | None = None):
    """Lloyd iterations; stops when no centroid moves more than ``tol``."""
    centers = centers.copy()
    k = len(centers)
    labels, dist = nearest(x, centers)
    inertia = float(dist.sum())
    if history is not None:
        history.append(inertia)
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = centers.copy()
        filled = counts > 0
        # an empty cluster keeps its old centroid
        new[filled] = sums[filled] / counts[filled, None]
        shift = float(np.sqrt(((new - centers) ** 2).sum(1)).max())
        centers = new
        labels, dist = nearest(x, centers)
        new_inertia = float(dist.sum())
        if new_inertia > inertia * (1 + 1e-9) + 1e-9:
            raise AssertionError(f"k-means inertia increased: {inertia} -> {new_inertia}")
        inertia = new_inertia
        if history is not None:
            history.append(inertia)
        if shift < tol:
            break
    return centers, labels, inertia


def kmeans(vectors, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300,
           tol: float = 1e-6):
    """k-means++ seeded Lloyd's algorithm, best of ``n_init`` restarts.

    Returns ``(centroids, assignments, inertia)``.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must be a 2-D matrix")
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the {len(x)} available vectors")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = kmeans_pp_init(x, k, rng)
        out = lloyd(x, init, max_iter, tol)
        if best is None or out[2] < best[2]:
            best = out
    return best


def bic_score(x: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Spherical-Gaussian BIC of a clustering (higher is better).

    Log-likelihood uses one pooled per-dimension variance; the penalty counts
    ``m * (d + 1)`` free parameters.
    """
    n, d = x.shape
    m = len(centers)
    sse = float(((x - centers[labels]) ** 2).sum())
    dof = max(n - m, 1)
    var = max(sse / (d * dof), 1e-12)
    counts = np.bincount(labels, minlength=m)
    counts = counts[counts > 0]
    loglik = (float((counts * np.log(counts)).sum()) - n * math.log(n)
              - 0.5 * n * d * math.log(2 * math.pi * var) - sse / (2 * var))
    p = m * (d + 1)
    return loglik - 0.5 * p * math.log(n)


def select_m_bic(vectors, m_range, seed: int = 0, n_init: int = 3, max_iter: int = 300,
                 return_scores: bool = False):
    """Codebook size in ``m_range`` with the highest BIC score (smallest m on ties)."""
    x = np.asarray(vectors, dtype=np.float64)
    ms = list(m_range)
    if not ms:
        raise ValueError("empty m range")
    if min(ms) < 1 or max(ms) > len(x):
        raise ValueError("m range must lie within [1, rows]")
    scores = {}
    for m in ms:
        c, lab, _ = kmeans(x, m, seed=seed, n_init=n_init, max_iter=max_iter)
        scores[m] = bic_score(x, c, lab)
    best = max(ms, key=lambda m: (scores[m], -m))
    return (best, scores) if return_scores else best


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    novelty_threshold: float

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or len(c) == 0:
            raise ValueError("codebook needs at least one centroid")
        if not self.novelty_threshold > 0:
            raise ValueError("novelty_threshold must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "novelty_threshold", float(self.novelty_threshold))

    @property
    def m(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def unobserved_symbol(self) -> int:
        return self.m

    @property
    def n_symbols(self) -> int:
        return self.m + 1

    def to_dict(self) -> dict:
        return {"m": self.m, "dim": self.dim, "centroids": self.centroids,
                "novelty_threshold": self.novelty_threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        c = np.asarray(d["centroids"], dtype=np.float64).reshape(int(d["m"]), int(d["dim"]))
        return cls(c, d["novelty_threshold"])


def canonical_order(centroids: np.ndarray) -> np.ndarray:
    """Lexicographic row order (first column is the primary key)."""
    return np.lexsort(centroids.T[::-1])


def build_codebook(features, m: int, seed: int = 0, n_init: int = 10, max_iter: int = 300,
                   novelty_percentile: float = 99.0, novelty_scale: float = 1.5,
                   max_vectors: int | None = None) -> Codebook:
    """k-means codebook over benign training vectors.

    Centroids are rounded to float32 (compact model files) and sorted
    lexicographically. The novelty threshold is ``novelty_scale`` times the
    ``novelty_percentile`` of training nearest-centroid distances, floored at
    a small epsilon. ``max_vectors`` caps the k-means sample (seeded subset).
    """
    x = features.vectors if isinstance(features, SegmentFeatureSet) else np.asarray(features)
    x = np.asarray(x, dtype=np.float64)
    if len(x) < m:
        raise ValueError(f"{len(x)} feature vectors cannot form {m} codewords")
    fit_x = x
    if max_vectors is not None and len(x) > max_vectors:
        pick = np.random.default_rng([seed, 7]).choice(len(x), max_vectors, replace=False)
        fit_x = x[np.sort(pick)]
    centers, _, _ = kmeans(fit_x, m, seed=seed, n_init=n_init, max_iter=max_iter)
    centers = centers.astype(np.float32).astype(np.float64)
    centers = centers[canonical_order(centers)]
    _, d2 = nearest(x, centers)
    dist = np.sqrt(d2)
    scale = max(1.0, float(np.abs(x).max())) if x.size else 1.0
    threshold = max(novelty_scale * float(np.percentile(dist, novelty_percentile)), 1e-9 * scale)
    # every training vector must stay within the observed alphabet
    threshold = max(threshold, float(dist.max()) * (1 + 1e-12))
    return Codebook(centers, threshold)


def assign_states(cb: Codebook, features) -> np.ndarray:
    """Nearest-centroid symbol per vector, or ``cb.m`` beyond the novelty threshold."""
    x = features.vectors if isinstance(features, SegmentFeatureSet) else np.asarray(features)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or (len(x) and x.shape[1] != cb.dim):
        raise ValueError(f"feature dimension {x.shape[-1]} does not match codebook dimension {cb.dim}")
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64)
    idx, d2 = nearest(x, cb.centroids)
    idx[np.sqrt(d2) > cb.novelty_threshold] = cb.unobserved_symbol
    return idx
