"""nu one-class SVM with a Gaussian kernel, trained by SMO.

Dual problem (normalized so the coefficients sum to one)::

    min  1/2 a^T K a   s.t.  0 <= a_i <= 1 / (nu n),  sum a_i = 1

The decision function is ``f(x) = sum_i a_i K(x_i, x) - rho``; points with
``f(x) < 0`` are outliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_CHUNK = 2048


class ConvergenceError(RuntimeError):
    pass


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = (x * x).sum(1)[:, None] - 2.0 * x @ y.T + (y * y).sum(1)[None, :]
    return np.exp(-gamma * np.maximum(d, 0.0))


@dataclass(frozen=True, eq=False)
class OneClassSVM:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    gamma: float
    nu: float
    train_outlier_fraction: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=np.float64)
        a = np.asarray(self.alphas, dtype=np.float64)
        if sv.ndim != 2 or len(sv) != len(a):
            raise ValueError("support vectors and alphas must align")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if np.any(a <= 0) or abs(a.sum() - 1.0) > 1e-6:
            raise ValueError("alphas must be positive and sum to 1")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "_sv_sq", (sv * sv).sum(1))

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def decision_function(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.dim:
            raise ValueError(f"input dimension {x.shape[1]} does not match the model's {self.dim}")
        out = np.empty(len(x))
        sv = self.support_vectors
        for a in range(0, len(x), _CHUNK):
            xb = x[a:a + _CHUNK]
            d = (xb * xb).sum(1)[:, None] - 2.0 * xb @ sv.T + self._sv_sq[None, :]
            out[a:a + _CHUNK] = np.exp(-self.gamma * np.maximum(d, 0.0)) @ self.alphas
        return out - self.rho

    def is_outlier(self, x) -> np.ndarray:
        return self.decision_function(x) < 0

    def to_dict(self) -> dict:
        return {"support_vectors": self.support_vectors, "alphas": self.alphas,
                "rho": self.rho, "gamma": self.gamma, "nu": self.nu,
                "train_outlier_fraction": self.train_outlier_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "OneClassSVM":
        a = np.asarray(d["alphas"], dtype=np.float64)
        sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(len(a), -1)
        return cls(sv, a, float(d["rho"]), float(d["gamma"]), float(d["nu"]),
                   float(d.get("train_outlier_fraction", 0.0)))


def solve_dual(K: np.ndarray, nu: float, tol: float = 1e-6, max_iter: int | None = None,
               order: np.ndarray | None = None):
    """SMO with second-order working-set selection; returns ``(alpha, rho, iterations)``."""
    n = len(K)
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    order = np.arange(n) if order is None else np.asarray(order)
    n_full = min(int(math.floor(nu * n)), n)
    alpha[order[:n_full]] = C
    if n_full < n:
        alpha[order[n_full]] = 1.0 - n_full * C
    G = K @ alpha
    diag = np.diag(K).copy()
    eps = 1e-12 * C
    if max_iter is None:
        max_iter = max(100_000, 200 * n)
    it = 0
    while True:
        up = alpha < C - eps
        low = alpha > eps
        mg = -G
        if not up.any() or not low.any():
            gap = 0.0
        else:
            i = int(np.flatnonzero(up)[np.argmax(mg[up])])
            gap = mg[i] - mg[low].min()
        if gap < tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                f"SMO did not reach KKT tolerance {tol} in {max_iter} iterations (gap {gap:.3g})")
        cand = np.flatnonzero(low & (mg < mg[i]))
        b = mg[i] - mg[cand]
        a = diag[i] + diag[cand] - 2.0 * K[i, cand]
        a = np.where(a > 1e-12, a, 1e-12)
        j = int(cand[np.argmin(-(b * b) / a)])
        quad = max(diag[i] + diag[j] - 2.0 * K[i, j], 1e-12)
        delta = (G[j] - G[i]) / quad
        delta = min(delta, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        G += delta * (K[:, i] - K[:, j])
        it += 1
    # exact gradient so the point that sets rho is not left below it by drift
    G = K @ alpha
    free = (alpha > eps) & (alpha < C - eps)
    at_upper = alpha >= C - eps
    if free.any():
        # lowest gradient among the non-bound points: within the KKT gap of the
        # free-SV average, and only bound SVs end up with f < 0
        rho = float(G[~at_upper].min())
    else:
        at_zero = alpha <= eps
        lb = G[at_upper].max() if at_upper.any() else -np.inf
        ub = G[at_zero].min() if at_zero.any() else np.inf
        if np.isfinite(lb) and np.isfinite(ub):
            # within the KKT tolerance lb may exceed ub; never pass the lowest inside point
            rho = float(min((lb + ub) / 2, ub))
        else:
            rho = float(lb if np.isfinite(lb) else ub)
    return alpha, rho, it


def train_ocsvm(x, nu: float, gamma: float, seed: int = 0, tol: float = 1e-6,
                max_iter: int | None = None) -> OneClassSVM:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("need a 2-D training matrix")
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    n = len(x)
    K = rbf_kernel(x, x, gamma)
    order = np.random.default_rng(seed).permutation(n)
    alpha, rho, it = solve_dual(K, nu, tol, max_iter, order)
    f = K @ alpha - rho
    outlier_frac = float((f < 0).mean())
    if outlier_frac > nu + 2.0 / n:
        raise ConvergenceError(
            f"training outlier fraction {outlier_frac:.4f} exceeds nu + 2/n = {nu + 2.0 / n:.4f}")
    sv = alpha > 0
    a = alpha[sv] / alpha[sv].sum()
    return OneClassSVM(x[sv], a, rho, float(gamma), float(nu), outlier_frac, it)
