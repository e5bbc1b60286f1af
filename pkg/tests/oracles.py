"""Independent reference implementations used as test oracles.

Each one is written as directly as possible (loops, dense solvers, explicit
products) and shares no code with the package under test.
"""

import math
from collections import Counter

import numpy as np
import pywt


def _reflect(i: int, n: int) -> int:
    # half-sample symmetric extension: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) x(n-2) ...
    while i < 0 or i >= n:
        i = -i - 1 if i < 0 else 2 * n - 1 - i
    return i


def naive_dwt(signal, wavelet: str = "db3", levels: int = 3):
    """Pyramid DWT with symmetric extension, one coefficient at a time."""
    w = pywt.Wavelet(wavelet)
    lo, hi = list(w.dec_lo), list(w.dec_hi)
    L = len(lo)
    x = [float(v) for v in signal]
    details = []
    for _ in range(levels):
        n = len(x)
        out_len = (n + L - 1) // 2
        a, d = [], []
        for k in range(out_len):
            sa = sd = 0.0
            for j in range(L):
                v = x[_reflect(2 * k + 1 - j, n)]
                sa += lo[j] * v
                sd += hi[j] * v
            a.append(sa)
            d.append(sd)
        details.append(np.array(d))
        x = a
    return np.array(x), details


def product_logprob(P, Q, states) -> float:
    """log of the explicit product q[s1] * p[s1,s2] * ... (no log-space accumulation)."""
    prob = Q[states[0]]
    for a, b in zip(states[:-1], states[1:]):
        prob *= P[a][b]
    return math.log(prob)


def counting_mle(seqs, n_states: int):
    """Transition matrix from a Counter of bigrams; unseen rows are uniform."""
    pairs = Counter()
    for s in seqs:
        for a, b in zip(s[:-1], s[1:]):
            pairs[(int(a), int(b))] += 1
    P = np.zeros((n_states, n_states))
    for i in range(n_states):
        row_total = sum(c for (a, _), c in pairs.items() if a == i)
        for j in range(n_states):
            P[i, j] = pairs[(i, j)] / row_total if row_total else 1.0 / n_states
    return P


def mann_whitney_auc(benign, malicious) -> float:
    """P(malicious > benign) + 0.5 P(tie) by exhaustive pair counting."""
    wins = 0.0
    for m in malicious:
        for b in benign:
            wins += 1.0 if m > b else 0.5 if m == b else 0.0
    return wins / (len(benign) * len(malicious))


def qp_ocsvm(x, nu: float, gamma: float):
    """Dense one-class SVM dual solved with cvxopt; returns ``(alpha, rho, objective)``."""
    from cvxopt import matrix, solvers
    x = np.asarray(x, dtype=float)
    n = len(x)
    K = np.array([[math.exp(-gamma * float(((x[i] - x[j]) ** 2).sum())) for j in range(n)]
                  for i in range(n)])
    C = 1.0 / (nu * n)
    G = np.vstack([-np.eye(n), np.eye(n)])
    h = np.concatenate([np.zeros(n), np.full(n, C)])
    solvers.options.update({"show_progress": False, "abstol": 1e-12, "reltol": 1e-12,
                            "feastol": 1e-12, "maxiters": 200})
    sol = solvers.qp(matrix(K), matrix(np.zeros(n)), matrix(G), matrix(h),
                     matrix(np.ones((1, n))), matrix(1.0))
    alpha = np.array(sol["x"]).ravel()
    g = K @ alpha
    free = (alpha > 1e-6 * C) & (alpha < C * (1 - 1e-6))
    if free.any():
        rho = float(g[free].mean())
    else:
        lb = g[alpha >= C * (1 - 1e-6)].max(initial=-np.inf)
        ub = g[alpha <= 1e-6 * C].min(initial=np.inf)
        rho = float((lb + ub) / 2) if np.isfinite(lb) and np.isfinite(ub) else float(min(lb, ub) if np.isfinite(ub) else lb)
    return alpha, rho, float(0.5 * alpha @ K @ alpha), K


def exhaustive_split(x, y, features):
    """Best Gini split by trying every midpoint of every feature (ties: first seen)."""
    n = len(y)
    best = None
    for f in features:
        vals = sorted(set(x[:, f].tolist()))
        for a, b in zip(vals[:-1], vals[1:]):
            t = (a + b) / 2.0
            left = y[x[:, f] <= t]
            right = y[x[:, f] > t]
            imp = 0.0
            for part in (left, right):
                if len(part):
                    p1 = part.mean()
                    imp += len(part) / n * (1 - p1 ** 2 - (1 - p1) ** 2)
            if best is None or imp < best[2] - 1e-12:
                best = (int(f), t, imp)
    return best
