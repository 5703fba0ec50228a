"""Reference computations that do not use the package's own math."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm


def mc_kl(mq, lvq, mp, lvp, draws=100_000, seed=0):
    """Monte-Carlo E_q[log q(z) - log p(z)] for diagonal Gaussians (numpy arrays).

    Uses antithetic pairs (eps, -eps), which cancels the odd-order noise in
    the log ratio.
    """
    rng = np.random.default_rng(seed)
    sq, sp = np.exp(0.5 * lvq), np.exp(0.5 * lvp)
    eps = rng.standard_normal((draws // 2, mq.size))
    z = mq + sq * np.concatenate([eps, -eps])
    return float(np.mean(np.sum(norm.logpdf(z, mq, sq) - norm.logpdf(z, mp, sp), axis=1)))


def random_gaussian_pair(rng, dim=8):
    """(mean_q, logvar_q, mean_p, logvar_p): means in [-1, 1], log-variances in [-0.5, 0.5]."""
    return (rng.uniform(-1, 1, dim), rng.uniform(-0.5, 0.5, dim), rng.uniform(-1, 1, dim), rng.uniform(-0.5, 0.5, dim))


def central_difference(f, x, h=1e-4):
    """Gradient of scalar ``f`` at float64 array ``x`` by central differences."""
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def levenshtein(a, b):
    """Textbook dynamic-programming word edit distance."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]
