"""Slow, obviously-correct reference implementations used by the tests."""

import itertools
import math

import numpy as np


def brute_kmeans_wcss(x, k):
    """Minimum WCSS over every labelling of the points into k groups (empty
    groups allowed, which can only lower the optimum)."""
    x = np.asarray(x, float)
    n = len(x)
    labs = np.array(list(itertools.product(range(k), repeat=n)))
    total = np.zeros(len(labs))
    sq = (x**2).sum(axis=1)
    for j in range(k):
        m = (labs == j).astype(float)
        cnt = m.sum(axis=1)
        s = m @ x
        total += np.where(cnt > 0, m @ sq - (s**2).sum(axis=1) / np.maximum(cnt, 1), 0.0)
    return float(total.min())


def brute_ece(conf, correct, n_bins):
    """Bin by scanning every interval ((m-1)/M, m/M] with exact comparisons."""
    conf = [float(c) for c in conf]
    n = len(conf)
    total = 0.0
    for m in range(1, n_bins + 1):
        lo, hi = (m - 1) / n_bins, m / n_bins
        members = [i for i in range(n) if lo < conf[i] <= hi]
        if not members:
            continue
        acc = sum(float(correct[i]) for i in members) / len(members)
        cbar = sum(conf[i] for i in members) / len(members)
        total += len(members) / n * abs(acc - cbar)
    return total


def grid_log_t(logits, labels, lo=1e-2, hi=1e2, n=10_000):
    """Log-temperature minimising NLL over a dense log-spaced grid."""
    z = np.asarray(logits, float)
    y = np.asarray(labels)
    us = np.linspace(math.log(lo), math.log(hi), n)
    best_u, best = None, math.inf
    rows = np.arange(len(y))
    for u in us:
        s = z / math.exp(u)
        m = s.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
        nll = float(np.mean(lse - s[rows, y]))
        if nll < best:
            best, best_u = nll, u
    return best_u, best


def grid_log_t_vectorized(logits, labels, lo=1e-2, hi=1e2, n=10_000):
    """Same grid as :func:`grid_log_t`, evaluated in chunks for speed."""
    z = np.asarray(logits, float)
    y = np.asarray(labels)
    us = np.linspace(math.log(lo), math.log(hi), n)
    picked = z[np.arange(len(y)), y]
    best_u, best = None, math.inf
    for chunk in np.array_split(us, max(1, n // 500)):
        s = z[None, :, :] * np.exp(-chunk)[:, None, None]
        m = s.max(axis=2, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(s - m).sum(axis=2))
        nll = (lse - picked[None, :] * np.exp(-chunk)[:, None]).mean(axis=1)
        i = int(np.argmin(nll))
        if nll[i] < best:
            best, best_u = float(nll[i]), float(chunk[i])
    return best_u, best
