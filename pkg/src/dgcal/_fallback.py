"""Numpy implementations of the hot kernels, used when the extension is absent."""

import numpy as np


def row_nll(logits, labels, inv_t):
    scaled = logits * inv_t
    m = scaled.max(axis=1)
    lse = m + np.log(np.exp(scaled - m[:, None]).sum(axis=1))
    return lse - scaled[np.arange(len(labels)), labels]


def assign_nearest(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    sq = np.einsum("nkd,nkd->nk", diff, diff)
    labels = np.argmin(sq, axis=1).astype(np.int64)
    return labels, sq[np.arange(len(points)), labels]


def bin_stats(confidences, correct, n_bins):
    fm = float(n_bins)
    m = np.clip(np.ceil(confidences * fm).astype(np.int64), 1, n_bins)
    # p*M rounding can land one bin off; settle against the exact edges
    down = (m > 1) & (confidences <= (m - 1) / fm)
    m[down] -= 1
    up = (m < n_bins) & (confidences > m / fm)
    m[up] += 1
    idx = m - 1
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    acc = np.bincount(idx, weights=correct, minlength=n_bins)
    conf = np.bincount(idx, weights=confidences, minlength=n_bins)
    return counts, acc, conf


def hartigan_pass(points, labels, k):
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    moves = 0
    for i in range(len(points)):
        a = labels[i]
        if counts[a] <= 1.0:
            continue
        dist = ((points[i] - sums / counts[:, None]) ** 2).sum(axis=1)
        remove = counts[a] / (counts[a] - 1.0) * dist[a]
        add = counts / (counts + 1.0) * dist
        add[a] = np.inf
        b = int(np.argmin(add))
        if add[b] < remove - 1e-12 * remove:
            counts[a] -= 1.0
            counts[b] += 1.0
            sums[a] -= points[i]
            sums[b] += points[i]
            labels[i] = b
            moves += 1
    return moves
