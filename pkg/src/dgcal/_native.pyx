# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``dgcal._fallback`` exactly in semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, ceil

cnp.import_array()


def row_nll(const double[:, ::1] logits, const cnp.int64_t[::1] labels, double inv_t):
    """Per-row negative log-likelihood of ``softmax(logits * inv_t)``."""
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t k = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, s, v
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for i in range(n):
            m = logits[i, 0] * inv_t
            for j in range(1, k):
                v = logits[i, j] * inv_t
                if v > m:
                    m = v
            s = 0.0
            for j in range(k):
                s += exp(logits[i, j] * inv_t - m)
            res[i] = m + log(s) - logits[i, labels[i]] * inv_t
    return out


def assign_nearest(const double[:, ::1] points, const double[:, ::1] centroids):
    """Nearest centroid (lowest index on ties) and squared distance per point."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t k = centroids.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, j, c, best
    cdef double dist, diff, best_dist
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dists = dist_arr
    with nogil:
        for i in range(n):
            best = 0
            best_dist = 0.0
            for c in range(d):
                diff = points[i, c] - centroids[0, c]
                best_dist += diff * diff
            for j in range(1, k):
                dist = 0.0
                for c in range(d):
                    diff = points[i, c] - centroids[j, c]
                    dist += diff * diff
                if dist < best_dist:
                    best_dist = dist
                    best = j
            labels[i] = best
            dists[i] = best_dist
    return labels_arr, dist_arr


def bin_stats(const double[::1] confidences, const double[::1] correct, int n_bins):
    """Counts, summed correctness and summed confidence over (m-1)/M < p <= m/M bins."""
    cdef Py_ssize_t n = confidences.shape[0]
    cdef Py_ssize_t i
    cdef long m
    cdef double p
    cdef double fm = <double>n_bins
    counts_arr = np.zeros(n_bins, dtype=np.int64)
    acc_arr = np.zeros(n_bins, dtype=np.float64)
    conf_arr = np.zeros(n_bins, dtype=np.float64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[::1] acc = acc_arr
    cdef double[::1] conf = conf_arr
    with nogil:
        for i in range(n):
            p = confidences[i]
            m = <long>ceil(p * fm)
            if m < 1:
                m = 1
            if m > n_bins:
                m = n_bins
            # p*M rounding can land one bin off; settle against the exact edges
            while m > 1 and p <= (m - 1) / fm:
                m -= 1
            while m < n_bins and p > m / fm:
                m += 1
            counts[m - 1] += 1
            acc[m - 1] += correct[i]
            conf[m - 1] += p
    return counts_arr, acc_arr, conf_arr


def hartigan_pass(const double[:, ::1] points, cnp.int64_t[::1] labels, int k):
    """One sweep of single-point moves that strictly lower the WCSS.

    Updates ``labels`` in place and returns the number of moves. Assumes
    every cluster is non-empty on entry; no move empties a cluster.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, j, c
    cdef long a, b, moves = 0
    cdef double dist, diff, remove, add, best_add
    counts_arr = np.zeros(k, dtype=np.float64)
    sums_arr = np.zeros((k, d), dtype=np.float64)
    cdef double[::1] counts = counts_arr
    cdef double[:, ::1] sums = sums_arr
    with nogil:
        for i in range(n):
            counts[labels[i]] += 1.0
            for c in range(d):
                sums[labels[i], c] += points[i, c]
        for i in range(n):
            a = labels[i]
            if counts[a] <= 1.0:
                continue
            dist = 0.0
            for c in range(d):
                diff = points[i, c] - sums[a, c] / counts[a]
                dist += diff * diff
            remove = counts[a] / (counts[a] - 1.0) * dist
            b = -1
            best_add = 0.0
            for j in range(k):
                if j == a:
                    continue
                dist = 0.0
                for c in range(d):
                    diff = points[i, c] - sums[j, c] / counts[j]
                    dist += diff * diff
                add = counts[j] / (counts[j] + 1.0) * dist
                if b < 0 or add < best_add:
                    best_add = add
                    b = j
            if b >= 0 and best_add < remove - 1e-12 * remove:
                counts[a] -= 1.0
                counts[b] += 1.0
                for c in range(d):
                    sums[a, c] -= points[i, c]
                    sums[b, c] += points[i, c]
                labels[i] = b
                moves += 1
    return moves
