"""K-means over calibration features and nearest-centroid lookup."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .rng import make_rng


class ClusteringError(ValueError):
    kind = "clustering"


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Fitted K-means partition.

    ``mean_features`` holds the mean feature of each cluster's members; after
    Lloyd convergence it coincides with ``centroids``, but the regression
    calibrator reads it explicitly.
    """

    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    mean_features: np.ndarray
    seed: int
    n_iter: int = 0
    converged: bool = True
    wcss_history: tuple = ()
    restart_histories: tuple = ()

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)

    def to_dict(self):
        return {
            "centroids": self.centroids.tolist(),
            "mean_features": self.mean_features.tolist(),
            "wcss": self.wcss,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "sizes": self.sizes.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        centroids = np.array(d["centroids"], dtype=np.float64)
        sizes = np.asarray(d.get("sizes", []), dtype=np.int64)
        # member indices are not serialised; keep the size profile only
        assignments = np.repeat(np.arange(len(sizes)), sizes) if sizes.size else np.zeros(0, int)
        return cls(
            centroids=centroids,
            assignments=assignments,
            wcss=float(d["wcss"]),
            mean_features=np.array(d["mean_features"], dtype=np.float64),
            seed=int(d["seed"]),
            n_iter=int(d.get("n_iter", 0)),
            converged=bool(d.get("converged", True)),
        )


def _kmeanspp(x, k, rng):
    """Greedy k-means++ seeding: 2 + floor(ln k) candidates per step, keep the
    one that lowers the potential most."""
    n = len(x)
    n_trials = 2 + int(math.log(k)) if k > 1 else 1
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centers[0] = x[first]
    closest = ((x - x[first]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise ClusteringError("fewer distinct points than clusters")
        cum = np.cumsum(closest)
        picks = np.searchsorted(cum, rng.random(n_trials) * total, side="right")
        picks = np.minimum(picks, n - 1)
        best_pot, best_idx, best_d = math.inf, -1, None
        for idx in picks:
            d = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
            pot = d.sum()
            if pot < best_pot:
                best_pot, best_idx, best_d = pot, int(idx), d
        centers[c] = x[best_idx]
        closest = best_d
    return centers


def _repair_empty(x, labels, dists, centroids):
    """Move each empty centroid onto the point farthest from its centroid."""
    k = len(centroids)
    counts = np.bincount(labels, minlength=k)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels, dists, False
    dists = dists.copy()
    for j in empty:
        far = int(np.argmax(dists))
        centroids[j] = x[far]
        dists[far] = 0.0
    labels, dists = kernels.assign_nearest(x, centroids)
    return labels, dists, True


def _member_means(x, labels, k, fallback):
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    counts = np.bincount(labels, minlength=k)
    means = fallback.copy()
    nz = counts > 0
    means[nz] = sums[nz] / counts[nz, None]
    return means


def _lloyd(x, centroids, max_iter, tol, history):
    labels, dists = kernels.assign_nearest(x, centroids)
    labels, dists, _ = _repair_empty(x, labels, dists, centroids)
    history.append(float(dists.sum()))
    for it in range(1, max_iter + 1):
        new = _member_means(x, labels, len(centroids), centroids)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, dists = kernels.assign_nearest(x, centroids)
        labels, dists, _ = _repair_empty(x, labels, dists, centroids)
        wcss = float(dists.sum())
        assert wcss <= history[-1] * (1 + 1e-9) + 1e-300, "Lloyd step raised the WCSS"
        history.append(wcss)
        if shift < tol:
            return centroids, labels, dists, it, True
    return centroids, labels, dists, max_iter, False


def _fit_once(x, centroids, max_iter, tol, refine):
    """Lloyd to convergence; then, if ``refine``, alternate Hartigan sweeps
    and Lloyd until no single-point move lowers the WCSS."""
    history = []
    total_iter = 0
    while True:
        centroids, labels, dists, n_iter, converged = _lloyd(x, centroids, max_iter, tol, history)
        total_iter += n_iter
        if not refine or total_iter >= max_iter:
            break
        moved = kernels.hartigan_pass(x, labels, len(centroids))
        if moved == 0:
            break
        centroids = _member_means(x, labels, len(centroids), centroids)
        history.append(float(((x - centroids[labels]) ** 2).sum()))
    return centroids, labels, dists, total_iter, converged, history


def kmeans_fit(features, k, seed=0, max_iter=300, tol=1e-8, n_init=10, refine=True):
    """K-means with greedy k-means++ seeding and Lloyd iterations.

    Lloyd stops once no centroid moves by ``tol`` or more (Euclidean) or
    after ``max_iter`` updates in total. With ``refine``, Hartigan
    single-point moves then escape Lloyd fixed points that are not local
    optima, re-running Lloyd after each improving sweep. The lowest-WCSS of
    ``n_init`` seeded restarts is kept (first one on ties). Deterministic for
    a fixed ``(features, k, seed, max_iter, tol, n_init)``.

    ``wcss_history`` records the objective after every assignment step and
    every improving Hartigan sweep of the kept restart; it never increases.
    ``restart_histories`` holds the same trace for every restart.
    """
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ClusteringError("features must be a non-empty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ClusteringError("features contain NaN or Inf")
    if k < 1 or max_iter < 1 or n_init < 1:
        raise ClusteringError("k, max_iter and n_init must be at least 1")
    n_distinct = len(np.unique(x, axis=0))
    if k > n_distinct:
        raise ClusteringError(f"k={k} exceeds the {n_distinct} distinct points")

    best = None
    histories = []
    for restart in range(n_init):
        rng = make_rng(seed, "kmeans++", restart)
        centroids = _kmeanspp(x, k, rng)
        result = _fit_once(x, centroids, max_iter, tol, refine)
        histories.append(tuple(result[5]))
        if best is None or result[2].sum() < best[2].sum():
            best = result
    centroids, labels, dists, n_iter, converged, history = best
    return ClusterModel(
        centroids=centroids,
        assignments=labels,
        wcss=float(dists.sum()),
        mean_features=_member_means(x, labels, k, centroids),
        seed=int(seed),
        n_iter=n_iter,
        converged=converged,
        wcss_history=tuple(history),
        restart_histories=tuple(histories),
    )


def assign_nearest(model, feature):
    """Index of the closest centroid (Euclidean); ties go to the lowest index."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.centroids.shape[1],):
        raise ClusteringError(
            f"feature has shape {f.shape}, model expects ({model.centroids.shape[1]},)"
        )
    labels, _ = kernels.assign_nearest(f[None, :], model.centroids)
    return int(labels[0])


def assign_batch(model, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.centroids.shape[1]:
        raise ClusteringError("feature dimension does not match the cluster model")
    labels, _ = kernels.assign_nearest(x, model.centroids)
    return labels
