"""Temperature-selection strategies sharing one fit/apply contract.

Every calibrator resolves one temperature per sample and rescales the
logits by it (the ensemble averages several rescaled logit vectors), so the
predicted class never changes; only the confidence does.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering
from .core import (
    DEFAULT_BOUNDS,
    DEFAULT_TOL,
    BoundaryTemperatureWarning,
    CalibrationError,
    Prediction,
    TemperatureModel,
    fit_temperature,
    softmax,
)

KINDS = (
    "uncalibrated",
    "source_only",
    "target_oracle",
    "set_level",
    "cluster_nn",
    "cluster_regression",
    "ensemble",
)
SET_KINDS = ("source_only", "target_oracle", "set_level")
DEFAULT_K = 8
DEFAULT_MIN_CLUSTER_SIZE = 10
DEFAULT_ENSEMBLE = ("set_level", "cluster_nn", "cluster_regression")
MODEL_SCHEMA = "dgcal.model/1"


class TemperatureClampWarning(UserWarning):
    """A regressed temperature fell outside the search bounds and was clamped."""


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """Linear map from a feature vector to a temperature."""

    weights: np.ndarray
    intercept: float
    ridge_lambda: float
    training_mse: float
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def _standardize(self, x):
        if self.feature_mean is None:
            return x
        return (x - self.feature_mean) / self.feature_scale

    def predict(self, features):
        x = np.asarray(features, dtype=np.float64)
        return self._standardize(x) @ self.weights + self.intercept

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "ridge_lambda": self.ridge_lambda,
            "training_mse": self.training_mse,
            "feature_mean": None if self.feature_mean is None else self.feature_mean.tolist(),
            "feature_scale": None if self.feature_scale is None else self.feature_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        opt = lambda v: None if v is None else np.array(v, dtype=np.float64)  # noqa: E731
        return cls(
            weights=np.array(d["weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            ridge_lambda=float(d["ridge_lambda"]),
            training_mse=float(d["training_mse"]),
            feature_mean=opt(d.get("feature_mean")),
            feature_scale=opt(d.get("feature_scale")),
        )


def fit_ridge(x, y, ridge_lambda, standardize=False):
    """Ridge least squares with an unpenalised intercept.

    Minimises ``mean((x @ w + b - y)**2) + ridge_lambda * ||w||**2``. The
    intercept is eliminated by centring, leaving a d-dimensional normal
    system; when that system is singular (only possible with
    ``ridge_lambda == 0``) the minimum-norm least-squares solution is used.
    Returns ``(RegressionModel, singular)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if ridge_lambda < 0:
        raise CalibrationError("ridge_lambda must be non-negative")
    mean = scale = None
    if standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        x = (x - mean) / scale
    n, d = x.shape
    x_bar = x.mean(axis=0)
    y_bar = y.mean()
    xc = x - x_bar
    yc = y - y_bar
    gram = xc.T @ xc / n + ridge_lambda * np.eye(d)
    rhs = xc.T @ yc / n
    singular = np.linalg.matrix_rank(gram) < d
    if singular:
        w = np.linalg.lstsq(xc, yc, rcond=None)[0]
    else:
        w = np.linalg.solve(gram, rhs)
    b = float(y_bar - x_bar @ w)
    mse = float(np.mean((x @ w + b - y) ** 2))
    return RegressionModel(w, b, float(ridge_lambda), mse, mean, scale), singular


@dataclass(frozen=True, eq=False)
class Calibrator:
    kind: str
    search_bounds: tuple = DEFAULT_BOUNDS
    set_temp: TemperatureModel | None = None
    cluster_model: clustering.ClusterModel | None = None
    cluster_temps: tuple | None = None
    regression: RegressionModel | None = None
    members: tuple | None = None
    meta: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CalibrationError(f"unknown calibrator kind {self.kind!r}")
        need = {
            "uncalibrated": set(),
            "source_only": {"set_temp"},
            "target_oracle": {"set_temp"},
            "set_level": {"set_temp"},
            "cluster_nn": {"cluster_model", "cluster_temps"},
            "cluster_regression": {"cluster_model", "cluster_temps", "regression"},
            "ensemble": {"members"},
        }[self.kind]
        # cluster kinds may carry the set-level fallback temperature
        optional = {"set_temp"} if self.kind in ("cluster_nn", "cluster_regression") else set()
        for name in ("set_temp", "cluster_model", "cluster_temps", "regression", "members"):
            present = getattr(self, name) is not None
            if present and name not in need | optional:
                raise CalibrationError(f"{self.kind} calibrator must not carry {name}")
            if not present and name in need:
                raise CalibrationError(f"{self.kind} calibrator requires {name}")
        if self.cluster_model is not None and len(self.cluster_temps) != self.cluster_model.k:
            raise CalibrationError("one cluster temperature per centroid required")

    @property
    def feature_dim(self):
        if self.cluster_model is not None:
            return self.cluster_model.centroids.shape[1]
        if self.members:
            dims = [m.feature_dim for m in self.members if m.feature_dim is not None]
            return dims[0] if dims else None
        return None

    def to_dict(self):
        return {
            "kind": self.kind,
            "search_bounds": list(self.search_bounds),
            "set_temp": None if self.set_temp is None else self.set_temp.to_dict(),
            "cluster_model": None if self.cluster_model is None else self.cluster_model.to_dict(),
            "cluster_temps": None
            if self.cluster_temps is None
            else [t.to_dict() for t in self.cluster_temps],
            "regression": None if self.regression is None else self.regression.to_dict(),
            "members": None if self.members is None else [m.to_dict() for m in self.members],
            "meta": self.meta,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            search_bounds=tuple(float(b) for b in d["search_bounds"]),
            set_temp=None if d.get("set_temp") is None else TemperatureModel.from_dict(d["set_temp"]),
            cluster_model=None
            if d.get("cluster_model") is None
            else clustering.ClusterModel.from_dict(d["cluster_model"]),
            cluster_temps=None
            if d.get("cluster_temps") is None
            else tuple(TemperatureModel.from_dict(t) for t in d["cluster_temps"]),
            regression=None
            if d.get("regression") is None
            else RegressionModel.from_dict(d["regression"]),
            members=None
            if d.get("members") is None
            else tuple(cls.from_dict(m) for m in d["members"]),
            meta=dict(d.get("meta") or {}),
            warnings=tuple(d.get("warnings") or ()),
        )


# ---------------------------------------------------------------- fitting


def _domain_weights(ds, weighting):
    if weighting == "sample":
        return None
    if weighting == "domain":
        _, inverse, counts = np.unique(ds.domain_tags.astype(str), return_inverse=True, return_counts=True)
        return 1.0 / counts[inverse]
    raise CalibrationError(f"unknown weighting {weighting!r}; use 'sample' or 'domain'")


def _require_logits(ds):
    if not ds.has_logits:
        raise CalibrationError("calibration data carries no logits")


def _fit_quiet(logits, labels, bounds, tol, weights=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryTemperatureWarning)
        return fit_temperature(logits, labels, bounds, tol, weights)


def uncalibrated():
    return Calibrator("uncalibrated")


def fit_set_level(cal, bounds=DEFAULT_BOUNDS, tol=DEFAULT_TOL, weighting="sample", kind="set_level"):
    """One temperature fitted on all calibration samples pooled together.

    ``weighting="domain"`` instead gives every calibration domain the same
    total weight regardless of its size.
    """
    if kind not in SET_KINDS:
        raise CalibrationError(f"{kind} is not a single-temperature kind")
    _require_logits(cal)
    tm = _fit_quiet(cal.logits, cal.labels, bounds, tol, _domain_weights(cal, weighting))
    notes = (tm.warning,) if tm.warning else ()
    return Calibrator(
        kind,
        search_bounds=tuple(bounds),
        set_temp=tm,
        meta={"weighting": weighting, "domains": list(cal.domains), "n_samples": len(cal)},
        warnings=notes,
    )


def fit_source_only(source_small, bounds=DEFAULT_BOUNDS, tol=DEFAULT_TOL):
    return fit_set_level(source_small, bounds, tol, kind="source_only")


def fit_target_oracle(target_small, bounds=DEFAULT_BOUNDS, tol=DEFAULT_TOL):
    return fit_set_level(target_small, bounds, tol, kind="target_oracle")


def _fit_clusters(cal, k, seed, bounds, tol, weighting, min_cluster_size, max_iter, n_init):
    _require_logits(cal)
    model = clustering.kmeans_fit(cal.features, k, seed=seed, max_iter=max_iter, n_init=n_init)
    weights = _domain_weights(cal, weighting)
    pooled = _fit_quiet(cal.logits, cal.labels, bounds, tol, weights)
    temps, notes = [], []
    for j in range(model.k):
        idx = np.flatnonzero(model.assignments == j)
        if len(idx) < min_cluster_size:
            notes.append(
                f"cluster {j} has {len(idx)} < {min_cluster_size} samples; "
                "using the set-level temperature"
            )
            temps.append(pooled)
            continue
        w = None if weights is None else weights[idx]
        tm = _fit_quiet(cal.logits[idx], cal.labels[idx], bounds, tol, w)
        if tm.warning:
            notes.append(f"cluster {j}: {tm.warning}")
        temps.append(tm)
    return model, tuple(temps), pooled, notes


def fit_cluster_nn(
    cal,
    k=DEFAULT_K,
    seed=0,
    bounds=DEFAULT_BOUNDS,
    tol=DEFAULT_TOL,
    weighting="sample",
    min_cluster_size=DEFAULT_MIN_CLUSTER_SIZE,
    max_iter=300,
    n_init=1,
):
    """K-means on calibration features, then one temperature per cluster.

    Test samples take the temperature of their nearest centroid. Clusters
    with fewer than ``min_cluster_size`` members inherit the pooled
    (set-level) temperature.
    """
    model, temps, pooled, notes = _fit_clusters(
        cal, k, seed, bounds, tol, weighting, min_cluster_size, max_iter, n_init
    )
    return Calibrator(
        "cluster_nn",
        search_bounds=tuple(bounds),
        set_temp=pooled,
        cluster_model=model,
        cluster_temps=temps,
        meta={"k": k, "seed": seed, "weighting": weighting, "min_cluster_size": min_cluster_size},
        warnings=tuple(notes),
    )


def default_ridge(feature_dim):
    return 1e-3 * feature_dim


def fit_cluster_regression(
    cal,
    k=DEFAULT_K,
    seed=0,
    ridge_lambda=None,
    bounds=DEFAULT_BOUNDS,
    tol=DEFAULT_TOL,
    weighting="sample",
    min_cluster_size=DEFAULT_MIN_CLUSTER_SIZE,
    standardize=False,
    max_iter=300,
    n_init=1,
):
    """Cluster temperatures as above, then a ridge regression from each
    cluster's mean feature to its temperature.

    At test time the regressed temperature is clamped to the search bounds.
    ``ridge_lambda`` defaults to ``1e-3 * feature_dim``.
    """
    if k < 2:
        raise CalibrationError("cluster regression needs k >= 2")
    if ridge_lambda is None:
        ridge_lambda = default_ridge(cal.feature_dim)
    model, temps, pooled, notes = _fit_clusters(
        cal, k, seed, bounds, tol, weighting, min_cluster_size, max_iter, n_init
    )
    targets = np.array([t.temperature for t in temps])
    reg, singular = fit_ridge(model.mean_features, targets, ridge_lambda, standardize)
    if singular:
        msg = "singular regression system; using the minimum-norm solution"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return Calibrator(
        "cluster_regression",
        search_bounds=tuple(bounds),
        set_temp=pooled,
        cluster_model=model,
        cluster_temps=temps,
        regression=reg,
        meta={
            "k": k,
            "seed": seed,
            "weighting": weighting,
            "min_cluster_size": min_cluster_size,
            "standardize": standardize,
        },
        warnings=tuple(notes),
    )


def fit_ensemble(cal, members=DEFAULT_ENSEMBLE, **kwargs):
    """Fit each member kind on ``cal`` and average their rescaled logits."""
    fitted = tuple(fit(cal, m, **kwargs) for m in members)
    notes = tuple(f"{m.kind}: {w}" for m in fitted for w in m.warnings)
    return Calibrator(
        "ensemble",
        search_bounds=fitted[0].search_bounds,
        members=fitted,
        meta={"members": list(members)},
        warnings=notes,
    )


def fit(cal, kind, k=DEFAULT_K, seed=0, bounds=DEFAULT_BOUNDS, tol=DEFAULT_TOL,
        ridge_lambda=None, weighting="sample", min_cluster_size=DEFAULT_MIN_CLUSTER_SIZE,
        standardize=False, members=DEFAULT_ENSEMBLE):
    """Dispatch on ``kind``; unused options are ignored."""
    if kind == "uncalibrated":
        return uncalibrated()
    if kind in SET_KINDS:
        return fit_set_level(cal, bounds, tol, weighting, kind=kind)
    if kind == "cluster_nn":
        return fit_cluster_nn(cal, k, seed, bounds, tol, weighting, min_cluster_size)
    if kind == "cluster_regression":
        return fit_cluster_regression(
            cal, k, seed, ridge_lambda, bounds, tol, weighting, min_cluster_size, standardize
        )
    if kind == "ensemble":
        return fit_ensemble(
            cal, members, k=k, seed=seed, bounds=bounds, tol=tol, ridge_lambda=ridge_lambda,
            weighting=weighting, min_cluster_size=min_cluster_size, standardize=standardize,
        )
    raise CalibrationError(f"unknown calibrator kind {kind!r}")


# ---------------------------------------------------------------- applying


def resolve_temperatures(cal, features, n=None):
    """Per-sample temperatures for a non-ensemble calibrator.

    Returns ``(temperatures, n_clamped)``.
    """
    if cal.kind == "ensemble":
        raise CalibrationError("an ensemble resolves one temperature per member")
    if cal.kind == "uncalibrated" or cal.kind in SET_KINDS:
        if n is None:
            n = len(features)
        t = 1.0 if cal.kind == "uncalibrated" else cal.set_temp.temperature
        return np.full(n, t), 0
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cal.feature_dim:
        raise CalibrationError(
            f"features have dimension {x.shape[-1]}, calibrator expects {cal.feature_dim}"
        )
    if cal.kind == "cluster_nn":
        idx = clustering.assign_batch(cal.cluster_model, x)
        temps = np.array([t.temperature for t in cal.cluster_temps])
        return temps[idx], 0
    raw = cal.regression.predict(x)
    lo, hi = cal.search_bounds
    clamped = ~((raw >= lo) & (raw <= hi))
    return np.clip(np.nan_to_num(raw, nan=lo), lo, hi), int(clamped.sum())


@dataclass(frozen=True, eq=False)
class BatchPrediction:
    predicted_class: np.ndarray
    confidence: np.ndarray
    probs: np.ndarray
    n_clamped: int = 0

    def __len__(self):
        return len(self.predicted_class)

    def __getitem__(self, i):
        return Prediction(int(self.predicted_class[i]), float(self.confidence[i]), self.probs[i])


def calibrated_logits(cal, features, logits):
    """Logits after the calibrator's rescaling; returns ``(logits, n_clamped)``."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise CalibrationError("logits must be an (n, K) array")
    if cal.kind == "ensemble":
        total = np.zeros_like(z)
        n_clamped = 0
        for m in cal.members:
            scaled, c = calibrated_logits(m, features, z)
            total += scaled
            n_clamped += c
        return total / len(cal.members), n_clamped
    t, n_clamped = resolve_temperatures(cal, features, n=len(z))
    return z / t[:, None], n_clamped


def apply_batch(cal, features, logits):
    z = np.asarray(logits, dtype=np.float64)
    scaled, n_clamped = calibrated_logits(cal, features, z)
    probs = softmax(scaled)
    # class from the raw logits: rescaling preserves the ordering
    return BatchPrediction(np.argmax(z, axis=1), probs.max(axis=1), probs, n_clamped)


def apply_dataset(cal, ds):
    return apply_batch(cal, ds.features, ds.logits)


def apply(cal, sample):
    """Calibrated prediction for a single :class:`~dgcal.dataset.Sample`."""
    feature = np.asarray(sample.feature, dtype=np.float64)[None, :]
    batch = apply_batch(cal, feature, np.asarray(sample.logits, dtype=np.float64)[None, :])
    if batch.n_clamped:
        warnings.warn("regressed temperature clamped to the search bounds",
                      TemperatureClampWarning, stacklevel=2)
    return batch[0]


def ensemble_apply(members, sample):
    """Average the members' rescaled logits for one sample, then softmax."""
    if not members:
        raise CalibrationError("ensemble needs at least one member")
    return apply(Calibrator("ensemble", members=tuple(members)), sample)


# ---------------------------------------------------------------- files


def dump_models(calibrators, path, provenance=None):
    doc = {
        "schema": MODEL_SCHEMA,
        "provenance": provenance or {},
        "calibrators": [c.to_dict() for c in calibrators],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def load_models(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != MODEL_SCHEMA:
        raise CalibrationError(f"{path}: not a {MODEL_SCHEMA} document")
    return [Calibrator.from_dict(c) for c in doc["calibrators"]]


def with_meta(cal, **meta):
    return replace(cal, meta={**cal.meta, **meta})
