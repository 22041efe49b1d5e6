"""Softmax / NLL primitives and scalar temperature fitting."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_BOUNDS = (1e-2, 1e2)
DEFAULT_TOL = 1e-6

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class CalibrationError(ValueError):
    kind = "calibration"


class BoundaryTemperatureWarning(UserWarning):
    """The NLL minimum sits on a search bound; the bound is returned."""


@dataclass(frozen=True)
class TemperatureModel:
    temperature: float
    nll_at_t: float
    search_bounds: tuple
    converged: bool
    nll_at_one: float | None = None
    n_samples: int = 0
    warning: str | None = None

    def to_dict(self):
        return {
            "temperature": self.temperature,
            "nll_at_t": self.nll_at_t,
            "search_bounds": list(self.search_bounds),
            "converged": self.converged,
            "nll_at_one": self.nll_at_one,
            "n_samples": self.n_samples,
            "warning": self.warning,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            temperature=float(d["temperature"]),
            nll_at_t=float(d["nll_at_t"]),
            search_bounds=tuple(float(b) for b in d["search_bounds"]),
            converged=bool(d["converged"]),
            nll_at_one=None if d.get("nll_at_one") is None else float(d["nll_at_one"]),
            n_samples=int(d.get("n_samples", 0)),
            warning=d.get("warning"),
        )


@dataclass(frozen=True)
class Prediction:
    predicted_class: int
    confidence: float
    calibrated_probs: np.ndarray


def _check_finite(z):
    if not np.all(np.isfinite(z)):
        raise CalibrationError("logits contain NaN or Inf")


def softmax(logits):
    """Stable softmax along the last axis (works for a vector or a batch)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise CalibrationError("softmax needs at least two logits")
    _check_finite(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def scale_logits(logits, t):
    if not t > 0:
        raise CalibrationError(f"temperature must be positive, got {t}")
    return np.asarray(logits, dtype=np.float64) / t


def _batch(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or len(z) == 0:
        raise CalibrationError("empty batch")
    if y.shape != (len(z),):
        raise CalibrationError("one label per logit row required")
    if np.any((y < 0) | (y >= z.shape[1])):
        raise CalibrationError("label outside logit range")
    _check_finite(z)
    return z, y


def _weighted_mean(losses, weights):
    if weights is None:
        return float(np.mean(losses))
    return float(np.sum(losses * weights) / np.sum(weights))


def mean_nll(logits, labels, t, weights=None):
    """Mean of ``-log softmax(z / t)[y]`` over the batch (optionally weighted)."""
    z, y = _batch(logits, labels)
    if not t > 0:
        raise CalibrationError(f"temperature must be positive, got {t}")
    return _weighted_mean(kernels.row_nll(z, y, 1.0 / t), weights)


def _nll_in_logt(z, y, weights):
    def f(u):
        val = _weighted_mean(kernels.row_nll(z, y, math.exp(-u)), weights)
        if not math.isfinite(val):
            raise CalibrationError(f"non-finite NLL at log-temperature {u}")
        return val

    return f


def golden_section(f, lo, hi, tol):
    """Minimise ``f`` on ``[lo, hi]`` until the bracket is narrower than ``tol``.

    Returns ``(x, f(x))`` for the midpoint of the final bracket.
    """
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fit_temperature(logits, labels, bounds=DEFAULT_BOUNDS, tol=DEFAULT_TOL, weights=None):
    """Fit the NLL-minimising temperature by golden-section search on ``log t``.

    After the search, the interior estimate is compared with both bounds and
    with ``t = 1`` (when inside the bounds) and the lowest-NLL candidate wins.
    If a bound wins, ``converged`` is False and a
    :class:`BoundaryTemperatureWarning` is issued.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0 < lo < hi) or not math.isfinite(hi):
        raise CalibrationError(f"invalid temperature bounds ({lo}, {hi})")
    if not tol > 0:
        raise CalibrationError("tol must be positive")
    z, y = _batch(logits, labels)
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != y.shape or np.any(weights < 0) or not weights.sum() > 0:
            raise CalibrationError("weights must be non-negative, one per sample, not all zero")
    f = _nll_in_logt(z, y, weights)
    u_lo, u_hi = math.log(lo), math.log(hi)
    u_star, f_star = golden_section(f, u_lo, u_hi, tol)

    nll_one = f(0.0) if lo <= 1.0 <= hi else None
    candidates = [(f_star, 0, math.exp(u_star), True)]
    if nll_one is not None:
        candidates.append((nll_one, 1, 1.0, lo < 1.0 < hi))
    candidates.append((f(u_lo), 2, lo, False))
    candidates.append((f(u_hi), 3, hi, False))
    nll, _, t, interior = min(candidates)

    warning = None
    if not interior:
        warning = f"NLL minimum on search bound t={t:g}"
        warnings.warn(warning, BoundaryTemperatureWarning, stacklevel=2)
    return TemperatureModel(
        temperature=t,
        nll_at_t=nll,
        search_bounds=(lo, hi),
        converged=interior,
        nll_at_one=nll_one,
        n_samples=len(y),
        warning=warning,
    )


def predict(logits, t=1.0):
    """Prediction for one logit vector; ties in argmax go to the lowest index."""
    z = np.asarray(logits, dtype=np.float64)
    probs = softmax(scale_logits(z, t))
    # class from the raw logits: z/t can round two distinct logits together
    return Prediction(int(np.argmax(z)), float(probs.max()), probs)


def predict_batch(logits, t=1.0):
    """Vectorised :func:`predict`: returns ``(classes, confidences, probs)``.

    ``t`` may be a scalar or one temperature per row.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise CalibrationError("temperature must be positive")
    scaled = z / (t[:, None] if t.ndim == 1 else t)
    probs = softmax(scaled)
    return np.argmax(z, axis=1), probs.max(axis=1), probs
