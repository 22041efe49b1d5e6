"""Backend selection for the hot kernels.

The compiled ``dgcal._native`` extension is used when it imports; otherwise
the numpy versions in ``dgcal._fallback`` are used. Setting the environment
variable ``DGCAL_PURE_PYTHON=1`` forces the fallback.

Kernels take contiguous float64 / int64 arrays; the wrappers here do the
conversion so callers can pass anything array-like.
"""

import os

import numpy as np

from . import _fallback

_native = None
if os.environ.get("DGCAL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _native
    except ImportError:  # extension not built
        _native = None

BACKEND = "native" if _native is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "native":
        if _native is None:
            raise RuntimeError("compiled extension dgcal._native is not available")
        return _native
    if backend == "python":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def available_backends():
    return ["python"] if _native is None else ["native", "python"]


def row_nll(logits, labels, inv_t, backend=None):
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _impl(backend).row_nll(logits, labels, float(inv_t))


def assign_nearest(points, centroids, backend=None):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    return _impl(backend).assign_nearest(points, centroids)


def bin_stats(confidences, correct, n_bins, backend=None):
    confidences = np.ascontiguousarray(confidences, dtype=np.float64)
    correct = np.ascontiguousarray(correct, dtype=np.float64)
    return _impl(backend).bin_stats(confidences, correct, int(n_bins))


def hartigan_pass(points, labels, k, backend=None):
    """Single-point improvement sweep; ``labels`` (int64, contiguous) is
    updated in place. Returns the number of moves."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if labels.dtype != np.int64 or not labels.flags.c_contiguous:
        raise TypeError("labels must be a contiguous int64 array")
    return int(_impl(backend).hartigan_pass(points, labels, int(k)))
