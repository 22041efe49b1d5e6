"""Density-ratio diagnostics on discrete distributions.

For a target distribution P_T and a calibration distribution P_C over the
same finite support, ``w = P_T / P_C`` is the importance weight. Its variance
under P_C equals ``d2(P_T || P_C) - 1`` where ``d2 = sum(P_T**2 / P_C)``, and
it bounds how far a calibration loss measured on P_C can drift from the loss
on P_T.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

DIAGNOSTICS_SCHEMA = "dgcal.diagnostics/1"
# added to every histogram bin so sparse target tails keep the ratio finite
DEFAULT_PSEUDOCOUNT = 0.5


class UnboundedRatioError(ValueError):
    """P_T puts mass where P_C has none, so the density ratio is unbounded."""

    kind = "unbounded_ratio"

    def __init__(self, points):
        self.points = list(points)
        shown = ", ".join(str(p) for p in self.points[:5])
        more = "" if len(self.points) <= 5 else f" (+{len(self.points) - 5} more)"
        super().__init__(f"target mass outside calibration support at {shown}{more}")


@dataclass(frozen=True, eq=False)
class DiscreteDistributionPair:
    support: tuple
    p_target: np.ndarray
    p_cal: np.ndarray

    def __post_init__(self):
        pt = np.asarray(self.p_target, dtype=np.float64)
        pc = np.asarray(self.p_cal, dtype=np.float64)
        support = tuple(self.support) if self.support is not None else tuple(range(len(pt)))
        if pt.shape != pc.shape or pt.ndim != 1 or len(support) != len(pt):
            raise ValueError("p_target, p_cal and support must have equal length")
        for name, p in (("p_target", pt), ("p_cal", pc)):
            if np.any(p < 0) or not np.all(np.isfinite(p)):
                raise ValueError(f"{name} must be finite and non-negative")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "p_target", pt)
        object.__setattr__(self, "p_cal", pc)

    def check_support(self):
        bad = np.flatnonzero((self.p_target > 0) & (self.p_cal <= 0))
        if bad.size:
            raise UnboundedRatioError([self.support[i] for i in bad])

    def density_ratio(self):
        self.check_support()
        w = np.zeros_like(self.p_target)
        pos = self.p_cal > 0
        w[pos] = self.p_target[pos] / self.p_cal[pos]
        return w


def density_ratio_stats(pair, check=True):
    """Return ``(var_w, d2)`` with ``var_w = E_C[(w - 1)^2]`` and
    ``d2 = sum P_T^2 / P_C``; the two are tied by ``var_w = d2 - 1``."""
    w = pair.density_ratio()
    pc = pair.p_cal
    var_w = float(np.sum(pc * (w - 1.0) ** 2))
    d2 = float(np.sum(pair.p_target * w))
    if check:
        assert abs(var_w - (d2 - 1.0)) <= 1e-10 * max(1.0, d2), (var_w, d2)
    return var_w, d2


def calibration_gap_bound(pair, losses, check=True):
    """Return ``(gap, cs_bound, amgm_bound)`` for per-point losses.

    ``gap = |E_C[L] - E_T[L]|``; ``cs_bound = sqrt(E_C[(1-w)^2] E_C[L^2])``
    (Cauchy-Schwarz); ``amgm_bound`` is the arithmetic mean of the two factors.
    """
    L = np.asarray(losses, dtype=np.float64)
    if L.shape != pair.p_target.shape:
        raise ValueError("one loss per support point required")
    if not np.all(np.isfinite(L)) or np.any(L < 0):
        raise ValueError("losses must be finite and non-negative")
    w = pair.density_ratio()
    pc = pair.p_cal
    gap = abs(float(np.sum(pc * L)) - float(np.sum(pair.p_target * L)))
    a = float(np.sum(pc * (1.0 - w) ** 2))
    b = float(np.sum(pc * L**2))
    cs = math.sqrt(a * b)
    amgm = 0.5 * (a + b)
    if check:
        slack = 1e-12 * max(1.0, amgm)
        assert gap <= cs + slack and cs <= amgm + slack, (gap, cs, amgm)
    return gap, cs, amgm


# ---------------------------------------------------------------- histograms


def projection_direction(spec, reference_features, target_features):
    """Unit projection vector.

    ``spec`` is ``"mean-diff"`` (from the reference mean towards the target
    mean) or ``"feature:<i>"`` (a coordinate axis).
    """
    d = target_features.shape[1]
    if spec.startswith("feature:"):
        i = int(spec.split(":", 1)[1])
        if not 0 <= i < d:
            raise ValueError(f"feature index {i} outside 0..{d - 1}")
        v = np.zeros(d)
        v[i] = 1.0
        return v
    if spec == "mean-diff":
        v = target_features.mean(axis=0) - reference_features.mean(axis=0)
        norm = np.linalg.norm(v)
        if norm == 0:
            v = np.zeros(d)
            v[0] = 1.0
            return v
        return v / norm
    raise ValueError(f"unknown projection {spec!r}")


def shared_edges(projected, n_bins):
    lo = min(float(p.min()) for p in projected)
    hi = max(float(p.max()) for p in projected)
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n_bins + 1)


def histogram(values, edges, pseudocount=0.0):
    counts = np.histogram(values, bins=edges)[0].astype(np.float64) + pseudocount
    return counts / counts.sum()


def _bin_losses(proj, logits, labels, edges):
    """Mean NLL at t = 1 of the samples falling in each bin (0 for empty bins)."""
    idx = np.clip(np.searchsorted(edges, proj, side="right") - 1, 0, len(edges) - 2)
    losses = kernels.row_nll(logits, labels, 1.0)
    sums = np.bincount(idx, weights=losses, minlength=len(edges) - 1)
    counts = np.bincount(idx, minlength=len(edges) - 1)
    out = np.zeros(len(edges) - 1)
    out[counts > 0] = sums[counts > 0] / counts[counts > 0]
    return out


def induced_pairs(target, references, projection="mean-diff", n_bins=20, pseudocount=DEFAULT_PSEUDOCOUNT,
                  direction_from=0):
    """Histogram ``target`` and each reference dataset along one shared
    projection and binning.

    The ``mean-diff`` direction runs from ``references[direction_from]`` to
    the target. Returns ``(pairs, losses, edges, direction)``; losses are per-bin
    mean NLL at t = 1 over all samples supplied (requires logits).
    """
    direction = projection_direction(projection, references[direction_from].features, target.features)
    proj_t = target.features @ direction
    proj_r = [r.features @ direction for r in references]
    edges = shared_edges([proj_t, *proj_r], n_bins)
    support = tuple(f"[{edges[i]:.6g},{edges[i + 1]:.6g})" for i in range(n_bins))
    pt = histogram(proj_t, edges, pseudocount)
    pairs = [DiscreteDistributionPair(support, pt, histogram(p, edges, pseudocount)) for p in proj_r]
    losses = None
    if target.has_logits and all(r.has_logits for r in references):
        all_proj = np.concatenate([proj_t, *proj_r])
        all_z = np.concatenate([target.logits, *[r.logits for r in references]])
        all_y = np.concatenate([target.labels, *[r.labels for r in references]])
        losses = _bin_losses(all_proj, all_z, all_y, edges)
    return pairs, losses, edges, direction


def diagnose_pair(pair, losses=None, name=""):
    """JSON-ready diagnostics; an unbounded ratio is reported, not raised."""
    out = {"name": name, "unbounded_ratio": False, "offending_points": []}
    if losses is None:
        losses = np.ones(len(pair.p_target))
    try:
        var_w, d2 = density_ratio_stats(pair)
        gap, cs, amgm = calibration_gap_bound(pair, losses)
    except UnboundedRatioError as exc:
        out.update(unbounded_ratio=True, offending_points=[str(p) for p in exc.points],
                   var_w=None, d2=None, gap=None, cs_bound=None, amgm_bound=None)
        return out
    out.update(var_w=var_w, d2=d2, gap=gap, cs_bound=cs, amgm_bound=amgm)
    return out


def d2_for_ordering(diag):
    """``d2`` with unbounded ratios mapped to +inf, for comparisons."""
    return math.inf if diag["unbounded_ratio"] else diag["d2"]


def diagnostics_to_json(results, run_config=None):
    doc = {"schema": DIAGNOSTICS_SCHEMA, "run_config": run_config or {}, "results": results}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_distribution(path):
    """Read ``{"support": [...], "p": [...], "losses": [...]?}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    p = np.asarray(doc["p"], dtype=np.float64)
    support = doc.get("support") or list(range(len(p)))
    losses = doc.get("losses")
    return support, p, None if losses is None else np.asarray(losses, dtype=np.float64)
