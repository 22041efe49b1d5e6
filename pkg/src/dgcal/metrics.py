"""Calibration metrics and bootstrap evaluation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .rng import make_rng

REPORT_SCHEMA = "dgcal.report/1"
REPORT_COLUMNS = ("method", "target_domain", "ece_mean", "ece_std", "p2.5", "p97.5", "accuracy", "ir")


class MetricError(ValueError):
    kind = "metric"


def _conf_correct(predictions, labels):
    """Accepts a sequence of Prediction objects or a BatchPrediction."""
    labels = np.asarray(labels, dtype=np.int64)
    if hasattr(predictions, "confidence") and isinstance(predictions.confidence, np.ndarray):
        conf = predictions.confidence
        cls = predictions.predicted_class
    else:
        conf = np.array([p.confidence for p in predictions], dtype=np.float64)
        cls = np.array([p.predicted_class for p in predictions], dtype=np.int64)
    if len(conf) == 0:
        raise MetricError("no predictions")
    if len(conf) != len(labels):
        raise MetricError(f"{len(conf)} predictions but {len(labels)} labels")
    return conf, (cls == labels).astype(np.float64)


def ece_from_arrays(confidences, correct, n_bins=15):
    """ECE over equal-width bins ``((m-1)/M, m/M]``.

    Returns ``(ece, per_bin)`` where ``per_bin`` lists ``(count, acc, conf)``
    for every bin (acc and conf are 0 for empty bins).
    """
    if n_bins < 1:
        raise MetricError("number of bins must be at least 1")
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if len(conf) == 0:
        raise MetricError("no predictions")
    if np.any(conf <= 0) or np.any(conf > 1):
        raise MetricError("confidences must lie in (0, 1]")
    counts, acc_sum, conf_sum = kernels.bin_stats(conf, corr, n_bins)
    nz = counts > 0
    acc = np.zeros(n_bins)
    cbar = np.zeros(n_bins)
    acc[nz] = acc_sum[nz] / counts[nz]
    cbar[nz] = conf_sum[nz] / counts[nz]
    ece = float(np.sum(counts / len(conf) * np.abs(acc - cbar)))
    per_bin = [(int(c), float(a), float(b)) for c, a, b in zip(counts, acc, cbar)]
    return ece, per_bin


def ece(predictions, labels, n_bins=15):
    conf, corr = _conf_correct(predictions, labels)
    return ece_from_arrays(conf, corr, n_bins)


def accuracy(predictions, labels):
    _, corr = _conf_correct(predictions, labels)
    return float(corr.mean())


def improvement_ratio(ece_source, ece_target, ece_method):
    """Share of the source-only to target-oracle ECE gap closed by a method."""
    denom = ece_source - ece_target
    if denom == 0:
        raise MetricError("source-only and target-oracle ECE are equal")
    return (ece_source - ece_method) / denom


@dataclass
class EvaluationReport:
    method: str
    target_domain: str
    ece_mean: float
    ece_std: float
    accuracy_mean: float
    percentile_2_5: float
    percentile_97_5: float
    n_trials: int
    trial_size: int
    bins: int
    per_bin: list
    full_ece: float
    full_accuracy: float
    replace: bool = False
    seed: int = 0
    n_clamped: int = 0
    ir: float | None = None
    run_config: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["per_bin"] = [list(b) for b in self.per_bin]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["per_bin"] = [tuple(b) for b in d["per_bin"]]
        return cls(**d)

    def csv_row(self):
        return {
            "method": self.method,
            "target_domain": self.target_domain,
            "ece_mean": repr(self.ece_mean),
            "ece_std": repr(self.ece_std),
            "p2.5": repr(self.percentile_2_5),
            "p97.5": repr(self.percentile_97_5),
            "accuracy": repr(self.accuracy_mean),
            "ir": "" if self.ir is None else repr(self.ir),
        }


def bootstrap_eval(apply_fn, target, n_trials=1000, trial_size=1500, n_bins=15, seed=0,
                   replace=False, method="", target_domain=None):
    """Repeated ECE over random target subsets.

    ``apply_fn(dataset)`` returns predictions for every sample (a
    BatchPrediction or a list of Prediction). Each trial draws ``trial_size``
    samples (without replacement unless ``replace``) from a generator seeded
    by ``(seed, trial)``, so results do not depend on evaluation order. The
    reported std is the population std over trials.
    """
    if n_trials < 1:
        raise MetricError("n_trials must be at least 1")
    n = len(target)
    if trial_size < 1 or (trial_size > n and not replace):
        raise MetricError(f"trial_size {trial_size} exceeds the {n} target samples")
    preds = apply_fn(target)
    conf, corr = _conf_correct(preds, target.labels)
    full_ece, _ = ece_from_arrays(conf, corr, n_bins)

    eces = np.empty(n_trials)
    accs = np.empty(n_trials)
    per_bin = None
    for trial in range(n_trials):
        rng = make_rng(seed, "bootstrap", trial)
        if replace:
            idx = rng.integers(n, size=trial_size)
        elif trial_size == n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=trial_size, replace=False)
        eces[trial], per_bin = ece_from_arrays(conf[idx], corr[idx], n_bins)
        accs[trial] = corr[idx].mean()
    if target_domain is None:
        target_domain = "+".join(target.domains)
    return EvaluationReport(
        method=method,
        target_domain=target_domain,
        ece_mean=float(eces.mean()),
        ece_std=float(eces.std()),
        accuracy_mean=float(accs.mean()),
        percentile_2_5=float(np.percentile(eces, 2.5)),
        percentile_97_5=float(np.percentile(eces, 97.5)),
        n_trials=n_trials,
        trial_size=trial_size,
        bins=n_bins,
        per_bin=per_bin,
        full_ece=full_ece,
        full_accuracy=float(corr.mean()),
        replace=replace,
        seed=seed,
        n_clamped=int(getattr(preds, "n_clamped", 0)),
    )


def attach_improvement_ratios(reports):
    """Fill ``ir`` per target domain when source-only and target-oracle
    reports for that domain are present. Returns the same list."""
    by_domain = {}
    for r in reports:
        by_domain.setdefault(r.target_domain, {})[r.method] = r
    for group in by_domain.values():
        src, tgt = group.get("source_only"), group.get("target_oracle")
        if src is None or tgt is None or src.ece_mean == tgt.ece_mean:
            continue
        for r in group.values():
            r.ir = improvement_ratio(src.ece_mean, tgt.ece_mean, r.ece_mean)
    return reports


def reports_to_json(reports):
    doc = {"schema": REPORT_SCHEMA, "reports": [r.to_dict() for r in reports]}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def reports_from_json(text):
    doc = json.loads(text)
    if doc.get("schema") != REPORT_SCHEMA:
        raise MetricError(f"not a {REPORT_SCHEMA} document")
    return [EvaluationReport.from_dict(r) for r in doc["reports"]]


def reports_to_csv(rows):
    """``rows`` are report objects or dicts keyed by REPORT_COLUMNS."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.csv_row() if isinstance(r, EvaluationReport) else r)
    return buf.getvalue()


def per_bin_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "bin", "lower", "upper", "count", "accuracy", "confidence"])
    m = report.bins
    for i, (count, acc, conf) in enumerate(report.per_bin, start=1):
        w.writerow([report.method, i, repr((i - 1) / m), repr(i / m), count, repr(acc), repr(conf)])
    return buf.getvalue()
