"""Multi-domain sample collections: validation, CSV/binary I/O and splitting.

A dataset holds one row per sample: a feature vector (penultimate-layer
embedding or synthetic coordinates), a logit vector, an integer label and a
domain tag. Arrays are stored read-only so a dataset can be shared freely.
"""

from __future__ import annotations

import csv
import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import make_rng

BINARY_MAGIC = b"CSHF"
BINARY_VERSION = 1


class DatasetError(ValueError):
    """Base class for ingestion and validation failures."""

    kind = "dataset"

    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message}, row {row}"
        super().__init__(message)
        self.row = row


class EmptyDatasetError(DatasetError):
    kind = "empty"


class MalformedHeaderError(DatasetError):
    kind = "malformed_header"


class MalformedValueError(DatasetError):
    kind = "malformed_value"


class InconsistentDimensionsError(DatasetError):
    kind = "inconsistent_dimensions"


class LabelOutOfRangeError(DatasetError):
    kind = "label_out_of_range"


class UnknownDomainError(DatasetError):
    kind = "unknown_domain"


class SplitError(DatasetError):
    kind = "split"


@dataclass(frozen=True)
class Sample:
    feature: np.ndarray
    logits: np.ndarray
    label: int
    domain: str


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """Immutable table of samples.

    ``logits`` may have zero columns for feature-only data (for example the
    raw output of the synthetic generator before a classifier is attached);
    otherwise it has ``num_classes >= 2`` columns.
    """

    features: np.ndarray
    logits: np.ndarray
    labels: np.ndarray
    domain_tags: np.ndarray
    num_classes: int
    class_names: tuple | None = None
    _domains: tuple = field(init=False, repr=False)

    def __post_init__(self):
        features = _frozen(self.features, np.float64)
        labels = _frozen(self.labels, np.int64)
        n = len(labels)
        if n == 0:
            raise EmptyDatasetError("dataset has no samples")
        if features.ndim != 2 or features.shape[0] != n:
            raise InconsistentDimensionsError("features must be an (n, d) array matching labels")
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.size == 0:
            logits = np.zeros((n, 0))
        logits = _frozen(logits, np.float64)
        if logits.ndim != 2 or logits.shape[0] != n:
            raise InconsistentDimensionsError("logits must be an (n, K) array matching labels")
        k = int(self.num_classes)
        if k < 2:
            raise InconsistentDimensionsError("num_classes must be at least 2")
        if logits.shape[1] not in (0, k):
            raise InconsistentDimensionsError(
                f"logits have {logits.shape[1]} columns but num_classes is {k}"
            )
        bad = np.flatnonzero((labels < 0) | (labels >= k))
        if bad.size:
            raise LabelOutOfRangeError("label out of range", row=int(bad[0]))
        tags = np.array([str(t) for t in self.domain_tags], dtype=object)
        if tags.shape != (n,):
            raise InconsistentDimensionsError("one domain tag per sample required")
        tags.setflags(write=False)
        if self.class_names is not None and len(self.class_names) != k:
            raise InconsistentDimensionsError("class_names length must equal num_classes")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "domain_tags", tags)
        object.__setattr__(self, "num_classes", k)
        object.__setattr__(self, "_domains", tuple(dict.fromkeys(tags.tolist())))

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(self.features[i], self.logits[i], int(self.labels[i]), self.domain_tags[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def has_logits(self):
        return self.logits.shape[1] > 0

    @property
    def domains(self):
        """Domain tags in order of first appearance."""
        return self._domains

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return DomainDataset(
            self.features[indices],
            self.logits[indices],
            self.labels[indices],
            self.domain_tags[indices],
            self.num_classes,
            self.class_names,
        )

    def with_logits(self, logits):
        return DomainDataset(
            self.features, logits, self.labels, self.domain_tags, self.num_classes, self.class_names
        )

    def equals(self, other):
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.logits, other.logits)
            and np.array_equal(self.labels, other.labels)
            and list(self.domain_tags) == list(other.domain_tags)
        )


def concat(datasets):
    datasets = list(datasets)
    if not datasets:
        raise EmptyDatasetError("nothing to concatenate")
    k = datasets[0].num_classes
    if any(ds.num_classes != k for ds in datasets):
        raise InconsistentDimensionsError("num_classes differs between datasets")
    return DomainDataset(
        np.concatenate([ds.features for ds in datasets]),
        np.concatenate([ds.logits for ds in datasets]),
        np.concatenate([ds.labels for ds in datasets]),
        np.concatenate([ds.domain_tags for ds in datasets]),
        k,
        datasets[0].class_names,
    )


@dataclass(frozen=True)
class SplitSpec:
    fraction_small: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction_small < 1.0:
            raise SplitError("fraction_small must lie strictly between 0 and 1")
        if self.seed < 0:
            raise SplitError("seed must be non-negative")


def small_count(n, fraction):
    """Round-half-up of ``fraction * n``, clamped to ``[1, n - 1]``."""
    return min(max(int(np.floor(fraction * n + 0.5)), 1), n - 1)


def split_dataset(ds, spec):
    """Split each domain into Large and Small parts.

    Returns ``(large, small)``. Both keep the original row order; the Small
    part of each domain is the first ``small_count`` rows of a seeded
    permutation drawn independently per domain tag.
    """
    small_idx = []
    for tag in ds.domains:
        idx = np.flatnonzero(ds.domain_tags == tag)
        if len(idx) < 2:
            raise SplitError(f"domain {tag!r} has fewer than 2 samples")
        perm = make_rng(spec.seed, "split", tag).permutation(len(idx))
        small_idx.append(idx[perm[: small_count(len(idx), spec.fraction_small)]])
    is_small = np.zeros(len(ds), dtype=bool)
    is_small[np.concatenate(small_idx)] = True
    return ds.take(np.flatnonzero(~is_small)), ds.take(np.flatnonzero(is_small))


def select_domains(ds, tags):
    tags = set(tags)
    unknown = sorted(tags - set(ds.domains))
    if unknown:
        raise UnknownDomainError(f"unknown domain tag(s): {', '.join(unknown)}")
    return ds.take(np.flatnonzero(np.isin(ds.domain_tags, list(tags))))


# ---------------------------------------------------------------- CSV

_CLASSES_RE = re.compile(r"^#\s*classes\s*:\s*(.*)$")


def _parse_header(cols, line_no):
    if len(cols) < 2 or cols[0] != "domain" or cols[1] != "label":
        raise MalformedHeaderError("header must start with 'domain,label'", row=line_no)
    rest = cols[2:]
    d = 0
    while d < len(rest) and rest[d] == f"f{d}":
        d += 1
    zs = rest[d:]
    if any(c != f"z{j}" for j, c in enumerate(zs)):
        raise MalformedHeaderError("expected columns f0..f{d-1} then z0..z{K-1}", row=line_no)
    if len(zs) < 2:
        raise MalformedHeaderError("at least two logit columns z0, z1 are required", row=line_no)
    return d, len(zs)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_csv_text(fh.read())


def parse_csv_text(text):
    lines = text.splitlines()
    class_names = None
    line_no = 0
    while line_no < len(lines) and (not lines[line_no].strip() or lines[line_no].startswith("#")):
        m = _CLASSES_RE.match(lines[line_no])
        if m:
            class_names = tuple(s.strip() for s in m.group(1).split(","))
        line_no += 1
    if line_no >= len(lines):
        raise EmptyDatasetError("empty file")
    header_line = line_no + 1
    reader = csv.reader(io.StringIO("\n".join(lines[line_no:])))
    d, k = _parse_header([c.strip() for c in next(reader)], header_line)
    width = 2 + d + k

    tags, raw_labels, values, rows = [], [], [], []
    for offset, cols in enumerate(reader, start=1):
        row = header_line + offset
        if not cols or all(not c.strip() for c in cols):
            continue
        if len(cols) != width:
            raise InconsistentDimensionsError(
                f"inconsistent dimensions: expected {width} fields, got {len(cols)}", row=row
            )
        try:
            values.append([float(c) for c in cols[2:]])
        except ValueError:
            raise MalformedValueError("non-numeric feature or logit", row=row) from None
        tags.append(cols[0].strip())
        raw_labels.append(cols[1].strip())
        rows.append(row)
    if not rows:
        raise EmptyDatasetError("empty file: header but no samples")

    labels = _resolve_labels(raw_labels, rows, k, class_names)
    arr = np.array(values, dtype=np.float64).reshape(len(rows), width - 2)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise MalformedValueError("non-finite feature or logit", row=rows[bad])
    return DomainDataset(arr[:, :d], arr[:, d:], labels, tags, k, class_names)


def _resolve_labels(raw, rows, k, class_names):
    try:
        labels = [int(s) for s in raw]
    except ValueError:
        labels = None
    if labels is not None:
        for lab, row in zip(labels, rows):
            if not 0 <= lab < k:
                raise LabelOutOfRangeError("label out of range", row=row)
        return labels
    if class_names is not None:
        index = {name: i for i, name in enumerate(class_names)}
    else:
        index = {}
    out = []
    for name, row in zip(raw, rows):
        if name not in index:
            if class_names is not None:
                raise LabelOutOfRangeError(f"unknown class name {name!r}", row=row)
            index[name] = len(index)
        if index[name] >= k:
            raise LabelOutOfRangeError("label out of range", row=row)
        out.append(index[name])
    return out


def write_csv(ds, path):
    if not ds.has_logits:
        raise InconsistentDimensionsError("cannot write a dataset without logits")
    d, k = ds.feature_dim, ds.num_classes
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if ds.class_names is not None:
            fh.write("# classes: " + ",".join(ds.class_names) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["domain", "label"] + [f"f{i}" for i in range(d)] + [f"z{j}" for j in range(k)])
        for i in range(len(ds)):
            w.writerow(
                [ds.domain_tags[i], int(ds.labels[i])]
                + [repr(float(v)) for v in ds.features[i]]
                + [repr(float(v)) for v in ds.logits[i]]
            )


# ---------------------------------------------------------------- binary


def write_binary(ds, path):
    if not ds.has_logits:
        raise InconsistentDimensionsError("cannot write a dataset without logits")
    n, d, k = len(ds), ds.feature_dim, ds.num_classes
    table = list(ds.domains)
    index = {t: i for i, t in enumerate(table)}
    rec = np.empty(n, dtype=_record_dtype(d, k))
    rec["domain"] = [index[t] for t in ds.domain_tags]
    rec["label"] = ds.labels
    rec["features"] = ds.features
    rec["logits"] = ds.logits
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<4I", BINARY_VERSION, n, d, k))
        fh.write(struct.pack("<I", len(table)))
        for tag in table:
            raw = tag.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(rec.tobytes())


def _record_dtype(d, k):
    return np.dtype(
        [("domain", "<u4"), ("label", "<u4"), ("features", "<f8", (d,)), ("logits", "<f8", (k,))]
    )


def read_binary(path):
    data = Path(path).read_bytes()
    if len(data) == 0:
        raise EmptyDatasetError("empty file")
    if data[:4] != BINARY_MAGIC or len(data) < 24:
        raise MalformedHeaderError("missing CSHF magic or truncated header")
    version, n, d, k = struct.unpack_from("<4I", data, 4)
    if version != BINARY_VERSION:
        raise MalformedHeaderError(f"unsupported binary version {version}")
    if k < 2:
        raise MalformedHeaderError("at least two logits per sample are required")
    pos = 20
    (n_tags,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table = []
    for _ in range(n_tags):
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        table.append(data[pos : pos + length].decode("utf-8"))
        pos += length
    dt = _record_dtype(d, k)
    if len(data) - pos != n * dt.itemsize:
        raise InconsistentDimensionsError(
            f"payload holds {len(data) - pos} bytes, expected {n * dt.itemsize}"
        )
    if n == 0:
        raise EmptyDatasetError("empty file: header but no samples")
    rec = np.frombuffer(data, dtype=dt, count=n, offset=pos)
    bad = np.flatnonzero(rec["domain"] >= n_tags)
    if bad.size:
        raise MalformedValueError("domain index outside string table", row=int(bad[0]))
    bad = np.flatnonzero(rec["label"] >= k)
    if bad.size:
        raise LabelOutOfRangeError("label out of range", row=int(bad[0]))
    tags = np.array(table, dtype=object)[rec["domain"]]
    return DomainDataset(rec["features"], rec["logits"], rec["label"].astype(np.int64), tags, k)


def parse_dataset(path, format=None):
    """Read a dataset file. ``format`` is ``"csv"`` or ``"binary"``; inferred
    from the extension (``.bin`` / ``.cshf`` mean binary) when omitted."""
    path = Path(path)
    if format is None:
        format = "binary" if path.suffix.lower() in (".bin", ".cshf") else "csv"
    if format == "csv":
        return read_csv(path)
    if format == "binary":
        return read_binary(path)
    raise ValueError(f"unknown dataset format {format!r}")


def write_dataset(ds, path, format=None):
    path = Path(path)
    if format is None:
        format = "binary" if path.suffix.lower() in (".bin", ".cshf") else "csv"
    if format == "csv":
        write_csv(ds, path)
    elif format == "binary":
        write_binary(ds, path)
    else:
        raise ValueError(f"unknown dataset format {format!r}")
