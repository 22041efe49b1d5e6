"""Synthetic multi-domain classification problems with covariate shift.

Every domain shares the same class means. A domain draws class-balanced
samples ``x = mean[y] + shift + scale * N(0, I)``, so the most likely class at
``x`` in one domain is the most likely class at ``x - shift + shift'`` in any
other domain. Domains differ only by their ``shift`` and noise ``scale``.

A ridge least-squares classifier on one-hot targets, fitted on the source
domain, stands in for a trained network; its outputs times ``logit_gain``
are the logits.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import DomainDataset, SplitSpec, concat, select_domains, split_dataset
from .rng import derive_seed, make_rng

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ROLES = ("source", "calibration", "target")
PRESETS = ("bridge", "near", "control")


class SynthError(ValueError):
    kind = "synth"


@dataclass(frozen=True, eq=False)
class DomainSpec:
    name: str
    role: str
    class_means: np.ndarray
    covariance_scale: float
    shift: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise SynthError(f"domain {self.name!r}: role must be one of {ROLES}")
        means = np.asarray(self.class_means, dtype=np.float64)
        shift = np.asarray(self.shift, dtype=np.float64)
        if means.ndim != 2 or shift.shape != (means.shape[1],):
            raise SynthError(f"domain {self.name!r}: class_means (K, d) and shift (d,) mismatch")
        if not self.covariance_scale >= 0:
            raise SynthError(f"domain {self.name!r}: covariance_scale must be non-negative")
        object.__setattr__(self, "class_means", means)
        object.__setattr__(self, "shift", shift)


@dataclass(frozen=True, eq=False)
class SynthConfig:
    num_classes: int
    feature_dim: int
    domains: tuple
    samples_per_domain: int
    seed: int = 0
    logit_gain: float = 1.0
    ridge: float = 1e-3
    fraction_small: float = 0.2
    name: str = "custom"

    def __post_init__(self):
        if self.num_classes < 2 or self.feature_dim < 2:
            raise SynthError("need num_classes >= 2 and feature_dim >= 2")
        if self.samples_per_domain < 2 * self.num_classes:
            raise SynthError("samples_per_domain must cover every class in both splits")
        if not self.domains:
            raise SynthError("no domains configured")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise SynthError("domain names must be unique")
        ref = self.domains[0].class_means
        for d in self.domains:
            if d.class_means.shape != (self.num_classes, self.feature_dim):
                raise SynthError(f"domain {d.name!r}: class_means must be (K, d)")
            if not np.array_equal(d.class_means, ref):
                raise SynthError("class means must be identical across domains")
        object.__setattr__(self, "domains", tuple(self.domains))

    def names(self, role):
        return [d.name for d in self.domains if d.role == role]

    def with_seed(self, seed):
        return SynthConfig(self.num_classes, self.feature_dim, self.domains,
                           self.samples_per_domain, seed, self.logit_gain, self.ridge,
                           self.fraction_small, self.name)


def generate(config):
    """Draw every domain; logits are left empty."""
    feats, labels, tags = [], [], []
    n, k = config.samples_per_domain, config.num_classes
    for spec in config.domains:
        rng = make_rng(config.seed, "synth", spec.name)
        y = rng.permutation(np.arange(n) % k)
        noise = rng.standard_normal((n, config.feature_dim))
        feats.append(spec.class_means[y] + spec.shift + spec.covariance_scale * noise)
        labels.append(y)
        tags.extend([spec.name] * n)
    return DomainDataset(np.concatenate(feats), np.zeros((len(tags), 0)),
                         np.concatenate(labels), tags, k)


def bayes_class(config, domain, features):
    """Most likely class under the generating model (equal priors, isotropic noise)."""
    spec = next(d for d in config.domains if d.name == domain)
    x = np.asarray(features, dtype=np.float64) - spec.shift
    sq = ((x[:, None, :] - spec.class_means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(sq, axis=1)


@dataclass(frozen=True, eq=False)
class LinearClassifier:
    """Logits ``z = W [x; 1]`` with ``W`` of shape ``(K, d + 1)``."""

    weights: np.ndarray

    def logits(self, features):
        x = np.asarray(features, dtype=np.float64)
        return x @ self.weights[:, :-1].T + self.weights[:, -1]

    def attach(self, ds):
        return ds.with_logits(self.logits(ds.features))


def fit_linear_classifier(source, ridge=1e-3, logit_gain=1.0):
    """Ridge least squares onto one-hot targets (bias unpenalised), scaled by
    ``logit_gain``."""
    k = source.num_classes
    missing = sorted(set(range(k)) - set(np.unique(source.labels).tolist()))
    if missing:
        raise SynthError(f"source data lacks class(es) {missing}")
    x = source.features
    n, d = x.shape
    a = np.hstack([x, np.ones((n, 1))])
    y = np.eye(k)[source.labels]
    pen = ridge * n * np.eye(d + 1)
    pen[d, d] = 0.0
    w = np.linalg.solve(a.T @ a + pen, a.T @ y)
    return LinearClassifier(logit_gain * w.T)


@dataclass(frozen=True, eq=False)
class Scenario:
    """The splits used by the source-only, target-oracle and cross-domain
    protocols. Every part carries logits from ``classifier``."""

    config: SynthConfig
    classifier: LinearClassifier
    source_large: DomainDataset
    source_small: DomainDataset
    cal_small: DomainDataset
    target_large: DomainDataset
    target_small: DomainDataset

    def parts(self):
        return {
            "source_large": self.source_large,
            "source_small": self.source_small,
            "cal_small": self.cal_small,
            "target_large": self.target_large,
            "target_small": self.target_small,
        }


def make_scenario(config):
    for role in ROLES:
        if not config.names(role):
            raise SynthError(f"scenario needs at least one {role} domain")
    raw = generate(config)
    split_seed = derive_seed(config.seed, "split") % (2**63)
    large, small = split_dataset(raw, SplitSpec(config.fraction_small, split_seed))
    clf = fit_linear_classifier(select_domains(large, config.names("source")),
                                config.ridge, config.logit_gain)

    def part(ds, role):
        return clf.attach(select_domains(ds, config.names(role)))

    return Scenario(
        config=config,
        classifier=clf,
        source_large=part(large, "source"),
        source_small=part(small, "source"),
        cal_small=part(small, "calibration"),
        target_large=part(large, "target"),
        target_small=part(small, "target"),
    )


# ---------------------------------------------------------------- presets


def config_from_dict(doc, seed=None):
    try:
        means = np.asarray(doc["class_means"], dtype=np.float64)
        k, d = means.shape
        default_scale = float(doc.get("covariance_scale", 1.0))
        domains = []
        for entry in doc["domains"]:
            shift = np.zeros(d)
            given = np.asarray(entry.get("shift", []), dtype=np.float64)
            shift[: len(given)] = given
            domains.append(DomainSpec(entry["name"], entry["role"], means,
                                      float(entry.get("covariance_scale", default_scale)), shift))
        return SynthConfig(
            num_classes=k,
            feature_dim=d,
            domains=tuple(domains),
            samples_per_domain=int(doc["samples_per_domain"]),
            seed=int(doc.get("seed", 0) if seed is None else seed),
            logit_gain=float(doc.get("logit_gain", 1.0)),
            ridge=float(doc.get("ridge", 1e-3)),
            fraction_small=float(doc.get("fraction_small", 0.2)),
            name=str(doc.get("name", "custom")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SynthError):
            raise
        raise SynthError(f"invalid synthetic config: {exc}") from exc


def load_config(path, seed=None):
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh), seed)


def preset(name, seed=0):
    if name not in PRESETS:
        raise SynthError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("dgcal").joinpath("presets", f"{name}.toml").read_text("utf-8")
    return config_from_dict(tomllib.loads(text), seed)


def resolve_config(spec, seed=0):
    """A preset name or a path to a TOML config file."""
    if spec in PRESETS:
        return preset(spec, seed)
    if Path(spec).is_file():
        return load_config(spec, seed)
    raise SynthError(f"{spec!r} is neither a preset ({', '.join(PRESETS)}) nor a config file")


def pooled(*datasets):
    return concat(datasets)
