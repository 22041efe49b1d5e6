"""Command-line front end: synth, calibrate, evaluate, diagnose, report.

Exit codes: 0 success, 1 validation or model error, 2 I/O error. Errors are
also written to stderr as one JSON object ``{"error": {"kind", "message"}}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import calibrators as cal
from . import diagnostics as diag
from . import metrics, synth
from .core import DEFAULT_BOUNDS, DEFAULT_TOL
from .dataset import DatasetError, concat, parse_dataset, write_dataset

DEFAULT_BINS = 15
DEFAULT_N_TRIALS = 1000
DEFAULT_TRIAL_SIZE = 1500


class UsageError(ValueError):
    kind = "usage"


@dataclass
class RunConfig:
    """Every flag of one invocation; embedded in output files for provenance."""

    command: str
    inputs: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args):
        opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "func")}
        inputs = opts.pop("input", None) or []
        if isinstance(inputs, str):
            inputs = [inputs]
        return cls(args.command, [str(p) for p in inputs], _jsonable(opts))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _bounds(text):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'lo,hi'") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("need 0 < lo < hi")
    return (lo, hi)


def _methods(text):
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in cal.KINDS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {', '.join(cal.KINDS)}")
    return methods


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_inputs(paths):
    datasets = [parse_dataset(p) for p in paths]
    return datasets[0] if len(datasets) == 1 else concat(datasets)


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    config = synth.resolve_config(args.preset, args.seed)
    scenario = synth.make_scenario(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "bin" if args.format == "binary" else "csv"
    files = {}
    for name, ds in scenario.parts().items():
        path = out / f"{name}.{ext}"
        write_dataset(ds, path, args.format)
        files[name] = path.name
    meta = {
        "run_config": asdict(RunConfig.from_args(args)),
        "preset": config.name,
        "seed": config.seed,
        "files": files,
        "roles": {role: config.names(role) for role in synth.ROLES},
        "classifier_weights": scenario.classifier.weights.tolist(),
    }
    _write_text(out / "scenario.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_calibrate(args):
    data = _load_inputs(args.input)
    fitted = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for method in args.method:
            fitted.append(
                cal.fit(
                    data, method, k=args.k, seed=args.seed, bounds=args.bounds, tol=args.tol,
                    ridge_lambda=args.ridge, weighting=args.weighting,
                    min_cluster_size=args.min_cluster_size, standardize=args.standardize,
                )
            )
    for c in fitted:
        for note in c.warnings:
            print(f"warning: {c.kind}: {note}", file=sys.stderr)
    cal.dump_models(fitted, args.out, provenance=asdict(RunConfig.from_args(args)))
    return 0


def cmd_evaluate(args):
    target = _load_inputs(args.input)
    models = [cal.uncalibrated()]
    for path in args.model:
        models.extend(cal.load_models(path))
    seen, unique = set(), []
    for m in models:
        if m.kind not in seen:
            seen.add(m.kind)
            unique.append(m)
    trial_size = args.trial_size if args.trial_size is not None else min(DEFAULT_TRIAL_SIZE, len(target))
    run_config = asdict(RunConfig.from_args(args))
    reports = []
    for m in unique:
        r = metrics.bootstrap_eval(
            lambda ds, m=m: cal.apply_dataset(m, ds), target, args.n_trials, trial_size,
            args.bins, args.seed, replace=args.replace, method=m.kind,
            target_domain=args.target_domain,
        )
        r.run_config = run_config
        reports.append(r)
    metrics.attach_improvement_ratios(reports)
    text = metrics.reports_to_json(reports) if args.format == "json" else metrics.reports_to_csv(reports)
    _write_text(args.out, text)
    if args.per_bin_out:
        _write_text(args.per_bin_out, "".join(
            metrics.per_bin_csv(r) if i == 0 else metrics.per_bin_csv(r).split("\n", 1)[1]
            for i, r in enumerate(reports)
        ))
    return 0


def _is_distribution(path):
    return Path(path).suffix.lower() == ".json"


def cmd_diagnose(args):
    if not args.reference:
        raise UsageError("at least one --reference is required")
    paths = [args.input, *args.reference]
    if all(_is_distribution(p) for p in paths):
        support_t, p_t, loss_t = diag.load_distribution(args.input)
        results = []
        for ref in args.reference:
            support_r, p_r, loss_r = diag.load_distribution(ref)
            if list(support_r) != list(support_t):
                raise UsageError(f"{ref}: support differs from {args.input}")
            pair = diag.DiscreteDistributionPair(support_t, p_t, p_r)
            losses = loss_r if loss_r is not None else loss_t
            results.append(diag.diagnose_pair(pair, losses, name=str(ref)))
    elif any(_is_distribution(p) for p in paths):
        raise UsageError("mix of distribution (.json) and dataset inputs")
    else:
        target = parse_dataset(args.input)
        refs = [parse_dataset(p) for p in args.reference]
        pairs, losses, edges, direction = diag.induced_pairs(
            target, refs, args.projection, args.hist_bins, args.pseudocount
        )
        results = [diag.diagnose_pair(p, losses, name=str(r)) for p, r in zip(pairs, args.reference)]
        for res in results:
            res["bin_edges"] = edges.tolist()
            res["projection"] = direction.tolist()
    _write_text(args.out, diag.diagnostics_to_json(results, asdict(RunConfig.from_args(args))))
    return 0


def _read_report_rows(path):
    text = Path(path).read_text(encoding="utf-8")
    if Path(path).suffix.lower() == ".json":
        return [r.csv_row() for r in metrics.reports_from_json(text)]
    rows = list(csv.DictReader(text.splitlines()))
    if rows and set(rows[0]) != set(metrics.REPORT_COLUMNS):
        raise UsageError(f"{path}: columns {sorted(rows[0])} do not match the report table")
    return rows


def cmd_report(args):
    rows = []
    for path in args.input:
        rows.extend(_read_report_rows(path))
    rows.sort(key=lambda r: (r["target_domain"], r["method"]))
    _write_text(args.out, metrics.reports_to_csv(rows))
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="dgcal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic covariate-shift scenario")
    s.add_argument("--preset", default="bridge", help="preset name or TOML config path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=("csv", "binary"), default="csv")
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("calibrate", help="fit calibrators and write a model file")
    c.add_argument("--input", action="append", required=True, help="calibration dataset (repeatable)")
    c.add_argument("--method", type=_methods, default=["set_level"])
    c.add_argument("--k", type=int, default=cal.DEFAULT_K)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--bounds", type=_bounds, default=DEFAULT_BOUNDS)
    c.add_argument("--tol", type=float, default=DEFAULT_TOL)
    c.add_argument("--ridge", type=float, default=None, help="default 1e-3 * feature_dim")
    c.add_argument("--weighting", choices=("sample", "domain"), default="sample")
    c.add_argument("--min-cluster-size", type=int, default=cal.DEFAULT_MIN_CLUSTER_SIZE)
    c.add_argument("--standardize", action="store_true", help="z-score regression features")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="bootstrap ECE of models on a target dataset")
    e.add_argument("--model", action="append", required=True)
    e.add_argument("--input", action="append", required=True, help="target dataset (repeatable)")
    e.add_argument("--bins", type=int, default=DEFAULT_BINS)
    e.add_argument("--n-trials", type=int, default=DEFAULT_N_TRIALS)
    e.add_argument("--trial-size", type=int, default=None,
                   help=f"default min({DEFAULT_TRIAL_SIZE}, target size)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--replace", action="store_true", help="sample with replacement")
    e.add_argument("--target-domain", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--per-bin-out", default=None, help="also write per-bin reliability CSV")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("diagnose", help="density-ratio diagnostics")
    d.add_argument("--input", required=True, help="target dataset or distribution JSON")
    d.add_argument("--reference", action="append", default=[],
                   help="calibration/source dataset or distribution JSON (repeatable)")
    d.add_argument("--projection", default="mean-diff", help="'mean-diff' or 'feature:<i>'")
    d.add_argument("--hist-bins", type=int, default=20)
    d.add_argument("--pseudocount", type=float, default=diag.DEFAULT_PSEUDOCOUNT)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("report", help="merge report files into one sorted CSV table")
    r.add_argument("--input", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def _fail(kind, message, code):
    print(json.dumps({"error": {"kind": kind, "message": message}}), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except OSError as exc:
        return _fail("io", str(exc), 2)
    except (DatasetError, ValueError, KeyError, AssertionError) as exc:
        return _fail(getattr(exc, "kind", type(exc).__name__), str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
