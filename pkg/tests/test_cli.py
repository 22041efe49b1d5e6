import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from dgcal.cli import main
from dgcal.core import softmax
from dgcal.dataset import DomainDataset, write_csv

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    out = tmp_path_factory.mktemp("scn")
    assert run("synth", "--preset", "bridge", "--seed", 1, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def models(scenario):
    paths = {}
    for name, data, method in (
        ("src", "source_small", "source_only"),
        ("orc", "target_small", "target_oracle"),
        ("cal", "cal_small", "set_level,cluster_nn"),
    ):
        paths[name] = scenario / f"{name}.json"
        assert run("calibrate", "--input", scenario / f"{data}.csv", "--method", method,
                   "--out", paths[name]) == 0
    return paths


class TestSynth:
    def test_writes_parts(self, scenario):
        names = sorted(p.name for p in scenario.glob("*.csv"))
        assert names == sorted(f"{n}.csv" for n in ("source_large", "source_small", "cal_small",
                                                     "target_large", "target_small"))
        meta = json.loads((scenario / "scenario.json").read_text())
        assert meta["roles"]["calibration"] == ["cal_a", "cal_b"]

    def test_binary(self, tmp_path):
        assert run("synth", "--preset", "control", "--out", tmp_path, "--format", "binary") == 0
        assert (tmp_path / "cal_small.bin").read_bytes()[:4] == b"CSHF"

    def test_unknown_preset(self, tmp_path, capsys):
        assert run("synth", "--preset", "nowhere", "--out", tmp_path) == 1
        assert error_of(capsys)["kind"] == "synth"


class TestCalibrate:
    def test_set_level(self, scenario, tmp_path):
        out = tmp_path / "m.json"
        assert run("calibrate", "--input", scenario / "cal_small.csv", "--method", "set_level",
                   "--out", out) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, schema("model"))
        (c,) = doc["calibrators"]
        assert c["kind"] == "set_level" and c["set_temp"]["temperature"] > 0
        assert doc["provenance"]["command"] == "calibrate"

    def test_cluster_nn_k8(self, scenario, tmp_path):
        out = tmp_path / "m.json"
        assert run("calibrate", "--input", scenario / "cal_small.csv", "--method", "cluster_nn",
                   "--k", 8, "--out", out) == 0
        (c,) = json.loads(out.read_text())["calibrators"]
        assert len(c["cluster_model"]["centroids"]) == 8
        assert len(c["cluster_temps"]) == 8

    def test_all_kinds_validate(self, scenario, tmp_path):
        out = tmp_path / "m.json"
        methods = "set_level,cluster_nn,cluster_regression,ensemble"
        assert run("calibrate", "--input", scenario / "cal_small.csv", "--method", methods,
                   "--k", 4, "--bounds", "0.05,20", "--ridge", 0.01, "--out", out) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, schema("model"))
        assert doc["calibrators"][0]["search_bounds"] == [0.05, 20.0]
        assert doc["calibrators"][2]["regression"]["ridge_lambda"] == 0.01

    def test_missing_input(self, tmp_path, capsys):
        assert run("calibrate", "--input", tmp_path / "nope.csv", "--out", tmp_path / "m.json") == 2
        assert error_of(capsys)["kind"] == "io"

    def test_bad_method(self, scenario, tmp_path, capsys):
        assert run("calibrate", "--input", scenario / "cal_small.csv", "--method", "magic",
                   "--out", tmp_path / "m.json") == 1
        assert error_of(capsys)["kind"] == "usage"

    def test_bad_bounds(self, scenario, tmp_path):
        assert run("calibrate", "--input", scenario / "cal_small.csv", "--bounds", "5,1",
                   "--out", tmp_path / "m.json") == 1

    def test_malformed_data(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("domain,label,f0,z0,z1,z2\na,0,1,0,0,0\na,5,1,0,0,0\n")
        assert run("calibrate", "--input", bad, "--out", tmp_path / "m.json") == 1
        err = error_of(capsys)
        assert err["kind"] == "label_out_of_range" and "row 3" in err["message"]


class TestEvaluate:
    def test_report_with_ir(self, scenario, models, tmp_path):
        out = tmp_path / "r.json"
        argv = ["evaluate", "--input", scenario / "target_large.csv", "--n-trials", 30,
                "--trial-size", 200, "--out", out]
        for p in models.values():
            argv += ["--model", p]
        assert run(*argv) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, schema("report"))
        by = {r["method"]: r for r in doc["reports"]}
        assert set(by) == {"uncalibrated", "source_only", "target_oracle", "set_level", "cluster_nn"}
        assert by["source_only"]["ir"] == 0.0 and by["target_oracle"]["ir"] == 1.0
        want = (by["source_only"]["ece_mean"] - by["set_level"]["ece_mean"]) / (
            by["source_only"]["ece_mean"] - by["target_oracle"]["ece_mean"])
        assert by["set_level"]["ir"] == pytest.approx(want, rel=1e-12)
        assert by["set_level"]["run_config"]["options"]["n_trials"] == 30

    def test_no_ir_without_references(self, scenario, models, tmp_path):
        out = tmp_path / "r.csv"
        assert run("evaluate", "--input", scenario / "target_large.csv", "--model", models["cal"],
                   "--n-trials", 5, "--trial-size", 100, "--format", "csv", "--out", out) == 0
        rows = list(csv.DictReader(out.read_text().splitlines()))
        assert [r["method"] for r in rows] == ["uncalibrated", "set_level", "cluster_nn"]
        assert all(r["ir"] == "" for r in rows)

    def test_calibrated_data(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 6000
        z = rng.normal(size=(n, 4)) * 2
        y = (rng.random(n)[:, None] > np.cumsum(softmax(z), axis=1)).sum(axis=1)
        write_csv(DomainDataset(rng.normal(size=(n, 2)), z, y, ["t"] * n, 4), tmp_path / "t.csv")
        (tmp_path / "m.json").write_text(json.dumps({"schema": "dgcal.model/1", "calibrators": []}))
        assert run("evaluate", "--input", tmp_path / "t.csv", "--model", tmp_path / "m.json",
                   "--n-trials", 50, "--out", tmp_path / "r.json") == 0
        (rep,) = json.loads((tmp_path / "r.json").read_text())["reports"]
        assert rep["method"] == "uncalibrated" and rep["trial_size"] == 1500
        assert rep["ece_mean"] < 0.04

    def test_per_bin_csv(self, scenario, models, tmp_path):
        out = tmp_path / "bins.csv"
        assert run("evaluate", "--input", scenario / "target_large.csv", "--model", models["src"],
                   "--n-trials", 5, "--trial-size", 100, "--bins", 10, "--out", tmp_path / "r.json",
                   "--per-bin-out", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("method,bin,lower,upper")
        assert len(lines) == 1 + 2 * 10

    def test_missing_model(self, scenario, tmp_path, capsys):
        assert run("evaluate", "--input", scenario / "target_large.csv", "--model", tmp_path / "x.json",
                   "--out", tmp_path / "r.json") == 2
        assert error_of(capsys)["kind"] == "io"

    def test_trial_size_too_large(self, scenario, models, tmp_path, capsys):
        assert run("evaluate", "--input", scenario / "target_small.csv", "--model", models["src"],
                   "--trial-size", 5000, "--out", tmp_path / "r.json") == 1
        assert error_of(capsys)["kind"] == "metric"


class TestDiagnose:
    def write_dist(self, path, p, losses=None):
        doc = {"support": [f"s{i}" for i in range(len(p))], "p": p}
        if losses is not None:
            doc["losses"] = losses
        path.write_text(json.dumps(doc))
        return path

    def test_identical(self, tmp_path):
        a = self.write_dist(tmp_path / "a.json", [0.25, 0.25, 0.5])
        assert run("diagnose", "--input", a, "--reference", a, "--out", tmp_path / "d.json") == 0
        doc = json.loads((tmp_path / "d.json").read_text())
        jsonschema.validate(doc, schema("diagnostics"))
        (r,) = doc["results"]
        assert r["d2"] == pytest.approx(1.0, abs=1e-15)
        for key in ("var_w", "gap", "cs_bound"):
            assert r[key] == pytest.approx(0.0, abs=1e-15)

    def test_disjoint(self, tmp_path):
        t = self.write_dist(tmp_path / "t.json", [0.0, 0.0, 0.5, 0.5])
        c = self.write_dist(tmp_path / "c.json", [0.5, 0.5, 0.0, 0.0])
        assert run("diagnose", "--input", t, "--reference", c, "--out", tmp_path / "d.json") == 0
        doc = json.loads((tmp_path / "d.json").read_text())
        jsonschema.validate(doc, schema("diagnostics"))
        r = doc["results"][0]
        assert r["unbounded_ratio"] is True and r["offending_points"] == ["s2", "s3"]

    def test_worked_example_with_losses(self, tmp_path):
        t = self.write_dist(tmp_path / "t.json", [0.8, 0.2])
        c = self.write_dist(tmp_path / "c.json", [0.5, 0.5], losses=[1.0, 3.0])
        assert run("diagnose", "--input", t, "--reference", c, "--out", tmp_path / "d.json") == 0
        r = json.loads((tmp_path / "d.json").read_text())["results"][0]
        assert r["var_w"] == pytest.approx(0.36) and r["d2"] == pytest.approx(1.36)
        assert r["gap"] == pytest.approx(abs(2.0 - 1.4))

    def test_bridge_datasets(self, scenario, tmp_path):
        out = tmp_path / "d.json"
        assert run("diagnose", "--input", scenario / "target_large.csv",
                   "--reference", scenario / "cal_small.csv",
                   "--reference", scenario / "source_small.csv", "--out", out) == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, schema("diagnostics"))
        cal_d2, src_d2 = (r["d2"] for r in doc["results"])
        assert cal_d2 < src_d2

    def test_needs_reference(self, tmp_path, capsys):
        a = self.write_dist(tmp_path / "a.json", [1.0])
        assert run("diagnose", "--input", a, "--out", tmp_path / "d.json") == 1
        assert error_of(capsys)["kind"] == "usage"

    def test_support_mismatch(self, tmp_path):
        a = self.write_dist(tmp_path / "a.json", [1.0])
        b = self.write_dist(tmp_path / "b.json", [0.5, 0.5])
        assert run("diagnose", "--input", a, "--reference", b, "--out", tmp_path / "d.json") == 1


class TestReport:
    def test_merge_sorted(self, tmp_path):
        header = "method,target_domain,ece_mean,ece_std,p2.5,p97.5,accuracy,ir\n"
        (tmp_path / "a.csv").write_text(header + "set_level,tgt,0.1,0,0,0,0.5,\nuncalibrated,art,0.3,0,0,0,0.5,\n")
        (tmp_path / "b.csv").write_text(header + "cluster_nn,tgt,0.2,0,0,0,0.5,\nset_level,art,0.4,0,0,0,0.5,\n"
                                        "set_level,tgt,0.9,0,0,0,0.5,\n")
        out = tmp_path / "all.csv"
        assert run("report", "--input", tmp_path / "a.csv", tmp_path / "b.csv", "--out", out) == 0
        rows = [(r["target_domain"], r["method"], r["ece_mean"])
                for r in csv.DictReader(out.read_text().splitlines())]
        assert rows == [("art", "set_level", "0.4"), ("art", "uncalibrated", "0.3"),
                        ("tgt", "cluster_nn", "0.2"), ("tgt", "set_level", "0.1"),
                        ("tgt", "set_level", "0.9")]

    def test_wrong_columns(self, tmp_path):
        (tmp_path / "a.csv").write_text("x,y\n1,2\n")
        assert run("report", "--input", tmp_path / "a.csv", "--out", tmp_path / "o.csv") == 1

    def test_missing(self, tmp_path):
        assert run("report", "--input", tmp_path / "a.csv", "--out", tmp_path / "o.csv") == 2


class TestDeterminism:
    def test_calibrate_twice(self, scenario, tmp_path):
        outs = []
        out = tmp_path / "m.json"
        for _ in range(2):
            run("calibrate", "--input", scenario / "cal_small.csv", "--method", "ensemble",
                "--seed", 5, "--out", out)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_evaluate_twice(self, scenario, models, tmp_path):
        outs = []
        out = tmp_path / "r.json"
        for _ in range(2):
            run("evaluate", "--input", scenario / "target_large.csv", "--model", models["cal"],
                "--n-trials", 20, "--trial-size", 100, "--seed", 3, "--out", out)
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def test_no_command(capsys):
    assert main([]) == 1
    assert error_of(capsys)["kind"] == "usage"
