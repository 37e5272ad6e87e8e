import csv
import json

import numpy as np
import pytest

from emsforecast.cli import build_parser, main

SUBCOMMANDS = ["synth", "ingest", "features", "tune", "train", "predict", "evaluate", "medic", "shap", "sensitivity",
               "report"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", d / "raw", "--days", 70, "--q", 3, "--p", 2, "--seed", 3,
               "--hotspot-velocity", 0.5, 0.3) == 0
    assert run("features", "--raw", d / "raw", "--out", d / "ds", "--granularity", 24, "--look-back", 3) == 0
    spec = {"kind": "cnn", "grid": [3, 2], "look_back": 3, "dense": [8],
            "conv": [{"filters": 2, "kernel": [3, 3, 3], "activation": "relu"}], "learning_rate": 0.01}
    (d / "spec.json").write_text(json.dumps(spec))
    assert run("train", "--spec", d / "spec.json", "--data", d / "ds", "--out", d / "model", "--max-epochs", 5,
               "--patience", 3) == 0
    return d


class TestHelp:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS + ["benchmark trees"])
    def test_help_exits_zero(self, cmd, capsys):
        assert main(cmd.split() + ["--help"]) == 0
        out = capsys.readouterr().out
        assert "--seed" in out and "--out" in out

    def test_help_lists_every_flag(self, capsys):
        parser = build_parser()
        sub = next(a for a in parser._actions if a.dest == "command")
        for name, p in sub.choices.items():
            if name == "benchmark":
                continue
            main([name, "--help"])
            out = capsys.readouterr().out
            for action in p._actions:
                for flag in action.option_strings:
                    assert flag in out, (name, flag)


class TestExitCodes:
    def test_bad_flag_is_config_error(self, capsys):
        assert run("tune", "--bogus") == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("emsforecast: error:")

    def test_missing_spec_is_config_error(self, workspace, capsys):
        assert run("train", "--spec", workspace / "nope.json", "--data", workspace / "ds", "--out",
                   workspace / "m2") == 1
        assert len(capsys.readouterr().err.strip().splitlines()) == 1

    def test_bad_fractions_is_config_error(self, workspace):
        assert run("features", "--raw", workspace / "raw", "--out", workspace / "x", "--fractions", "0.5,0.5,0.5") == 1

    def test_missing_dataset_is_data_error(self, workspace, capsys):
        assert run("medic", "--data", workspace / "missing", "--out", workspace / "m.json") == 2
        assert len(capsys.readouterr().err.strip().splitlines()) == 1

    def test_malformed_incidents_is_data_error(self, tmp_path):
        (tmp_path / "inc.csv").write_text("timestamp,latitude,longitude,category\nnot-a-time,1,2,x\n")
        assert run("ingest", "--incidents", tmp_path / "inc.csv", "--bbox", "0,1,0,1", "--out", tmp_path / "o") == 2

    def test_divergence_is_numeric_error(self, workspace, capsys):
        spec = json.loads((workspace / "spec.json").read_text())
        spec.update(optimizer="sgd", learning_rate=1e12)
        (workspace / "wild.json").write_text(json.dumps(spec))
        with np.errstate(all="ignore"):
            code = run("train", "--spec", workspace / "wild.json", "--data", workspace / "ds", "--out",
                       workspace / "mw", "--max-epochs", 5)
        assert code == 3
        assert "diverged" in capsys.readouterr().err


class TestCommands:
    def test_ingest_roundtrip(self, workspace, tmp_path):
        raw = workspace / "raw"
        assert run("ingest", "--incidents", raw / "incidents.csv", "--weather", raw / "weather.csv", "--grid", "3,2",
                   "--bbox", "47.50,47.75,-122.45,-122.25", "--start", "2020-01-06T00:00:00+00:00",
                   "--end", "2020-03-16T00:00:00+00:00", "--out", tmp_path / "ing") == 0
        assert run("features", "--raw", tmp_path / "ing", "--out", tmp_path / "ds", "--granularity", 24,
                   "--look-back", 3) == 0
        a = np.fromfile(tmp_path / "ds" / "cube.bin", dtype="<f8")
        b = np.fromfile(workspace / "ds" / "cube.bin", dtype="<f8")
        np.testing.assert_array_equal(a, b)

    def test_manifest(self, workspace):
        m = json.loads((workspace / "model" / "run_manifest.json").read_text())
        assert m["command"] == "train" and len(m["config_hash"]) == 16
        assert set(m["outputs"]) >= {"model.json", "weights.bin"}
        assert {"numpy", "scipy", "python", "emsforecast"} <= set(m["versions"])

    def test_evaluate_and_report(self, workspace):
        out = workspace / "eval" / "r.json"
        assert run("evaluate", "--model", workspace / "model", "--data", workspace / "ds", "--out", out,
                   "--baselines", "medic,mean,tree") == 0
        rep = json.loads(out.read_text())
        assert {r["model_id"] for r in rep["comparison"]} == {"cnn", "medic", "global-mean", "tree"}
        assert rep["n_zero"] + rep["n_nonzero"] > 0 and rep["nrmse"] > 0
        assert run("report", out, "--out", workspace / "rep") == 0
        rows = list(csv.DictReader(open(workspace / "rep" / "comparison.csv")))
        assert [int(r["rank"]) for r in rows] == [1, 2, 3, 4]

    def test_predict_csv(self, workspace):
        out = workspace / "pred.csv"
        assert run("predict", "--model", workspace / "model", "--data", workspace / "ds", "--out", out) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) % 6 == 0 and all(float(r["prediction"]) >= 0 for r in rows)

    def test_shap(self, workspace):
        out = workspace / "shap"
        assert run("shap", "--model", workspace / "model", "--data", workspace / "ds", "--out", out,
                   "--background", 10, "--samples", 2, "--permutations", 5) == 0
        doc = json.loads((out / "shap.json").read_text())
        assert doc["target"] == "heatmap_sum" and len(doc["samples"]) == 2
        assert run("shap", "--model", workspace / "model", "--data", workspace / "ds", "--out", out,
                   "--cell", "9,9") == 1

    def test_sensitivity(self, workspace):
        out = workspace / "sens"
        assert run("sensitivity", "--raw", workspace / "raw", "--out", out, "--look-back", 3,
                   "--granularities", "12,24") == 0
        rows = list(csv.DictReader(open(out / "sensitivity.csv")))
        assert [(r["granularity"], r["model_id"]) for r in rows] == [("12", "medic"), ("24", "medic")]

    def test_benchmark_trees(self, workspace):
        (workspace / "grid.json").write_text(json.dumps({"max_depth": [1, 2], "min_samples_leaf": [1]}))
        assert run("benchmark", "trees", "--data", workspace / "ds", "--grid", workspace / "grid.json",
                   "--out", workspace / "trees") == 0
        doc = json.loads((workspace / "trees" / "trees.json").read_text())
        assert len(doc["rows"]) == 2

    def test_medic_beats_global_mean_on_weekly_data(self, tmp_path):
        assert run("synth", "--out", tmp_path / "raw", "--days", 140, "--seed", 0, "--hotspot-velocity", 0, 0) == 0
        assert run("features", "--raw", tmp_path / "raw", "--out", tmp_path / "ds") == 0
        assert run("medic", "--data", tmp_path / "ds", "--out", tmp_path / "medic.json") == 0
        rep = json.loads((tmp_path / "medic.json").read_text())
        mean = next(r for r in rep["comparison"] if r["model_id"] == "global-mean")
        assert rep["mse"] < mean["mse"]

    def test_hier_feature_selection_levels(self, workspace):
        out = workspace / "tune"
        assert run("tune", "--data", workspace / "ds", "--out", out, "--strategy", "bo-hier", "--feature-selection",
                   "--budget-init", 2, "--budget", 2, "--small", "--max-epochs", 2, "--patience", 1,
                   "--candidates", 50) == 0
        rows = list(csv.DictReader(open(out / "trace.csv")))
        space = json.loads((out / "space.json").read_text())
        flags = {d["name"] for d in space["space"]["dims"] if d["kind"] == "binary_feature"}
        assert flags
        level0 = [r for r in rows if r["provenance"] == "hier0"]
        assert len(level0) == 4
        init = [r for r in rows if r["provenance"] == "random"]
        inc = json.loads(min(init, key=lambda r: float(r["value"]))["theta_json"])
        for r in level0:
            theta = json.loads(r["theta_json"])
            changed = {k for k in theta if theta[k] != inc[k]}
            assert changed <= flags

    def test_idempotent(self, workspace, tmp_path):
        for k in (1, 2):
            assert run("medic", "--data", workspace / "ds", "--out", tmp_path / f"m{k}.json") == 0
        assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
