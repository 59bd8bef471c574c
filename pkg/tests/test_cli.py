import csv
import json
from pathlib import Path

import numpy as np
import pytest

from netgee.cli import main

DATA = Path(__file__).parent / "data"
FIT = DATA / "fit_small"
PIPE = DATA / "pipeline5"


def run(*argv) -> int:
    return main([str(a) for a in argv] + ["--log-level", "WARNING"])


def fit_inputs(folder=FIT):
    return ["--graph", folder / "graph.csv", "--design", folder / "design.csv", "--outcome", folder / "outcome.csv"]


def csv_outputs(folder: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(folder.glob("*.csv"))}


class TestSimulate:
    def test_writes_one_set_per_replication(self, tmp_path):
        assert run("simulate", "--n", 200, "--k", 20, "--p", 0.8, "--q", 0, "--link", "identity", "--reps", 3, "--seed", 7, "--out", tmp_path) == 0
        assert sorted(p.name for p in tmp_path.glob("graph_*.csv")) == ["graph_0.csv", "graph_1.csv", "graph_2.csv"]
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 7
        assert len(manifest["outputs"]) == 12

    def test_rerun_is_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("simulate", "--n", 40, "--k", 4, "--p", 0.8, "--q", 0.1, "--reps", 2, "--seed", 7, "--out", tmp_path / d) == 0
        assert csv_outputs(tmp_path / "a") == csv_outputs(tmp_path / "b")

    def test_indivisible_sizes_are_a_usage_error(self, tmp_path, capsys):
        assert run("simulate", "--n", 201, "--k", 20, "--p", 0.8, "--q", 0, "--out", tmp_path) == 2
        assert "divisible" in capsys.readouterr().err

    def test_bad_probability(self, tmp_path):
        assert run("simulate", "--n", 20, "--k", 2, "--p", 1.5, "--q", 0, "--out", tmp_path) == 2


class TestFit:
    def test_matches_golden_json(self, tmp_path):
        assert run("fit", *fit_inputs(), "--partition", FIT / "partition.csv", "--corr", "exch", "--out", tmp_path) == 0
        got = json.loads((tmp_path / "fit.json").read_text())
        golden = json.loads((FIT / "golden_fit_exch.json").read_text())
        assert got.keys() == golden.keys()
        for key, ref in golden.items():
            if isinstance(ref, (list, float)) and key != "coefficients":
                np.testing.assert_allclose(np.asarray(got[key], float), np.asarray(ref, float), rtol=1e-8, atol=1e-8, err_msg=key)
            else:
                assert got[key] == ref, key
        assert (tmp_path / "partition.csv").read_bytes() == (FIT / "partition.csv").read_bytes()

    @pytest.mark.parametrize("link", ["identity", "logit"])
    def test_full_independence_equals_naive(self, tmp_path, link):
        folder = FIT
        if link == "logit":
            folder = tmp_path / "sim"
            assert run("simulate", "--n", 100, "--k", 10, "--p", 0.8, "--q", 0.02, "--beta0", 0.5, "--link", "logit", "--seed", 5, "--out", folder) == 0
            for name in ("graph", "design", "outcome"):
                (folder / f"{name}_0.csv").rename(folder / f"{name}.csv")
        assert run("fit", *fit_inputs(folder), "--link", link, "--corr", "indep", "--zmode", "full", "--detect", "modularity", "--out", tmp_path / "gee") in (0, 3)
        assert run("fit-naive", *fit_inputs(folder), "--link", link, "--out", tmp_path / "naive") in (0, 3)
        gee = json.loads((tmp_path / "gee" / "fit.json").read_text())
        naive = json.loads((tmp_path / "naive" / "fit.json").read_text())
        assert gee["converged"] and naive["converged"]
        np.testing.assert_allclose(gee["estimates"], naive["estimates"], rtol=0, atol=1e-8)

    def test_missing_file_is_exit_2_with_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert run("fit", "--graph", missing, "--design", FIT / "design.csv", "--outcome", FIT / "outcome.csv", "--out", tmp_path) == 2
        assert str(missing) in capsys.readouterr().err

    def test_solver_error_is_exit_3(self, tmp_path, capsys):
        # an edgeless graph leaves the network covariate identically zero
        n = 100
        (tmp_path / "graph.csv").write_text((",".join(["0"] * n) + "\n") * n)
        (tmp_path / "blocks.csv").write_text("node_id,label\n" + "".join(f"{i},{i // 10 + 1}\n" for i in range(n)))
        code = run(
            "fit", "--graph", tmp_path / "graph.csv", "--design", FIT / "design.csv", "--outcome", FIT / "outcome.csv",
            "--partition", tmp_path / "blocks.csv", "--out", tmp_path / "o",
        )
        assert code == 3
        assert "solver error" in capsys.readouterr().err

    def test_dimension_mismatch_is_usage_error(self, tmp_path):
        assert run("fit", "--graph", PIPE / "expected_adjacency_unweighted.csv", "--design", FIT / "design.csv", "--outcome", FIT / "outcome.csv", "--out", tmp_path) == 2


class TestConfigAndManifest:
    def test_config_file_mirrors_flags(self, tmp_path):
        args = fit_inputs()
        cfg = {"graph": str(args[1]), "design": str(args[3]), "outcome": str(args[5]), "corr": "exch", "partition": str(FIT / "partition.csv")}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert run("fit", "--config", tmp_path / "cfg.json", "--out", tmp_path / "a") == 0
        assert run("fit", *args, "--corr", "exch", "--partition", FIT / "partition.csv", "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "fit.json").read_bytes() == (tmp_path / "b" / "fit.json").read_bytes()

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "cfg.json").write_text(json.dumps({"corrr": "exch"}))
        assert run("fit", "--config", tmp_path / "cfg.json", *fit_inputs(), "--out", tmp_path) == 2
        assert "corrr" in capsys.readouterr().err

    def test_manifest_rerun_is_byte_identical(self, tmp_path):
        assert run("simulate", "--n", 40, "--k", 4, "--p", 0.7, "--q", 0.1, "--reps", 2, "--seed", 3, "--out", tmp_path / "a") == 0
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["schema_version"] == 1
        assert {"command", "config", "seed", "timestamp", "version", "outputs"} <= manifest.keys()
        assert run("simulate", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
        assert csv_outputs(tmp_path / "a") == csv_outputs(tmp_path / "b")
        again = json.loads((tmp_path / "b" / "manifest.json").read_text())
        for m in (manifest, again):
            del m["timestamp"], m["config"]["out"]
        assert again == manifest

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NETGEE_THREADS", "1")
        assert run("reproduce", "fig1", "--reps", 2, "--detect", "oracle", "--out", tmp_path) == 0


class TestPipeline:
    def test_fixture_golden_and_chain_into_fit(self, tmp_path):
        out = tmp_path / "p"
        assert run("pipeline", "--flights", PIPE / "flights.csv", "--covariates", PIPE / "covariates.csv", "--outcome", "aid", "--month", "2020-03", "--out", out) == 0
        assert (out / "adjacency.csv").read_bytes() == (PIPE / "expected_adjacency_unweighted.csv").read_bytes()
        assert (out / "outcome.csv").read_bytes() == (PIPE / "expected_outcome_aid.csv").read_bytes()
        report = json.loads((out / "join_report.json").read_text())
        assert report["third_quartile"] == 14.25 and report["median_aid"] == 30.0
        # five nodes cannot support four covariates plus the network term, the failure must be a clean exit code
        code = run("fit-naive", "--graph", out / "adjacency.csv", "--design", out / "design.csv", "--outcome", out / "outcome.csv", "--out", tmp_path / "f")
        assert code in (0, 3)

    def test_weighted_mode(self, tmp_path):
        assert run("pipeline", "--flights", PIPE / "flights.csv", "--covariates", PIPE / "covariates.csv", "--mode", "weighted", "--month", "2020-03", "--out", tmp_path) == 0
        from netgee._csvio import read_matrix

        w = read_matrix(tmp_path / "adjacency.csv")
        assert w[3, 4] == 15 / 330  # IN -> US over US population in millions

    def test_parse_error_is_exit_2(self, tmp_path):
        (tmp_path / "bad.csv").write_text("origin_code,dest_code,count\nUS,FR,x\n")
        assert run("pipeline", "--flights", tmp_path / "bad.csv", "--covariates", PIPE / "covariates.csv", "--out", tmp_path / "o") == 2


class TestReproduce:
    def test_fig1_shape(self, tmp_path):
        assert run("reproduce", "fig1", "--scale", "desk", "--reps", 4, "--out", tmp_path) == 0
        with open(tmp_path / "fig1.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 4 * 2
        assert {(r["n"], r["method"]) for r in rows} == {(n, m) for n in ("200", "400") for m in ("gee-indep", "naive")}
        assert (tmp_path / "fig1_comparison.json").exists()

    def test_ratecheck_small(self, tmp_path):
        assert run("reproduce", "ratecheck", "--reps", 20, "--out", tmp_path) == 0
        comparison = json.loads((tmp_path / "ratecheck_comparison.json").read_text())
        assert "p_sd_nonincreasing" in comparison
