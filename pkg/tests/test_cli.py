import csv
import os

import numpy as np
import pytest
import yaml

from pemsim.cli import main
from pemsim.config import RunConfig, config_hash, load_config, with_seed
from pemsim.env import build_grid_map

SMALL = {"scenario": {"n_tx": 8}, "bf": {"n_tx_list": [8], "n_trials": 2}}


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


def _run(*argv):
    return main([str(a) for a in argv])


def _files(d):
    out = {}
    for root, _, names in os.walk(d):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, d)] = fh.read()
    return out


def _csv_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def built(cfg_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("pem")
    assert _run("build-pem", "--config", cfg_path, "--out", out) == 0
    return out


class TestExitCodes:
    def test_usage(self, capsys):
        assert _run("build-pem", "--bogus") == 1
        assert _run() == 1
        assert _run("no-such-command") == 1

    def test_missing_config(self, tmp_path):
        assert _run("eval-gridize", "--config", tmp_path / "nope.yaml", "--out", tmp_path) == 1

    def test_invalid_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("measurement:\n  coverage_fraction: 2.0\n")
        assert _run("build-pem", "--config", bad, "--out", tmp_path / "o") == 1

    def test_bad_trials_and_scheme(self, cfg_path, tmp_path):
        assert _run("eval-mcbf", "--config", cfg_path, "--out", tmp_path, "--trials", 0) == 1
        assert _run("eval-mcbf", "--config", cfg_path, "--out", tmp_path, "--schemes", "FOO") == 1

    def test_unwritable_out(self, cfg_path, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert _run("eval-gridize", "--config", cfg_path, "--out", blocker / "sub") == 1

    def test_runtime_failure(self, cfg_path, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert _run("eval-rxbeam", "--config", cfg_path, "--out", tmp_path / "o", "--pem", empty) == 2


class TestBuildPem:
    def test_layout(self, built):
        names = set(os.listdir(built))
        assert {"config.yaml", "mr_records.csv", "traffic_records.csv", "build_report.txt"} <= names
        for c in range(3):
            assert set(os.listdir(built / f"cell_{c}")) == {"ckm.csv", "dtm.csv", "grid.csv", "meta.txt"}

    def test_config_hash_headers(self, built, cfg_path):
        h = config_hash(load_config(cfg_path))
        for rel, data in _files(built).items():
            if rel.endswith((".csv", ".txt")) and not rel.endswith("meta.txt"):
                assert f"config_hash={h}".encode() in data.split(b"\n", 3)[1], rel
        assert f"config_hash={h}" in (built / "cell_0" / "meta.txt").read_text()

    def test_report(self, built):
        text = (built / "build_report.txt").read_text()
        assert "grids=225" in text and "cells=3" in text
        assert "interpolated=0 " in text
        for key in ("aps_residual_mean", "dtm_train_rmse", "measured="):
            assert key in text

    def test_partial_coverage_report(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({**SMALL, "measurement": {"coverage_fraction": 0.6}}))
        assert _run("build-pem", "--config", cfg, "--out", tmp_path / "o") == 0
        line = [l for l in (tmp_path / "o" / "build_report.txt").read_text().splitlines()
                if l.startswith("cell 0:")][0]
        n_interp = int(line.split("interpolated=")[1].split()[0])
        assert abs(n_interp - 0.4 * 225) <= 3 * np.sqrt(225 * 0.6 * 0.4)

    def test_deterministic(self, cfg_path, built, tmp_path):
        assert _run("build-pem", "--config", cfg_path, "--out", tmp_path) == 0
        assert _files(tmp_path) == _files(built)

    def test_seed_changes_output(self, cfg_path, built, tmp_path):
        assert _run("build-pem", "--config", cfg_path, "--out", tmp_path, "--seed", 5) == 0
        assert _files(tmp_path)["mr_records.csv"] != _files(built)["mr_records.csv"]


class TestEvalMcbf:
    def test_filter_and_determinism(self, cfg_path, tmp_path, capsys):
        args = ["eval-mcbf", "--config", cfg_path, "--trials", 1, "--seed", 7,
                "--schemes", "MCBF_IDEAL,PCBF_CONV"]
        assert _run(*args, "--out", tmp_path / "a") == 0
        assert _run(*args, "--out", tmp_path / "b") == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")
        rows = _csv_rows(tmp_path / "a" / "mcbf_results.csv")
        assert {r["scheme"] for r in rows} == {"MCBF_IDEAL", "PCBF_CONV"}
        assert len(rows) == 2
        summary = _csv_rows(tmp_path / "a" / "mcbf_summary.csv")
        assert list(summary[0]) == ["scheme", "n_tx", "mean_esr", "stderr_esr", "n_trials"]
        assert "sum rate MCBF_IDEAL >= PCBF_CONV @ n_tx=8" in capsys.readouterr().out

    def test_full_small_run_with_stored_maps(self, cfg_path, built, tmp_path, capsys):
        assert _run("eval-mcbf", "--config", cfg_path, "--out", tmp_path / "a", "--pem", built) == 0
        printed = capsys.readouterr().out
        assert _run("eval-mcbf", "--config", cfg_path, "--out", tmp_path / "b") == 0
        # stored maps are the same maps the command would build itself
        assert _files(tmp_path / "a") == _files(tmp_path / "b")
        rows = _csv_rows(tmp_path / "a" / "mcbf_results.csv")
        assert len(rows) == 6 * 2
        verdicts = [l for l in printed.splitlines() if l.startswith(("PASS ", "FAIL "))]
        assert any("esr PEMNET_MCBF > MCBF_CONV @ n_tx=8" in l for l in verdicts)
        for r in rows:
            assert float(r["esr"]) == (500 - int(r["n1"])) / 500 * float(r["sum_rate"])


class TestEvalRxbeam:
    def test_outputs(self, cfg_path, tmp_path, capsys):
        assert _run("eval-rxbeam", "--config", cfg_path, "--out", tmp_path / "a") == 0
        summary = _csv_rows(tmp_path / "a" / "rxbeam_summary.csv")
        assert [int(r["d"]) for r in summary] == [2, 4, 8]
        assert all(int(r["n_tx"]) == 16 for r in summary)
        rows = _csv_rows(tmp_path / "a" / "rxbeam_map.csv")
        assert len(rows) == build_grid_map(RunConfig().rxbeam.scenario).n_grids
        assert _run("eval-rxbeam", "--config", cfg_path, "--out", tmp_path / "b") == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")
        assert capsys.readouterr().out.count("PEM >= DFT") >= 3

    def test_stored_map(self, cfg_path, tmp_path):
        assert _run("build-pem", "--study", "rxbeam", "--config", cfg_path, "--out", tmp_path / "m") == 0
        assert _run("eval-rxbeam", "--config", cfg_path, "--out", tmp_path / "a",
                    "--pem", tmp_path / "m") == 0
        assert _run("eval-rxbeam", "--config", cfg_path, "--out", tmp_path / "b") == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")


class TestEvalGridize:
    def test_default(self, cfg_path, tmp_path):
        assert _run("eval-gridize", "--config", cfg_path, "--out", tmp_path / "a") == 0
        report = (tmp_path / "a" / "gridize_report.txt").read_text()
        purity = float(report.split("purity=")[1].split()[0])
        assert purity >= 0.9
        assert _run("eval-gridize", "--config", cfg_path, "--out", tmp_path / "b") == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")

    def test_single_cluster_purity(self, tmp_path):
        gm = build_grid_map(RunConfig().scenario)
        grids = [int(g) for g in gm.grids_of_cell(0)[[0, 5, 10]]]
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({**SMALL, "gridize": {"n_virtual": 1, "grids": grids,
                                                              "records_per_grid": 10}}))
        assert _run("eval-gridize", "--config", cfg, "--out", tmp_path / "o") == 0
        rows = _csv_rows(tmp_path / "o" / "gridize_assignments.csv")
        truth = [int(r["true_grid"]) for r in rows]
        expected = max(truth.count(g) for g in set(truth)) / len(truth)
        report = (tmp_path / "o" / "gridize_report.txt").read_text()
        assert float(report.split("purity=")[1].split()[0]) == pytest.approx(expected, abs=1e-6)
        assert {int(r["virtual_grid"]) for r in rows} == {0}


def test_seed_flag_in_headers(cfg_path, tmp_path):
    assert _run("eval-gridize", "--config", cfg_path, "--out", tmp_path, "--seed", 7) == 0
    head = (tmp_path / "gridize_assignments.csv").read_text().splitlines()[:3]
    assert head == ["# command=eval-gridize",
                    f"# config_hash={config_hash(with_seed(load_config(cfg_path), 7))}", "# seed=7"]
