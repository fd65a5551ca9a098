import csv
import json
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from defacto.cli import EXIT_CONVERGENCE, EXIT_IO, EXIT_OK, EXIT_VALIDATION, config_hash, main

from conftest import simulate_trial


@pytest.fixture(scope="module")
def trial_csv(tmp_path_factory):
    d = simulate_trial(60, seed=31, covariates=True)
    path = tmp_path_factory.mktemp("data") / "trial.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "arm", "visit", "outcome", "sex"])
        for i in range(d.n):
            for v in range(3):
                val = d.y[i, v]
                w.writerow([d.subject_ids[i], d.arm[i], v, "" if np.isnan(val) else float(val),
                            int(d.covariates[i, 0])])
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return main([str(a) for a in argv])


def test_analyze_writes_results_and_manifest(trial_csv, tmp_path, capsys):
    out = tmp_path / "j2r"
    assert run("analyze", "-i", trial_csv, "-o", out, "--m", 5, "--seed", 3,
               "--set", "columns.covariates=[sex]", "--set", "burn_in=5") == EXIT_OK
    assert "estimate" in capsys.readouterr().out
    pooled = read_csv(out / "pooled.csv")[0]
    assert float(pooled["se"]) > 0
    assert int(pooled["m"]) == 5
    assert len(read_csv(out / "per_imputation.csv")) == 5
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 3
    assert man["command"] == "analyze"
    assert man["config_hash"] == config_hash(man["config"])
    assert set(man["outputs"]) == {"per_imputation.csv", "pooled.csv", "draws_summary.csv"}


def test_causal_one_matches_cir_byte_for_byte(trial_csv, tmp_path):
    common = ["-i", trial_csv, "--m", 4, "--seed", 9, "--set", "burn_in=5"]
    assert run("analyze", "-o", tmp_path / "cir", "--method", "CIR", *common) == EXIT_OK
    assert run("analyze", "-o", tmp_path / "causal", "--method", "Causal", "--k0", 1.0, *common) == EXIT_OK
    for name in ("per_imputation.csv", "pooled.csv", "draws_summary.csv"):
        assert (tmp_path / "cir" / name).read_bytes() == (tmp_path / "causal" / name).read_bytes()


def test_manifest_reproduces_run(trial_csv, tmp_path):
    first = tmp_path / "first"
    assert run("analyze", "-i", trial_csv, "-o", first, "--m", 3, "--seed", 4, "--method", "CR",
               "--set", "burn_in=3") == EXIT_OK
    again = tmp_path / "again"
    assert run("analyze", "--config", first / "manifest.json", "-o", again) == EXIT_OK
    for name in ("per_imputation.csv", "pooled.csv", "draws_summary.csv"):
        assert (first / name).read_bytes() == (again / name).read_bytes()


def test_yaml_config_and_flag_override(trial_csv, tmp_path):
    cfg = {"input": str(trial_csv), "output": str(tmp_path / "from_yaml"), "m": 3, "seed": 1, "burn_in": 3,
           "method": {"name": "Causal", "k0": 0.5}, "closed_form": True}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert run("analyze", "-c", path, "--m", 4) == EXIT_OK
    out = tmp_path / "from_yaml"
    assert int(read_csv(out / "pooled.csv")[0]["m"]) == 4
    approaches = [r["approach"] for r in read_csv(out / "closed_form.csv")]
    assert approaches == ["linear_combination", "j2r_plus_correction", "multiple_imputation"]


def test_fit_and_impute(trial_csv, tmp_path):
    assert run("fit", "-i", trial_csv, "-o", tmp_path / "fit") == EXIT_OK
    doc = json.loads((tmp_path / "fit" / "fit.json").read_text())
    assert doc["subjects"] == 120
    assert len(doc["mmrm"]["delta"]) == 2
    assert sum(doc["alpha"]) == pytest.approx(1.0)
    assert run("impute", "-i", trial_csv, "-o", tmp_path / "imp", "--m", 2, "--set", "burn_in=2") == EXIT_OK
    rows = read_csv(tmp_path / "imp" / "imputations.csv")
    assert len(rows) == 2 * 120 * 3
    assert all(r["value"] not in ("", "nan") for r in rows)


def test_tipping_point_outputs(trial_csv, tmp_path, capsys):
    out = tmp_path / "tip"
    assert run("tipping-point", "-i", trial_csv, "-o", out, "--m", 4, "--range", -1, 1,
               "--set", "tipping.n_grid=3", "--set", "tipping.bisect_steps=4", "--set", "burn_in=2") == EXIT_OK
    assert "tipping-point" in capsys.readouterr().out
    rows = read_csv(out / "tipping.csv")
    assert [float(r["k"]) for r in rows] == [-1.0, 0.0, 1.0]
    assert set(rows[0]) == {"k", "estimate", "se", "ci_low", "ci_high", "p"}
    root = ET.fromstring((out / "tipping.svg").read_text())
    assert root.tag.endswith("svg")
    assert (out / "crossing.csv").exists()


def test_simulate_smoke_and_determinism(tmp_path):
    start = time.perf_counter()
    assert run("simulate", "-o", tmp_path / "s1", "--reps", 10, "--seed", 5) == EXIT_OK
    assert time.perf_counter() - start < 30
    assert run("simulate", "-o", tmp_path / "s2", "--reps", 10, "--seed", 5) == EXIT_OK
    for name in ("cells.csv", "means.csv", "standard_errors.csv", "failures.csv"):
        assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()
    t3 = read_csv(tmp_path / "s1" / "means.csv")
    assert len(t3) == 4 * 22
    assert all(r["reps"] == "10" for r in t3)


class TestExitCodes:
    def test_missing_input_file(self, tmp_path):
        assert run("analyze", "-i", tmp_path / "nope.csv", "-o", tmp_path / "o") == EXIT_IO

    def test_no_input(self, tmp_path):
        assert run("analyze", "-o", tmp_path / "o") == EXIT_VALIDATION

    def test_bad_column(self, trial_csv, tmp_path):
        assert run("fit", "-i", trial_csv, "-o", tmp_path / "o", "--set", "columns.outcome=score") \
            == EXIT_VALIDATION

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("imputations: 5\n")
        assert run("analyze", "-c", path) == EXIT_VALIDATION

    def test_malformed_set(self, trial_csv, tmp_path):
        assert run("analyze", "-i", trial_csv, "--set", "m") == EXIT_VALIDATION

    def test_convergence_failure(self, trial_csv, tmp_path):
        assert run("fit", "-i", trial_csv, "-o", tmp_path / "o", "--set", "fit.max_iter=1",
                   "--set", "fit.tol=1e-14") == EXIT_CONVERGENCE

    def test_parse_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("subject,arm,visit,outcome\n1,active,0,x\n")
        assert run("fit", "-i", path, "-o", tmp_path / "o") == EXIT_VALIDATION
