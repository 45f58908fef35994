# tests/test_cli.py

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from confsel.cli import main as cli
from confsel.cli.main import main
from confsel.services.dataset import RawDataset, read_header
from confsel.services.dgp import TRUE_ACE_SEED


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.csv"
    assert main(["simulate", "--n", "400", "--p-total", "12", "--seed", "5", "--out", str(path)]) == 0
    return path


class TestSimulate:
    def test_writes_header_and_columns(self, dataset):
        header = read_header(dataset)
        assert header["seed"] == "5"
        assert header["command"] == "simulate"
        assert header["true_ace_seed"] == str(TRUE_ACE_SEED)
        assert header["alpha"] == "0.05" and header["variable_order"] == "max_min"
        raw = RawDataset.from_csv(dataset)
        assert raw.n == 400
        assert raw.covariates == [f"X{k}" for k in range(1, 13)]

    def test_same_seed_same_file(self, dataset, tmp_path):
        again = tmp_path / "again.csv"
        assert main(["simulate", "--n", "400", "--p-total", "12", "--seed", "5", "--out", str(again)]) == 0
        assert again.read_text() == dataset.read_text()

    def test_no_audit(self, tmp_path):
        path = tmp_path / "plain.csv"
        assert main(["simulate", "--n", "50", "--p-total", "10", "--no-audit", "--out", str(path)]) == 0
        assert not any(c.startswith("audit_") for c in pd.read_csv(path, comment="#").columns)


class TestSelect:
    def test_prints_six_sets_deterministically(self, dataset, capsys):
        assert main(["select", "--data", str(dataset)]) == 0
        first = capsys.readouterr().out
        assert main(["select", "--data", str(dataset)]) == 0
        assert capsys.readouterr().out == first
        names = [line.split("=", 1)[0] for line in first.splitlines()]
        assert names == ["xt", "qt", "xy", "zy", "xty", "wy"]

    def test_writes_sets_file(self, dataset, tmp_path, capsys):
        out = tmp_path / "sets.txt"
        assert main(["select", "--data", str(dataset), "--method", "mmhc", "--arms", "--out", str(out)]) == 0
        text = out.read_text()
        assert "# command=select" in text
        assert "qt0=" in text and "wy1=" in text


class TestEstimate:
    def test_empty_set_is_difference_in_means(self, dataset, tmp_path):
        out = tmp_path / "est.csv"
        assert main(["estimate", "--data", str(dataset), "--set", "", "--estimator", "psm", "--out", str(out)]) == 0
        row = pd.read_csv(out, comment="#").iloc[0]
        frame = pd.read_csv(dataset, comment="#")
        expected = frame.loc[frame["T"] == 1, "Y"].mean() - frame.loc[frame["T"] == 0, "Y"].mean()
        assert_allclose(row["beta_hat"], expected, atol=1e-9)
        assert row["set"] == "custom"

    def test_both_estimators_from_sets_file(self, dataset, tmp_path):
        sets = tmp_path / "sets.txt"
        assert main(["select", "--data", str(dataset), "--out", str(sets)]) == 0
        out = tmp_path / "est.csv"
        assert main(["estimate", "--data", str(dataset), "--sets-file", str(sets), "--set-name", "qt", "--out", str(out)]) == 0
        rows = pd.read_csv(out, comment="#")
        assert rows["estimator"].tolist() == ["psm", "tmle"]
        assert (rows["set"] == "qt").all()

    def test_unknown_covariate_is_a_usage_error(self, dataset):
        assert main(["estimate", "--data", str(dataset), "--set", "X1,X99"]) == 2

    def test_set_and_sets_file_are_exclusive(self, dataset, tmp_path):
        assert main(["estimate", "--data", str(dataset), "--set", "X1", "--sets-file", str(tmp_path / "s.txt")]) == 2

    def test_singular_fit_is_an_estimation_error(self, dataset, monkeypatch):
        def singular(*args, **kwargs):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr(cli, "psm_ace", singular)
        assert main(["estimate", "--data", str(dataset), "--set", "X1", "--estimator", "psm"]) == 4


class TestEvaluate:
    def test_tiny_grid(self, tmp_path):
        outdir = tmp_path / "results"
        argv = [
            "evaluate", "--sizes", "300", "--p-total", "10", "--replications", "1", "--methods", "mmpc",
            "--estimators", "psm", "--workers", "1", "--seed", "3", "--outdir", str(outdir),
        ]
        assert main(argv) == 0
        metrics = pd.read_csv(outdir / "metrics.csv", comment="#")
        assert len(metrics) == 7
        assert read_header(outdir / "raw.csv")["true_ace_setting1_linear"] == "2.0"


class TestErrors:
    def test_oracle_check_passes(self, capsys):
        assert main(["oracle-check"]) == 0
        assert "pass" in capsys.readouterr().out

    def test_unknown_flag(self):
        assert main(["select", "--bogus"]) == 2

    def test_invalid_setting_value(self, dataset):
        assert main(["select", "--data", str(dataset), "--alpha", "2"]) == 2

    def test_missing_data_file(self, tmp_path):
        assert main(["select", "--data", str(tmp_path / "missing.csv")]) == 3

    def test_help(self):
        assert main(["--help"]) == 0

    def test_config_file(self, dataset, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("# strict run\nalpha = 0.01\nbins=4\n")
        out = tmp_path / "sets.txt"
        assert main(["select", "--data", str(dataset), "--config", str(config), "--out", str(out)]) == 0
        header = read_header(out)
        assert header["alpha"] == "0.01" and header["bins"] == "4"

    def test_malformed_config_file(self, dataset, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("alpha 0.1\n")
        assert main(["select", "--data", str(dataset), "--config", str(config)]) == 2

    def test_missing_config_file(self, dataset, tmp_path):
        assert main(["select", "--data", str(dataset), "--config", str(tmp_path / "absent.cfg")]) == 2
