"""End-to-end tests of the command-line interface (in-process via main())."""

import json
import shutil
import subprocess

import numpy as np
import pytest

from ltest.cli import main


def write_dataset(path, X, y, names=None):
    n, d = X.shape
    names = names or [f"x{j}" for j in range(d)]
    with open(path, "w") as fh:
        fh.write("y," + ",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(f"{v:.12g}" for v in [y[i], *X[i]]) + "\n")
    return path


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 5))
    y = X[:, 0] + 0.5 * X[:, 3] + rng.standard_normal(30)
    return write_dataset(tmp_path / "data.csv", X, y)


def run_cli(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestTestCommand:
    def test_f_on_hand_checkable_design(self, tmp_path, capsys):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        y = np.array([1.0, 1.0, 1.0])
        path = write_dataset(tmp_path / "tiny.csv", X, y, names=["a", "b"])
        code, out, _ = run_cli(["test", "--data", str(path), "--response", "y",
                                "--group", "g=a", "--method", "f"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["schema"] == 1
        (res,) = report["results"]
        assert res["statistic"] == pytest.approx(1.0)
        assert res["p_value"] == pytest.approx(0.5)
        assert res["group"] == "g"
        assert res["columns"] == ["a"]
        assert (res["n"], res["d"], res["k"]) == (3, 2, 1)

    def test_multiple_groups_roundtrip(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "first=x0,x1", "--group", "rest=x3",
                                "--method", "f"], capsys)
        assert code == 0
        res = json.loads(out)["results"]
        assert [r["group"] for r in res] == ["first", "rest"]
        assert res[0]["columns"] == ["x0", "x1"] and res[0]["k"] == 2
        assert res[1]["columns"] == ["x3"] and res[1]["k"] == 1

    def test_l_method_reports_tuning_and_detail(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "g=x0", "--method", "l",
                                "--mc-samples", "80", "--seed", "3"], capsys)
        assert code == 0
        (res,) = json.loads(out)["results"]
        assert res["mc_samples"] == 80
        assert res["lam"] > 0
        assert len(res["b_star"]) == 1
        assert "ge_count" in res["detail"]

    def test_byte_identical_across_runs_and_threads(self, dataset, capsys):
        argv = ["test", "--data", str(dataset), "--response", "y",
                "--group", "g=x0,x1", "--method", "l", "--seed", "11"]
        _, out1, _ = run_cli(argv + ["--threads", "1"], capsys)
        _, out2, _ = run_cli(argv + ["--threads", "4"], capsys)
        assert out1 == out2

    def test_intercept_joins_nuisance(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "g=x0", "--method", "f",
                                "--intercept"], capsys)
        assert code == 0
        (res,) = json.loads(out)["results"]
        assert res["d"] == 6  # five covariates plus the constant column
        assert res["k"] == 1  # the tested group never grows

    def test_standardize_flag(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "g=x0", "--method", "f",
                                "--standardize", "--intercept"], capsys)
        assert code == 0  # intercept survives standardization

    def test_csv_output(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "g=x0", "--method", "f",
                                "--out", "csv"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].startswith("group,method,k,n,d,statistic,p_value")
        assert lines[1].startswith("g,f,1,30,5,")

    def test_mcfree_reports_branch(self, dataset, capsys):
        code, out, _ = run_cli(["test", "--data", str(dataset), "--response", "y",
                                "--group", "g=x0", "--method", "mcfree",
                                "--seed", "2"], capsys)
        assert code == 0
        (res,) = json.loads(out)["results"]
        assert res["detail"]["branch"] == "k1-closed-form"


class TestTestCommandErrors:
    def test_missing_response_column(self, dataset, capsys):
        code, _, err = run_cli(["test", "--data", str(dataset), "--response", "z",
                                "--group", "g=x0"], capsys)
        assert code == 3
        assert "z" in err

    def test_unknown_group_column(self, dataset, capsys):
        code, *_ = run_cli(["test", "--data", str(dataset), "--response", "y",
                            "--group", "g=x9"], capsys)
        assert code == 3

    def test_malformed_group_flag(self, dataset, capsys):
        code, *_ = run_cli(["test", "--data", str(dataset), "--response", "y",
                            "--group", "no-equals-sign"], capsys)
        assert code == 2

    def test_bad_alpha(self, dataset, capsys):
        code, *_ = run_cli(["test", "--data", str(dataset), "--response", "y",
                            "--group", "g=x0", "--alpha", "2.0"], capsys)
        assert code == 2

    def test_bad_mc_samples(self, dataset, capsys):
        code, *_ = run_cli(["test", "--data", str(dataset), "--response", "y",
                            "--group", "g=x0", "--mc-samples", "0"], capsys)
        assert code == 2

    def test_non_numeric_field(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("y,a\n1.0,2.0\n3.0,oops\n")
        code, _, err = run_cli(["test", "--data", str(path), "--response", "y",
                                "--group", "g=a"], capsys)
        assert code == 3
        assert "oops" in err and ":3" in err  # file:line diagnostics

    def test_ragged_row(self, tmp_path, capsys):
        path = tmp_path / "ragged.csv"
        path.write_text("y,a,b\n1.0,2.0,3.0\n1.0,2.0\n")
        code, *_ = run_cli(["test", "--data", str(path), "--response", "y",
                            "--group", "g=a"], capsys)
        assert code == 3

    def test_too_few_rows(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        path = write_dataset(tmp_path / "wide.csv", rng.standard_normal((4, 5)),
                             rng.standard_normal(4))
        code, *_ = run_cli(["test", "--data", str(path), "--response", "y",
                            "--group", "g=x0"], capsys)
        assert code == 3

    def test_numerical_failure_is_exit_4(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 3))
        X = np.hstack([X, X[:, :1]])  # duplicate column => rank deficient
        path = write_dataset(tmp_path / "dup.csv", X, rng.standard_normal(20))
        code, *_ = run_cli(["test", "--data", str(path), "--response", "y",
                            "--group", "g=x0"], capsys)
        assert code == 4

    def test_missing_file(self, capsys):
        code, *_ = run_cli(["test", "--data", "/nonexistent.csv", "--response", "y",
                            "--group", "g=a"], capsys)
        assert code == 3


class TestAdjustCommand:
    def test_holm_plain_list(self, tmp_path, capsys):
        path = tmp_path / "p.txt"
        path.write_text("0.01\n0.03\n0.04\n")
        code, out, _ = run_cli(["adjust", "--pvalues", str(path),
                                "--procedure", "holm", "--level", "0.05"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["n_rejected"] == 1
        assert [r["rejected"] for r in report["results"]] == [True, False, False]

    def test_bh_csv_column(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("name,p\na,0.01\nb,0.02\nc,0.05\nd,0.9\n")
        code, out, _ = run_cli(["adjust", "--pvalues", str(path),
                                "--procedure", "bh", "--level", "0.1"], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["n_rejected"] == 3

    def test_explicit_column(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("pv,other\n0.001,9\n0.5,9\n")
        code, out, _ = run_cli(["adjust", "--pvalues", str(path), "--column", "pv",
                                "--procedure", "bh", "--level", "0.1"], capsys)
        assert code == 0
        assert json.loads(out)["n_rejected"] == 1

    def test_csv_output(self, tmp_path, capsys):
        path = tmp_path / "p.txt"
        path.write_text("0.001\n0.5\n")
        code, out, _ = run_cli(["adjust", "--pvalues", str(path),
                                "--procedure", "holm", "--level", "0.05",
                                "--out", "csv"], capsys)
        assert code == 0
        assert out.splitlines()[0] == "index,p,rejected"

    def test_bad_level_beats_file_errors(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        path.write_text("not,really\na,csv\n")
        code, *_ = run_cli(["adjust", "--pvalues", str(path),
                            "--procedure", "holm", "--level", "1.5"], capsys)
        assert code == 2  # usage error wins over the unreadable file

    def test_out_of_range_pvalue(self, tmp_path, capsys):
        path = tmp_path / "p.txt"
        path.write_text("0.5\n1.2\n")
        code, _, err = run_cli(["adjust", "--pvalues", str(path),
                                "--procedure", "holm", "--level", "0.05"], capsys)
        assert code == 3
        assert "1.2" in err


class TestSimulateCommand:
    CONFIG = {
        "scenarios": [{"n": 30, "d": 6, "k": 2, "amp": 1.0, "k1": 1,
                       "reps": 4, "mc_samples": 30, "seed": 9}],
        "methods": ["f", "l"],
    }

    def test_writes_results_and_manifest(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps(self.CONFIG))
        out_csv = tmp_path / "res.csv"
        out_man = tmp_path / "man.json"
        code, out, _ = run_cli(["simulate", "--config", str(cfg),
                                "--out-csv", str(out_csv),
                                "--out-manifest", str(out_man)], capsys)
        assert code == 0
        assert "2 records" in out
        lines = out_csv.read_text().splitlines()
        assert len(lines) == 3
        manifest = json.loads(out_man.read_text())
        assert manifest["schema"] == 1
        assert manifest["methods"] == ["f", "l"]
        assert manifest["configs"][0]["reps"] == 4

    def test_outputs_deterministic(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps(self.CONFIG))
        blobs = []
        for run in range(2):
            out_csv = tmp_path / f"r{run}.csv"
            run_cli(["simulate", "--config", str(cfg), "--out-csv", str(out_csv),
                     "--out-manifest", str(tmp_path / f"m{run}.json")], capsys)
            blobs.append(out_csv.read_bytes())
        assert blobs[0] == blobs[1]

    def test_unknown_scenario_key(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"scenarios": [{"n": 30, "d": 6, "k": 2,
                                                  "walrus": 1}]}))
        code, _, err = run_cli(["simulate", "--config", str(cfg)], capsys)
        assert code == 2
        assert "walrus" in err

    def test_invalid_json(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text("{not json")
        code, *_ = run_cli(["simulate", "--config", str(cfg)], capsys)
        assert code == 3

    def test_impossible_scenario(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"scenarios": [{"n": 10, "d": 20, "k": 2}]}))
        code, *_ = run_cli(["simulate", "--config", str(cfg)], capsys)
        assert code == 2


def test_console_script_installed():
    exe = shutil.which("ltest")
    assert exe is not None
    out = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.strip()
