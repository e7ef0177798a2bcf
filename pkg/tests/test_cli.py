import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from opj.cli import main

from conftest import TOY_COUNTS, toy_values


def write_csv(path, w, y, x):
    x = np.asarray(x, dtype=float).reshape(len(w), -1)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["w", "y"] + [f"x{j + 1}" for j in range(x.shape[1])])
        for wi, yi, xi in zip(w, y, x):
            out.writerow([int(wi), repr(float(yi)), *map(repr, xi.tolist())])
    return str(path)


@pytest.fixture
def data_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 400
    x = rng.normal(size=(n, 2))
    w = np.tile([0, 1], n // 2)
    y = 1 + 3 * x[:, 0] - 2 * x[:, 1] + 0.3 * w + rng.normal(size=n)
    return write_csv(tmp_path / "d.csv", w, y, x)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestAnalyze:
    def test_byte_identical(self, data_csv, capsys):
        argv = ["analyze", "--data", data_csv, "--method", "opj", "--estimand", "difference", "--seed", "7"]
        first = run(argv, capsys)
        second = run(argv, capsys)
        assert first[0] == 0 and first == second
        report = json.loads(first[1])
        assert report["method"] == "opj" and report["config"]["seed"] == 7
        assert report["ci_low"] <= report["point"] <= report["ci_high"]
        assert (report["n"], report["n0"], report["n1"]) == (400, 200, 200)

    @pytest.mark.parametrize("method", ["base", "impute"])
    def test_other_methods(self, data_csv, capsys, method):
        code, out, _ = run(["analyze", "--data", data_csv, "--method", method, "--estimand", "ratio"], capsys)
        assert code == 0 and json.loads(out)["method"] == method

    def test_six_significant_digits(self, data_csv, capsys):
        _, out, _ = run(["analyze", "--data", data_csv], capsys)
        for key in ("point", "se", "ci_low", "ci_high"):
            value = json.loads(out)[key]
            assert value == float(f"{value:.6g}")

    def test_trace_and_out_files(self, data_csv, tmp_path, capsys):
        out_path, trace = tmp_path / "r.json", tmp_path / "t.csv"
        code, out, _ = run(["analyze", "--data", data_csv, "--iterations", "12", "--out", str(out_path),
                            "--trace-out", str(trace)], capsys)
        assert code == 0 and out == ""
        assert json.loads(out_path.read_text())["config"]["M"] == 12
        t = rows(trace.read_text())
        assert len(t) == 12 and list(t[0]) == ["m", "deleted_buckets", "estimate", "merges", "strata"]
        assert len(t[0]["deleted_buckets"].split()) == 4

    def test_constant_outcome_base(self, tmp_path, capsys):
        path = write_csv(tmp_path / "c.csv", [0, 1] * 10, [4.0] * 20, np.arange(20))
        code, out, _ = run(["analyze", "--data", path, "--method", "base"], capsys)
        report = json.loads(out)
        assert code == 0 and report["point"] == 0 and report["se"] == 0

    def test_bad_indicator_cites_row(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("w,y,x1\n0,1,2\n1,2,3\n2,3,4\n")
        code, out, err = run(["analyze", "--data", str(p)], capsys)
        assert code == 2 and out == ""
        assert err.startswith("error:MalformedInput:") and "row 4" in err and err.count("\n") == 1

    def test_estimation_error_exit_3(self, tmp_path, capsys):
        path = write_csv(tmp_path / "small.csv", [0, 1] * 5, np.arange(10.0), np.arange(10))
        code, _, err = run(["analyze", "--data", path], capsys)
        assert code == 3 and err.startswith("error:ArmSmallerThanB:")

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["analyze", "--data", str(tmp_path / "nope.csv")], capsys)
        assert code == 2 and err.startswith("error:")


class TestSettings:
    def test_precedence(self, data_csv, tmp_path, capsys, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 5, "iterations": 10, "k": 3}))
        monkeypatch.setenv("OPJ_SEED", "9")
        _, out, _ = run(["analyze", "--data", data_csv], capsys)
        assert json.loads(out)["config"]["seed"] == 9
        _, out, _ = run(["analyze", "--data", data_csv, "--config", str(cfg)], capsys)
        assert json.loads(out)["config"] == {"K": 3, "B": 20, "D": 4, "M": 10, "seed": 5}
        _, out, _ = run(["analyze", "--data", data_csv, "--config", str(cfg), "--seed", "1", "--k", "4"], capsys)
        assert json.loads(out)["config"] == {"K": 4, "B": 20, "D": 4, "M": 10, "seed": 1}

    @pytest.mark.parametrize(
        "argv",
        [
            ["analyze", "--data", "x.csv", "--scenario", "lin-lin"],
            ["simulate", "--scenario", "lin-lin", "--data", "x.csv"],
            ["simulate", "--scenario", "cubic"],
            ["analyze", "--data", "x.csv", "--deleted", "25"],
            [],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        code, _, err = run(argv, capsys)
        assert code == 2 and err.startswith("error:UsageError:") and err.count("\n") == 1

    def test_bad_config_key(self, data_csv, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"bogus": 1}')
        code, _, err = run(["analyze", "--data", data_csv, "--config", str(cfg)], capsys)
        assert code == 2 and "bogus" in err


class TestSimulate:
    def test_table(self, tmp_path, capsys):
        errs = tmp_path / "e.csv"
        argv = ["simulate", "--scenario", "independent", "--reps", "3", "--n0", "100", "--n1", "100",
                "--iterations", "8", "--seed", "1", "--errors-out", str(errs)]
        code, out, _ = run(argv, capsys)
        table = rows(out)
        assert code == 0 and [r["method"] for r in table] == ["base", "impute", "opj"]
        assert list(table[0]) == ["scenario", "estimand", "method", "mean_bias", "mean_se", "rmse",
                                  "coverage", "reps", "seed"]
        assert all(r["reps"] == "3" and r["seed"] == "1" for r in table)
        e = rows(errs.read_text())
        assert len(e) == 9 and list(e[0]) == ["rep", "method", "error"]
        assert run(argv, capsys)[1] == out

    def test_naive_psf_rows(self, capsys):
        code, out, _ = run(["simulate", "--scenario", "naive-psf", "--reps", "2", "--n0", "100", "--n1", "100",
                            "--iterations", "6", "--threads", "2"], capsys)
        assert code == 0 and [r["method"] for r in rows(out)] == ["opj", "naive-x1", "naive-x2", "naive-x3"]


class TestStrata:
    @pytest.fixture
    def toy_csv(self, tmp_path):
        v = toy_values()
        return write_csv(tmp_path / "toy.csv", np.arange(v.size) % 2, v, v)

    def test_toy_class_counts(self, toy_csv, tmp_path, capsys):
        dens = tmp_path / "dens.csv"
        hist = tmp_path / "hist.csv"
        code, out, _ = run(["strata", "--data", toy_csv, "--rule", "root-cum", "--k", "5", "--psf", "x1",
                            "--density-out", str(dens), "--hist-out", str(hist)], capsys)
        table = rows(out)
        assert code == 0 and tuple(int(r["n"]) for r in table) == TOY_COUNTS
        assert list(table[0]) == ["stratum", "lower", "upper", "n", "n0", "n1"]
        assert table[0]["lower"] == "-inf" and table[-1]["upper"] == "inf"
        assert len(rows(dens.read_text())) == 512
        assert sum(int(r["count"]) for r in rows(hist.read_text())) == 200

    def test_model_psf_matches(self, toy_csv, capsys):
        _, out, _ = run(["strata", "--data", toy_csv, "--k", "5"], capsys)
        assert tuple(int(r["n"]) for r in rows(out)) == TOY_COUNTS

    def test_quantile_k1(self, toy_csv, capsys):
        code, out, _ = run(["strata", "--data", toy_csv, "--rule", "quantile", "--k", "1"], capsys)
        table = rows(out)
        assert code == 0 and len(table) == 1 and (table[0]["lower"], table[0]["upper"]) == ("-inf", "inf")

    def test_quantile_collision_exit_3(self, toy_csv, capsys):
        code, _, err = run(["strata", "--data", toy_csv, "--rule", "quantile", "--k", "5", "--psf", "x1"], capsys)
        assert code == 3 and err.startswith("error:TooFewDistinctValues:")

    def test_class_too_many(self, tmp_path, capsys):
        path = write_csv(tmp_path / "many.csv", np.arange(200) % 2, np.arange(200.0), np.arange(200.0))
        code, _, err = run(["strata", "--data", path, "--rule", "class", "--psf", "x1"], capsys)
        assert code == 3 and err.startswith("error:TooManyClasses:")

    def test_bad_psf_name(self, toy_csv, capsys):
        code, _, err = run(["strata", "--data", toy_csv, "--psf", "x9"], capsys)
        assert code == 2


def test_module_entry_point(data_csv):
    proc = subprocess.run([sys.executable, "-m", "opj", "analyze", "--data", data_csv, "--method", "base"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["method"] == "base"
