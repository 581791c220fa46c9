"""End-to-end tests of the command-line interface."""

import json

import numpy as np
import pytest

from relslope.cli import main
from relslope.funcspace import write_curves_csv, write_scalars_csv
from relslope.simharness import DgpSpec, gen_sample


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("RELSLOPE_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture(scope="module")
def scalar_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    x, y = gen_sample(DgpSpec(slope="S2", predictor="iid", n=60, seed=7))
    write_curves_csv(root / "x.csv", x)
    write_scalars_csv(root / "y.csv", y)
    return root / "x.csv", root / "y.csv"


@pytest.fixture(scope="module")
def functional_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("fdata")
    x, y = gen_sample(DgpSpec(slope="F2", predictor="iid", n=60, seed=8))
    write_curves_csv(root / "x.csv", x)
    write_curves_csv(root / "y.csv", y)
    return root / "x.csv", root / "y.csv"


FAST_PIVOT = ["--paths", "2000", "--steps", "512", "--Q", "10"]
FAST_FIT = ["--r", "5"]


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


class TestQuantilesCommand:
    def test_reference_value(self, capsys):
        code, payload = run_json(
            capsys,
            ["quantiles", "--nu0", "0.5", "--Q", "25", "--paths", "10000"],
        )
        assert code == 0
        q95 = payload["quantiles"]["0.95"]
        assert 10.9 <= q95 <= 12.2

    def test_csv_and_figure(self, capsys, tmp_path):
        csv_path = tmp_path / "q.csv"
        fig_path = tmp_path / "q.png"
        code = main(
            ["quantiles", "--paths", "2000", "--steps", "512", "--Q", "5",
             "--csv", str(csv_path), "--figures", str(fig_path)]
        )
        capsys.readouterr()
        assert code == 0
        assert csv_path.read_text().startswith("level,quantile")
        assert fig_path.stat().st_size > 0


class TestTestScalarCommand:
    def test_threshold_dominates(self, capsys, scalar_files):
        x, y = scalar_files
        code, payload = run_json(
            capsys,
            ["test-scalar", str(x), str(y), "--delta", "1000", *FAST_PIVOT, *FAST_FIT],
        )
        assert code == 0
        assert payload["reject"] is False
        assert payload["lambda"] > 0
        assert payload["scheme"]["n"] == 60

    def test_delta_sweep_monotone(self, capsys, scalar_files):
        x, y = scalar_files
        code, payload = run_json(
            capsys,
            ["test-scalar", str(x), str(y), "--delta-sweep", "0.0,0.5,2.0,50.0",
             *FAST_PIVOT, *FAST_FIT],
        )
        assert code == 0
        decisions = [d["reject"] for d in payload["decisions"]]
        assert all(a >= b for a, b in zip(decisions, decisions[1:]))

    def test_byte_identical_reports(self, capsys, scalar_files, tmp_path):
        x, y = scalar_files
        argv = ["test-scalar", str(x), str(y), "--delta", "0.5", *FAST_PIVOT, *FAST_FIT]
        out1 = tmp_path / "a.json"
        out2 = tmp_path / "b.json"
        assert main(argv + ["--output", str(out1)]) == 0
        assert main(argv + ["--output", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_diagnostics_csv(self, capsys, scalar_files, tmp_path):
        x, y = scalar_files
        csv_path = tmp_path / "norms.csv"
        code = main(
            ["test-scalar", str(x), str(y), "--delta", "0.5", "--csv", str(csv_path),
             *FAST_PIVOT, *FAST_FIT]
        )
        capsys.readouterr()
        assert code == 0
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "q,nu,n,norm_sq"
        assert len(lines) == 11

    def test_missing_file_exit_code(self, capsys):
        assert main(["test-scalar", "/nonexistent/x.csv", "/nonexistent/y.csv",
                     "--delta", "1"]) == 3

    def test_bad_flag_value_exit_code(self, capsys, scalar_files):
        x, y = scalar_files
        assert main(["test-scalar", str(x), str(y), "--delta", "1",
                     "--alpha", "2.0"]) == 3
        assert main(["test-scalar", str(x), str(y), "--delta", "1",
                     "--lambda", "banana"]) == 3

    def test_usage_error_exit_code(self, scalar_files):
        x, y = scalar_files
        with pytest.raises(SystemExit) as err:
            main(["test-scalar", str(x), str(y)])  # no --delta
        assert err.value.code == 2


class TestTestLocationCommand:
    def test_at_zero_matches_one_sample(self, capsys, scalar_files, tmp_path):
        from relslope.funcspace import Curve, Grid

        x, y = scalar_files
        zero_path = tmp_path / "zero.csv"
        write_curves_csv(zero_path, [Curve(Grid(101), np.zeros(101))])
        code, loc = run_json(
            capsys,
            ["test-location", str(x), str(y), str(zero_path), "--delta", "0.5",
             *FAST_PIVOT, *FAST_FIT],
        )
        assert code == 0
        _, one = run_json(
            capsys,
            ["test-scalar", str(x), str(y), "--delta", "0.5", *FAST_PIVOT, *FAST_FIT],
        )
        assert loc["T"] == pytest.approx(one["T"], abs=1e-6)


class TestTestTwoSampleCommand:
    def test_same_data_never_rejects(self, capsys, scalar_files):
        x, y = scalar_files
        code, payload = run_json(
            capsys,
            ["test-two-sample", str(x), str(y), str(x), str(y), "--delta", "0.1",
             *FAST_PIVOT, *FAST_FIT],
        )
        assert code == 0
        assert payload["T"] == 0.0
        assert payload["reject"] is False


class TestTestFunctionalCommand:
    def test_runs_and_reports(self, capsys, functional_files):
        x, y = functional_files
        code, payload = run_json(
            capsys,
            ["test-functional", str(x), str(y), "--delta", "1000", *FAST_PIVOT, *FAST_FIT],
        )
        assert code == 0
        assert payload["reject"] is False
        assert payload["T"] > 0


class TestCiCommand:
    def test_interval_structure(self, capsys, scalar_files):
        x, y = scalar_files
        code, payload = run_json(
            capsys, ["ci", str(x), str(y), *FAST_PIVOT, *FAST_FIT]
        )
        assert code == 0
        assert payload["one_sided"][0] == 0.0
        assert payload["one_sided"][1] >= payload["T"]
        assert payload["two_sided"][1] >= payload["one_sided"][1]
        assert payload["two_sided"][0] >= 0.0


class TestSimulateCommand:
    def test_rejection_outputs(self, capsys, tmp_path):
        out = tmp_path / "exp"
        code = main(
            ["simulate", str(out), "--setting", "S2", "--n", "50", "--runs", "50",
             "--delta-sweep", "0.5,1000", "--seed", "99", *FAST_PIVOT, *FAST_FIT]
        )
        capsys.readouterr()
        assert code == 0
        assert (out / "rejection.csv").exists()
        assert (out / "rejection.json").exists()
        assert (out / "rejection.png").exists()
        rows = (out / "rejection.csv").read_text().strip().splitlines()
        assert rows[0] == "delta,p_reject,se"
        last = rows[-1].split(",")
        assert float(last[1]) == 0.0  # delta = 1000 never rejects

    def test_no_figures_flag(self, capsys, tmp_path):
        out = tmp_path / "exp2"
        code = main(
            ["simulate", str(out), "--setting", "S2", "--n", "50", "--runs", "50",
             "--delta", "0.5", "--seed", "99", "--no-figures", *FAST_PIVOT, *FAST_FIT]
        )
        capsys.readouterr()
        assert code == 0
        assert not (out / "rejection.png").exists()

    def test_coverage_outputs(self, capsys, tmp_path):
        out = tmp_path / "cov"
        code = main(
            ["simulate", str(out), "--setting", "S2", "--n", "50", "--runs", "50",
             "--coverage", "--seed", "99", *FAST_PIVOT, *FAST_FIT]
        )
        capsys.readouterr()
        assert code == 0
        payload = json.loads((out / "coverage.json").read_text())
        assert 0.0 <= payload["one_sided"] <= 1.0
        assert (out / "coverage.csv").read_text().startswith("interval,coverage,se")

    def test_deterministic_given_seed(self, capsys, tmp_path):
        argv = ["--setting", "S2", "--n", "50", "--runs", "50", "--delta", "0.5",
                "--seed", "123", "--no-figures", *FAST_PIVOT, *FAST_FIT]
        code1 = main(["simulate", str(tmp_path / "a"), *argv])
        code2 = main(["simulate", str(tmp_path / "b"), *argv])
        capsys.readouterr()
        assert code1 == code2 == 0
        a = (tmp_path / "a" / "rejection.json").read_bytes()
        b = (tmp_path / "b" / "rejection.json").read_bytes()
        assert a == b
