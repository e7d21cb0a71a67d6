import csv
import json

import numpy as np
import pytest

from voltdual.cli import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_INGEST, EXIT_IO, EXIT_OK, execute_run, main
from voltdual.reports import ReportError, emit_reports
from voltdual.scenario import build_problem, preset_config
from voltdual.sim import run_problem
from voltdual.dual import StepsizeSchedule


@pytest.fixture(scope="module")
def toy2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy2")
    cfg = preset_config("toy2", K=400, sample_window=200)
    paths = execute_run(cfg, out)
    return cfg, out, paths


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestReports:
    def test_files(self, toy2_run):
        _, out, paths = toy2_run
        assert {"trace", "dual", "fig2", "fig4", "summary"} <= set(paths)
        assert (out / "manifest.json").exists()

    def test_fig2_rows(self, toy2_run):
        cfg, out, _ = toy2_run
        rows = read_rows(out / "fig2.csv")
        assert len(rows) == cfg.K + 1
        assert rows[0][:2] == ["k", "v_1"] and "h_star" in rows[0]

    def test_fig4_half_width(self, toy2_run):
        _, out, _ = toy2_run
        trace = np.loadtxt(out / "fig2.csv", delimiter=",", skiprows=1)
        header = read_rows(out / "fig2.csv")[0]
        v2 = trace[-200:, header.index("v_2")]
        rows = read_rows(out / "fig4.csv")
        head, node2 = rows[0], rows[2]
        mean = float(node2[head.index("mean")])
        hw = float(node2[head.index("ci_high")]) - mean
        assert mean == pytest.approx(v2.mean(), abs=1e-14)
        assert hw == pytest.approx(1.96 * v2.std(ddof=1) / np.sqrt(200), rel=1e-9)
        assert float(node2[head.index("v_hi")]) == 1.05

    def test_summary(self, toy2_run):
        _, out, _ = toy2_run
        s = json.loads((out / "summary.json").read_text())
        assert s["iterations"] == 400 and s["samples"] == 200
        assert s["scenario"] == "toy2" and s["flags"] == []
        assert s["relaxation_deviation"] < 1e-6
        assert s["oracle_value"] > 0
        v = np.loadtxt(out / "fig2.csv", delimiter=",", skiprows=1)[:, 1:3]
        g = np.c_[0.95 - v, v - 1.05]
        assert s["max_residual_norm"] == pytest.approx(np.linalg.norm(g, axis=1).max(), rel=1e-12)

    def test_dual_long_format(self, toy2_run):
        _, out, _ = toy2_run
        rows = read_rows(out / "dual.csv")
        assert rows[0] == ["k", "node", "mu_lo", "mu_hi", "alpha", "beta"]
        assert len(rows) == 1 + 400 * 2

    def test_trace_stride(self, tmp_path):
        cfg = preset_config("toy1", K=100)
        execute_run(cfg, tmp_path, trace_every=10, oracle=False)
        assert len(read_rows(tmp_path / "trace.csv")) == 11
        assert len(read_rows(tmp_path / "fig2.csv")) == 101
        head = read_rows(tmp_path / "fig2.csv")[0]
        assert "h_star" not in head

    def test_unwritable_directory(self, tmp_path):
        prob = build_problem(preset_config("toy1"))
        tr = run_problem(prob, 1, 5, StepsizeSchedule())
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(ReportError):
            emit_reports(tr, tr.post_stats, None, blocker / "sub")


class TestCli:
    def test_run_and_rerun_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "toy1", "-K", "60", "--seed", "5", "-o", str(a)]) == EXIT_OK
        assert main(["rerun", str(a / "manifest.json"), "-o", str(b)]) == EXIT_OK
        for name in ("trace.csv", "dual.csv", "fig2.csv", "fig4.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_config_error(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "missing.json"), "-o", str(tmp_path)]) == EXIT_CONFIG
        assert "error" in capsys.readouterr().err
        assert main(["run", "toy2", "--delta", "0.2", "-o", str(tmp_path)]) == EXIT_CONFIG

    def test_ingestion_error(self, tmp_path):
        (tmp_path / "lp.csv").write_text("timestep,node,value\n0,1,abc\n")
        (tmp_path / "s.json").write_text(json.dumps(
            {"feeder": "builtin:toy2", "inventory": "builtin:toy2", "profiles": {"load_p": "lp.csv"}}
        ))
        assert main(["run", str(tmp_path / "s.json"), "-o", str(tmp_path / "o")]) == EXIT_INGEST

    def test_divergence(self, tmp_path):
        # the limit sits below the zero-injection voltage
        (tmp_path / "s.json").write_text(json.dumps(
            {"feeder": "builtin:toy1", "inventory": "builtin:toy1", "v_limits": [0.9, 0.99], "M": 1, "K": 50,
             "stepsize": {"mode": "constant", "value": 1e12}}
        ))
        out = tmp_path / "o"
        assert main(["run", str(tmp_path / "s.json"), "-o", str(out)]) == EXIT_DIVERGENCE
        s = json.loads((out / "summary.json").read_text())
        assert "aborted" in s["flags"]

    def test_io_error(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["run", "toy1", "-K", "10", "-o", str(blocker / "sub")]) == EXIT_IO

    def test_variance_report(self, tmp_path):
        out = tmp_path / "v"
        assert main(["variance-report", "toy2", "-K", "300", "--window", "200", "-o", str(out)]) == EXIT_OK
        rows = read_rows(out / "fig3.csv")
        assert {r[0] for r in rows[1:]} == {"1", "2", "3"}
