import csv

import numpy as np
import pytest

from clocksync.cli import main

BASE_SHORT = """
[graph]
n = 6
kind = "ring"

[sim]
seed = 11
t_end = {t_end}
log_every = 50

[certificate]
budget = 60
grid_size = 64
"""


def write_cfg(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestCertify:
    def test_feasible_exit_zero_and_report(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=1.0))
        rc = main(["certify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 0
        report = (tmp_path / "o" / "certificate_report.toml").read_text()
        assert "feasible = true" in report
        assert "mu = " in report and "kappa2 = " in report
        assert "corollary_check = " in report
        out = capsys.readouterr().out
        assert "feasible=True" in out

    def test_decoupled_gain_exit_two(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=1.0)
                        + "\n[agents]\nk_u = 0.0\n")
        rc = main(["certify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 2
        report = (tmp_path / "o" / "certificate_report.toml").read_text()
        assert "feasible = false" in report

    def test_malformed_config_exit_one_names_field(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "[agents]\ntimer_lo = -0.5\n")
        rc = main(["certify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "timer_lo" in capsys.readouterr().err

    def test_unknown_field_exit_one(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "[agents]\nbanana = 3\n")
        rc = main(["certify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "banana" in capsys.readouterr().err


class TestSimulate:
    def test_artifacts_and_byte_identical_rerun(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=1.5))
        for d in ("a", "b"):
            assert main(["simulate", "--config", str(cfg),
                         "--out", str(tmp_path / d)]) == 0
        for name in ("trajectory.csv", "metrics.csv", "events.csv"):
            assert (tmp_path / "a" / name).read_bytes() \
                == (tmp_path / "b" / name).read_bytes()

    def test_every_agent_broadcasts_within_02s(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=0.2))
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 0
        with open(tmp_path / "o" / "events.csv") as fh:
            agents = {int(row["agent"]) for row in csv.DictReader(fh)}
        assert agents == set(range(1, 7))

    def test_zero_disturbance_converges(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=30.0)
                        + "\n[disturbance]\nmodel = \"zero\"\n")
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 0
        with open(tmp_path / "o" / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["dist_A"]) <= 1e-6

    def test_blowup_exit_three(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=40.0)
                        + "\n[agents]\nk_u = 2000.0\n"
                        + "\n[disturbance]\nmodel = \"zero\"\n")
        rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 3


class TestVerify:
    def test_short_pipeline(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=2.0))
        rc = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 0
        rep = (tmp_path / "o" / "verification_report.toml").read_text()
        assert "lyap_jump_violations = 0" in rep
        assert "lyap_flow_violations = 0" in rep
        assert "envelope_ok = true" in rep
        assert (tmp_path / "o" / "manifest.toml").exists()

    def test_infeasible_skips_simulation(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=1.0)
                        + "\n[agents]\nk_u = 0.0\n")
        rc = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert not (tmp_path / "o" / "trajectory.csv").exists()


class TestBatch:
    def test_summary_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=1.0))
        rc = main(["batch", "--config", str(cfg), "--runs", "3",
                   "--seed", "100", "--out", str(tmp_path / "o")])
        assert rc == 0
        with open(tmp_path / "o" / "batch_summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["seed"]) for r in rows] == [100, 101, 102]
        assert all(int(r["lyap_jump_violations"]) == 0 for r in rows)


class TestManifest:
    def test_seed_echo(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_SHORT.format(t_end=0.5))
        main(["simulate", "--config", str(cfg), "--seed", "123",
              "--out", str(tmp_path / "o")])
        manifest = (tmp_path / "o" / "manifest.toml").read_text()
        assert "master_seed = 123" in manifest
        assert "tool_version" in manifest
        assert "runtime_seconds" in manifest
