import csv
import json

import pytest

from partkf.cli import main


class TestVerify:
    def test_exit_zero_and_pass_lines(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "DKF=FIE k<=5: PASS" in out
        assert out.count("PASS") == 5
        assert "FAIL" not in out


class TestRun:
    def test_run_writes_outputs(self, tmp_path, capsys):
        code = main(["run", "--model", "linear-4state", "--steps", "20",
                     "--seed", "4", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "run complete" in out
        assert (tmp_path / "linear-4state_dkf_seed4.csv").exists()
        assert (tmp_path / "linear-4state_dkf_seed4.json").exists()

    def test_run_with_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": {"name": "reactor-chain"},
                                   "steps": 8, "seed": 2, "monitors": False,
                                   "out_dir": str(tmp_path)}))
        assert main(["run", "--config", str(cfg)]) == 0
        assert (tmp_path / "reactor-chain_dekf_seed2.csv").exists()

    def test_unknown_model_exits_one(self, capsys):
        assert main(["run", "--model", "no-such-benchmark"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_model_and_config_exits_one(self, capsys):
        assert main(["run"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_zero_steps_exits_one(self, capsys):
        assert main(["run", "--model", "linear-4state", "--steps", "0"]) == 1
        assert "steps" in capsys.readouterr().err

    def test_unknown_flag_usage_exit_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--model", "linear-4state", "--frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err


class TestMonteCarlo:
    def test_ensemble_csv_has_one_entry_per_run_per_instant(self, tmp_path, capsys):
        code = main(["montecarlo", "--model", "linear-4state", "--runs", "5",
                     "--steps", "12", "--seed", "6", "--out", str(tmp_path),
                     "--no-monitors"])
        assert code == 0
        with (tmp_path / "linear-4state_montecarlo_runs.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 5 * 13
        per_k = {}
        for row in rows:
            per_k.setdefault(int(row["k"]), set()).add(int(row["run"]))
        assert all(runs == {0, 1, 2, 3, 4} for runs in per_k.values())
        assert (tmp_path / "linear-4state_montecarlo_summary.csv").exists()


class TestMonitors:
    def test_reanalyze_stored_record(self, tmp_path, capsys):
        assert main(["run", "--model", "reactor-chain", "--steps", "10",
                     "--seed", "3", "--out", str(tmp_path), "--no-monitors"]) == 0
        record_path = tmp_path / "reactor-chain_dekf_seed3.json"
        assert record_path.exists()
        assert main(["monitors", "--record", str(record_path),
                     "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "satisfied at every instant" in out
        assert (tmp_path / "reactor-chain_dekf_seed3_monitors.csv").exists()
        assert (tmp_path / "reactor-chain_dekf_seed3_summary.json").exists()

    def test_missing_record_exits_one(self, capsys):
        assert main(["monitors", "--record", "/nonexistent/rec.json"]) == 1
        assert "error:" in capsys.readouterr().err
