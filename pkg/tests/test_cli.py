"""Command-line interface: subcommands, exit codes, artifact reproducibility."""

import json

import numpy as np
import pytest

from itoinv import lab
from itoinv.cli import main


def write_config(tmp_path, **overrides):
    doc = {
        "model": "kubo",
        "params": {"a": 2.0, "sigma": 0.5},
        "transform": "none",
        "grid": {"t0": 0.0, "t1": 0.5, "steps": 200},
        "paths": 50,
        "master_seed": 4242,
        "initial_state": [1.0, 0.0],
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestRunCommand:
    def test_run_writes_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        csv = tmp_path / "out.csv"
        summary = tmp_path / "summary.json"
        code = main(
            ["run", "--config", str(cfg), "--csv", str(csv), "--summary", str(summary)]
        )
        assert code == 0
        assert csv.exists() and summary.exists()
        header = csv.read_text().splitlines()[0]
        assert header == "path,t,x1,x2,F"
        out = json.loads(capsys.readouterr().out)
        assert str(csv) in out["artifacts"]

    def test_byte_identical_reruns_and_worker_counts(self, tmp_path):
        cfg = write_config(tmp_path)
        blobs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "8")):
            csv = tmp_path / f"{tag}.csv"
            summary = tmp_path / f"{tag}.json"
            code = main(
                [
                    "run", "--config", str(cfg), "--csv", str(csv),
                    "--summary", str(summary), "--workers", workers, "--quiet",
                ]
            )
            assert code == 0
            blobs.append((csv.read_bytes(), summary.read_bytes()))
        assert blobs[0] == blobs[1] == blobs[2]

    def test_flag_overrides(self, tmp_path):
        cfg = write_config(tmp_path, paths=4)
        csv = tmp_path / "o.csv"
        code = main(
            ["run", "--config", str(cfg), "--paths", "2", "--csv", str(csv), "--quiet"]
        )
        assert code == 0
        paths = {line.split(",")[0] for line in csv.read_text().splitlines()[1:]}
        assert paths == {"0", "1"}

    def test_config_error_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, model="not-a-model")
        code = main(["run", "--config", str(cfg)])
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"]["exit_code"] == 2

    def test_missing_config_file_exit_2(self, capsys):
        code = main(["run", "--config", "/nonexistent/cfg.json"])
        assert code == 2

    def test_transform_precondition_exit_3(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path,
            model="ll-modified",
            transform="coupled",
            initial_state=[1.0, 0.0, 0.0],
            paths=2,
        )
        code = main(["run", "--config", str(cfg)])
        assert code == 3
        err = json.loads(capsys.readouterr().err)
        assert "spread" in err["error"]["message"]

    def test_simulation_failure_exit_4(self, tmp_path, capsys, monkeypatch):
        def boom(config):
            raise lab.AnalysisError("9.9% of paths aborted")

        monkeypatch.setattr(lab, "run", boom)
        cfg = write_config(tmp_path)
        code = main(["run", "--config", str(cfg)])
        assert code == 4

    def test_figures_flag(self, tmp_path):
        cfg = write_config(tmp_path, paths=5)
        figdir = tmp_path / "figs"
        code = main(["run", "--config", str(cfg), "--figures", str(figdir), "--quiet"])
        assert code == 0
        assert sorted(p.name for p in figdir.iterdir()) == [
            "deviation.png",
            "f_mean.png",
            "trajectories.png",
        ]

    def test_run_without_config_uses_flags(self, tmp_path):
        summary = tmp_path / "s.json"
        code = main(
            [
                "run", "--model", "kubo", "--t1", "0.2", "--steps", "40",
                "--paths", "3", "--seed", "5", "--summary", str(summary), "--quiet",
            ]
        )
        assert code == 0
        assert json.loads(summary.read_text())["run"]["paths"] == 3


class TestCheckCommand:
    def test_ll_stochastic_report(self, capsys):
        code = main(
            ["check", "--model", "ll-stochastic", "--params", '{"alpha": 0.5, "epsilon": 0.1}']
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["verdict"]["ito_correction"] == "fails"
        assert abs(doc["ito_correction"]["max"] - 0.025) < 1e-12
        assert doc["verdict"]["drift_tangency"] == "holds"
        assert doc["verdict"]["overall"] == "not-invariant"

    def test_report_written_to_file(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(["check", "--model", "kubo", "--out", str(out)])
        assert code == 0
        assert json.loads(out.read_text())["verdict"]["ito_correction"] == "fails"

    def test_unknown_model_exit_2(self, capsys):
        assert main(["check", "--model", "wat"]) == 2

    def test_bad_params_exit_2(self, capsys):
        assert main(["check", "--model", "kubo", "--params", "{bad"]) == 2


class TestTransformDescribe:
    def test_invariantized_kubo_at_origin_time(self, capsys):
        code = main(
            [
                "transform", "describe", "--model", "kubo",
                "--params", '{"a": 2.0, "sigma": 0.5}', "--t", "0", "--x", "1,0",
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc) == {"t", "x", "drift", "diffusion", "H", "h"}
        assert np.abs(np.array(doc["drift"]) - [-0.125, 2.0]).max() < 1e-12
        assert doc["H"] == 1.0
        assert abs(doc["h"] - 0.25) < 1e-12

    def test_projection_kind(self, capsys):
        code = main(
            [
                "transform", "describe", "--model", "kubo", "--kind", "projection",
                "--t", "0", "--x", "1,0",
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["H"] is None
        assert np.abs(np.array(doc["drift"]) - [-0.125, 2.0]).max() < 1e-12

    def test_ll_modified_exit_3(self, capsys):
        code = main(
            ["transform", "describe", "--model", "ll-modified", "--t", "0", "--x", "1,0,0"]
        )
        assert code == 3

    def test_dimension_mismatch_exit_2(self, capsys):
        assert main(["transform", "describe", "--model", "kubo", "--t", "0", "--x", "1,0,0"]) == 2


class TestScanEps:
    def test_ll_family_slope(self, capsys):
        code = main(["scan-eps", "--model", "ll-stochastic", "--eps", "0.1,0.05", "--t", "1"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert abs(doc["slope"] - 2.0) < 1e-10
        assert len(doc["H_minus_1"]) == 2

    def test_kubo_sigma_family(self, capsys):
        code = main(["scan-eps", "--model", "kubo", "--eps", "0.5,0.25", "--t", "1"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert abs(doc["slope"] - 2.0) < 1e-10

    def test_model_without_eps_param_exit_2(self, capsys):
        assert main(["scan-eps", "--model", "ll", "--eps", "0.1,0.05"]) == 2

    def test_figure_written(self, tmp_path, capsys):
        figdir = tmp_path / "figs"
        code = main(
            [
                "scan-eps", "--model", "ll-stochastic", "--eps", "0.1,0.05",
                "--t", "1", "--figures", str(figdir),
            ]
        )
        assert code == 0
        assert (figdir / "eps_scaling.png").exists()
