"""CLI: argument validation, payload schemas, determinism, manifests, rerun."""

import json
import math

import numpy as np
import pytest

from covtest.cli import CSV_SCHEMA, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestCalibrate:
    def test_payload_fields_and_determinism(self, capsys, tmp_path):
        args = (
            "calibrate", "--stat", "tn", "--n", "40", "--p", "20",
            "--alpha", "0.05", "--reps", "2000", "--seed", "1",
        )
        code, out1, _ = run_cli(capsys, *args)
        assert code == 0
        payload = json.loads(out1)
        assert set(payload) == {"statistic", "n", "p", "alpha", "reps", "seed", "threshold"}
        assert payload["statistic"] == "tn" and payload["n"] == 40
        code, out2, _ = run_cli(capsys, *args)
        assert out1 == out2

    def test_threshold_near_asymptotic(self, capsys):
        code, out, _ = run_cli(
            capsys, "calibrate", "--stat", "tn", "--n", "80", "--p", "40",
            "--reps", "20000", "--seed", "1",
        )
        payload = json.loads(out)
        assert abs(payload["threshold"] - 1.6758) < 0.08

    def test_invalid_alpha_names_field(self, capsys):
        code, _, err = run_cli(
            capsys, "calibrate", "--stat", "tn", "--n", "40", "--p", "20", "--alpha", "1.5",
        )
        assert code == 2
        assert "alpha" in err

    def test_writes_manifest(self, capsys, tmp_path):
        out = tmp_path / "cal"
        code, _, _ = run_cli(
            capsys, "calibrate", "--stat", "tn", "--n", "30", "--p", "10",
            "--reps", "500", "--seed", "2", "--out", str(out),
        )
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "calibrate"
        assert manifest["config"]["reps"] == 500
        assert "threshold.json" in manifest["outputs"]


class TestPower:
    def test_grid_rows(self, capsys, tmp_path):
        out = tmp_path / "pw"
        code, _, _ = run_cli(
            capsys, "power", "--model", "tridiag", "--grid", "0.05:0.05:0.45",
            "--n", "30", "--p", "10", "--reps", "200", "--seed", "3",
            "--threshold", "asymptotic", "--out", str(out),
        )
        assert code == 0
        lines = (out / "power.csv").read_text().splitlines()
        assert lines[0] == f"# schema: {CSV_SCHEMA}"
        assert lines[1].startswith("# config: ")
        embedded = json.loads(lines[1].removeprefix("# config: "))
        assert embedded["seed"] == 3 and embedded["model"] == "tridiag"
        assert lines[2] == (
            "model,param,frob_dist,stat,reps,rejections,power,se,ci_lo,ci_hi,threshold_source"
        )
        body = lines[3:]
        assert len(body) == 9 * 2  # 9 grid points x (tn, clr)
        assert sum(1 for row in body if ",tn," in row) == 9
        assert sum(1 for row in body if ",clr," in row) == 9
        # frobenius column strictly increasing within each statistic
        frobs = [float(row.split(",")[2]) for row in body if ",tn," in row]
        assert all(b > a for a, b in zip(frobs, frobs[1:]))

    def test_clr_needs_p_less_than_n(self, capsys):
        code, _, err = run_cli(
            capsys, "power", "--model", "equicorr", "--grid", "0.1:0.1:0.3",
            "--n", "100", "--p", "100", "--stat", "clr", "--reps", "100",
        )
        assert code == 2
        assert "RequiresPLessThanN" in err

    def test_svg_output(self, capsys, tmp_path):
        out = tmp_path / "fig"
        code, _, _ = run_cli(
            capsys, "power", "--model", "equicorr", "--grid", "0.05:0.1:0.25",
            "--n", "24", "--p", "8", "--reps", "150", "--seed", "4",
            "--threshold", "asymptotic", "--svg", "--out", str(out),
        )
        assert code == 0
        svg = (out / "power.svg").read_text()
        assert svg.startswith("<svg")
        assert svg.count("<polyline") == 2
        assert "stroke-dasharray" in svg  # the corrected LRT series is dashed
        assert "power" in svg and "Sigma" in svg

    def test_preset_config_resolution(self, capsys, tmp_path):
        out = tmp_path / "prese"
        code, _, _ = run_cli(
            capsys, "power", "--preset", "fig1", "--n", "80", "--reps", "60",
            "--calibration-reps", "400", "--seed", "5", "--out", str(out),
        )
        assert code == 0
        from covtest.mc import PRESET_TAUS

        manifest = json.loads((out / "manifest.json").read_text())
        cfg = manifest["config"]
        assert cfg["model"] == "equicorr" and cfg["p"] == 40 and len(cfg["grid"]) == 8
        assert manifest["derived"]["taus"] == list(PRESET_TAUS)

    def test_preset_and_model_conflict(self, capsys):
        code, _, err = run_cli(
            capsys, "power", "--preset", "fig1", "--model", "tridiag", "--grid", "0.1:0.1:0.2",
        )
        assert code == 2


class TestVerify:
    def test_single_check_passes(self, capsys):
        code, out, _ = run_cli(
            capsys, "verify", "--only", "martingale", "--martingale-instances", "50",
            "--seed", "6",
        )
        assert code == 0
        reports = json.loads(out)
        assert reports[0]["name"] == "martingale" and reports[0]["passed"]

    def test_injected_fault_exits_one(self, capsys):
        code, out, _ = run_cli(
            capsys, "verify", "--only", "moments", "--reps", "5000",
            "--inject-fault", "--seed", "6",
        )
        assert code == 1
        reports = json.loads(out)
        assert not reports[0]["passed"]


class TestDivergence:
    def test_finite_value_above_one(self, capsys):
        code, out, _ = run_cli(capsys, "divergence", "--p", "6", "--n", "20", "--b", "0.3")
        assert code == 0
        payload = json.loads(out)
        assert payload["divergence"] > 1.0
        assert payload["divergence_minus_one"] == pytest.approx(payload["divergence"] - 1.0)

    def test_zero_b(self, capsys):
        code, out, _ = run_cli(capsys, "divergence", "--p", "6", "--n", "20", "--b", "0")
        payload = json.loads(out)
        assert payload["divergence"] == pytest.approx(1.0, rel=1e-12)

    def test_condition_violated_exit_two(self, capsys):
        code, _, err = run_cli(capsys, "divergence", "--p", "10", "--n", "4", "--b", "0.9")
        assert code == 2
        assert "ConditionViolated" in err

    def test_find_b(self, capsys):
        code, out, _ = run_cli(
            capsys, "divergence", "--find-b", "--beta-minus-alpha", "0.2",
            "--p", "40", "--n", "80",
        )
        assert code == 0
        payload = json.loads(out)
        assert 0.0 < payload["feasible_b"] < 1.0
        assert payload["divergence_minus_one"] <= payload["bound_4_beta_alpha_sq"]


class TestApplyToData:
    def test_runs_both_tests(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((40, 10))
        path = tmp_path / "x.txt"
        np.savetxt(path, data)
        code, out, _ = run_cli(capsys, "test", "--data", str(path))
        assert code == 0
        payload = json.loads(out)
        assert payload["n"] == 40 and payload["p"] == 10
        assert set(payload["tests"]) == {"tn", "clr"}
        for rec in payload["tests"].values():
            assert rec["reject"] == (rec["statistic"] > rec["threshold"])

    def test_missing_file(self, capsys):
        code, _, err = run_cli(capsys, "test", "--data", "/nonexistent/file.txt")
        assert code == 2


class TestDeterminismAndRerun:
    def test_rerun_reproduces_power_payloads(self, capsys, tmp_path):
        out1 = tmp_path / "a"
        args = (
            "power", "--model", "equicorr", "--grid", "0.05:0.05:0.2",
            "--n", "24", "--p", "8", "--reps", "300", "--seed", "7",
            "--calibration-reps", "500", "--svg", "--out", str(out1),
        )
        code, _, _ = run_cli(capsys, *args, "--workers", "1")
        assert code == 0
        for workers in ("4", "16"):
            out2 = tmp_path / f"w{workers}"
            code, _, _ = run_cli(
                capsys, "rerun", "--manifest", str(out1 / "manifest.json"),
                "--out", str(out2), "--workers", workers,
            )
            assert code == 0
            for name in ("power.csv", "power.svg"):
                assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_workers_do_not_change_calibrate_payload(self, capsys, tmp_path):
        outs = []
        for workers in ("1", "4"):
            out = tmp_path / f"c{workers}"
            code, _, _ = run_cli(
                capsys, "calibrate", "--stat", "clr", "--n", "30", "--p", "10",
                "--reps", "2000", "--seed", "8", "--workers", workers, "--out", str(out),
            )
            assert code == 0
            outs.append((out / "threshold.json").read_bytes())
        assert outs[0] == outs[1]

    def test_manifest_hashes_match_payloads(self, capsys, tmp_path):
        import hashlib

        out = tmp_path / "h"
        code, _, _ = run_cli(
            capsys, "divergence", "--p", "6", "--n", "20", "--b", "0.2", "--out", str(out),
        )
        manifest = json.loads((out / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            got = hashlib.sha256((out / name).read_bytes()).hexdigest()
            assert got == digest

    def test_env_var_workers_default(self, capsys, monkeypatch):
        monkeypatch.setenv("COVTEST_WORKERS", "3")
        code, out1, _ = run_cli(
            capsys, "calibrate", "--stat", "tn", "--n", "20", "--p", "6",
            "--reps", "500", "--seed", "9",
        )
        monkeypatch.setenv("COVTEST_WORKERS", "1")
        code, out2, _ = run_cli(
            capsys, "calibrate", "--stat", "tn", "--n", "20", "--p", "6",
            "--reps", "500", "--seed", "9",
        )
        assert out1 == out2
