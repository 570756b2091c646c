import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from fourmode.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, EXIT_OK, EXIT_STATISTICS, main
from fourmode.config import ExperimentConfig

SMALL = """
source:
  mean_pairs_per_mode: 0.05
detector:
  efficiency: 1.0
shots: 400
analysis:
  n_resamples: 100
  phase_points: 24
  calibration_shots: 300
  bell_shots: 800
g2_map:
  min_mm_per_s: 18
  max_mm_per_s: 32
  step_mm_per_s: 2
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_digest=")
    return list(csv.DictReader(lines[1:]))


def run(args, out):
    return main([*args, "--out", str(out)])


@pytest.mark.parametrize("command", ["simulate", "g2-map", "joint-probs", "phase-scan", "bell", "calibrate-gain"])
def test_reruns_are_byte_identical(command, small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run([command, "--config", str(small_config), "--seed", "5"], a) == EXIT_OK
    assert run([command, "--config", str(small_config), "--seed", "5"], b) == EXIT_OK
    names = sorted(p.name for p in a.iterdir() if p.name != "run.log")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "run.log")
    assert "summary.txt" in names and "config.yaml" in names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_config_echo_and_provenance(small_config, tmp_path):
    out = tmp_path / "out"
    assert run(["phase-scan", "--config", str(small_config), "--seed", "11"], out) == EXIT_OK
    echo = ExperimentConfig.load(out / "config.yaml")
    assert echo.master_seed == 11
    assert echo.source.mean_pairs_per_mode == 0.05
    summary = yaml.safe_load((out / "summary.txt").read_text())
    assert summary["config_digest"] == echo.digest()
    assert summary["master_seed"] == 11
    header = (out / "phase_scan.csv").read_text().splitlines()[0]
    assert header == f"# config_digest={echo.digest()} master_seed=11"
    assert "phase-scan" in (out / "run.log").read_text()


def test_phase_scan_matches_cosine(small_config, tmp_path):
    out = tmp_path / "out"
    assert run(["phase-scan", "--config", str(small_config)], out) == EXIT_OK
    rows = read_csv(out / "phase_scan.csv")
    assert len(rows) == 24
    for r in rows:
        assert float(r["E_resonant"]) == pytest.approx(math.cos(float(r["dphi_rad"])), abs=1e-12)
    offsets = read_csv(out / "phase_offsets.csv")
    assert [int(r["set"]) for r in offsets] == [1, 2, 3]
    assert all(abs(float(r["offset_exact_deg"])) < abs(float(r["offset_first_order_deg"])) for r in offsets)
    summary = yaml.safe_load((out / "summary.txt").read_text())
    assert summary["max_abs_E_resonant_minus_cos"] < 1e-12


def test_json_format(small_config, tmp_path):
    out = tmp_path / "out"
    assert run(["bell", "--config", str(small_config), "--format", "json"], out) == EXIT_OK
    payload = json.loads((out / "bell.json").read_text())
    assert payload["columns"][:2] == ["phi_A_rad", "phi_B_rad"]
    assert len(payload["rows"]) == 4
    assert "config_digest" in payload
    summary = yaml.safe_load((out / "summary.txt").read_text())
    assert summary["S_analytic"] == pytest.approx(2 * math.sqrt(2))


def test_mixed_resonant_joint_probabilities(tmp_path):
    cfg = tmp_path / "mixed.yaml"
    cfg.write_text(SMALL.replace("mean_pairs_per_mode: 0.05", "mean_pairs_per_mode: 0.05\n  coherence: mixed")
                   .replace("shots: 400", "shots: 5000") + "pulses:\n  method: resonant\n")
    out = tmp_path / "out"
    assert run(["joint-probs", "--config", str(cfg)], out) == EXIT_OK
    rows = read_csv(out / "joint_probabilities.csv")
    for r in rows:
        for name in ("P_pp", "P_mm", "P_pm", "P_mp"):
            assert abs(float(r[name]) - 0.25) < 4 * float(r[name + "_err"])
        assert float(r["E_single_pair"]) == pytest.approx(0.0, abs=1e-12)
    refs = read_csv(out / "reference_sets.csv")
    combos = [r["combination"] for r in refs]
    assert len(combos) == 18 and "1233" in combos and "1213" not in combos


def test_stored_dataset_is_reused(small_config, tmp_path):
    sim = tmp_path / "sim"
    assert run(["simulate", "--config", str(small_config)], sim) == EXIT_OK
    a, b = tmp_path / "a", tmp_path / "b"
    # simulate stores the interferometer output, which is what joint-probs simulates too
    assert run(["joint-probs", "--config", str(small_config)], a) == EXIT_OK
    assert run(["joint-probs", "--config", str(small_config), "--dataset", str(sim / "dataset.jsonl")], b) == EXIT_OK
    assert (a / "joint_probabilities.csv").read_bytes() == (b / "joint_probabilities.csv").read_bytes()


def test_output_root_from_environment(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv("FOURMODE_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["phase-scan", "--config", str(small_config)]) == EXIT_OK
    assert (tmp_path / "root" / "phase-scan" / "phase_scan.csv").exists()


def test_calibrated_config_written(small_config, tmp_path):
    out = tmp_path / "out"
    assert run(["calibrate-gain", "--config", str(small_config)], out) == EXIT_OK
    calibrated = ExperimentConfig.load(out / "calibrated_config.yaml")
    summary = yaml.safe_load((out / "summary.txt").read_text())
    assert calibrated.source.mean_pairs_per_mode == pytest.approx(summary["mean_pairs_per_mode"])
    assert len(read_csv(out / "calibration.csv")) == 3


# --- exit codes ---------------------------------------------------------------------


def test_exit_config_unknown_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("source:\n  sigma_lng_mm_per_s: 9\n")
    assert run(["bell", "--config", str(bad)], tmp_path / "out") == EXIT_CONFIG
    assert "unknown key source.sigma_lng_mm_per_s" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [["--shots", "0"], ["--workers", "0"]])
def test_exit_config_bad_flags(flags, tmp_path):
    assert run(["bell", *flags], tmp_path / "out") == EXIT_CONFIG


def test_exit_config_missing_file(tmp_path):
    assert run(["bell", "--config", str(tmp_path / "none.yaml")], tmp_path / "out") == EXIT_CONFIG


def test_exit_insufficient_statistics(small_config, tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text(SMALL.replace("mean_pairs_per_mode: 0.05", "mean_pairs_per_mode: 0.0"))
    assert run(["joint-probs", "--config", str(empty)], tmp_path / "out") == EXIT_STATISTICS


def test_exit_fit_failure(tmp_path):
    short = tmp_path / "short.yaml"
    short.write_text("hom_scan:\n  start_us: 1900\n  stop_us: 2000\n  step_us: 50\n  mean_pairs_per_mode: 0.05\n"
                     "detector:\n  efficiency: 1.0\nanalysis:\n  n_resamples: 100\n")
    assert run(["hom-scan", "--config", str(short), "--shots", "500"], tmp_path / "out") == EXIT_FIT


def test_exit_io_bad_dataset(small_config, tmp_path):
    bogus = tmp_path / "bogus.jsonl"
    bogus.write_text("not json at all\n")
    assert run(["g2-map", "--config", str(small_config), "--dataset", str(bogus)], tmp_path / "o1") == EXIT_IO
    missing = tmp_path / "missing.jsonl"
    assert run(["g2-map", "--config", str(small_config), "--dataset", str(missing)], tmp_path / "o2") == EXIT_IO


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fourmode.cli", "phase-scan", "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "results in" in proc.stdout
    data = np.genfromtxt(tmp_path / "o" / "phase_scan.csv", delimiter=",", names=True, skip_header=1)
    np.testing.assert_allclose(data["E_resonant"], np.cos(data["dphi_rad"]), atol=1e-12)
