"""End-to-end command-line coverage.

A six-cell simulated fleet feeds the feature/stats/predict chain; curve and
pulse commands run on generated inputs. Exit code 2 means rejected input,
1 means a runtime failure (for example a non-converging fit).
"""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from formationbench.cli import main
from formationbench.ingest import save_cycler_csv
from formationbench.ocv import full_cell_voltage, reference_curves
from formationbench.stoichsim import default_alignment, shift_lithium_inventory
from formationbench.synthcell import SynthCellSpec, generate_hppc

FLEET_CFG = {"n_baseline": 3, "n_fast": 3, "max_cycles": 900, "dt_s": 60.0}


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory, runner):
    root = tmp_path_factory.mktemp("cli-sim")
    cfg = root / "fleet.json"
    cfg.write_text(json.dumps(FLEET_CFG))
    out = root / "sim"
    res = runner.invoke(main, ["simulate", "--output-dir", str(out),
                               "--seed", "4", "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def features_csv(tmp_path_factory, runner, sim_dir):
    out = tmp_path_factory.mktemp("cli-feat")
    res = runner.invoke(main, ["features", "--input", str(sim_dir),
                               "--output-dir", str(out)])
    assert res.exit_code == 0, res.output
    assert "6 cells" in res.output
    return out / "features.csv"


def write_curve_csv(path, alignment, curves, n=400):
    q = np.linspace(0.0, alignment.q_full, n)
    v = full_cell_voltage(alignment, curves, q)
    pd.DataFrame({"capacity_ah": q, "voltage_v": v}).to_csv(path, index=False)


# --- simulate ----------------------------------------------------------------


def test_simulate_writes_full_artifact_set(sim_dir):
    names = {p.name for p in sim_dir.iterdir()}
    for cell in ("baseline-01", "baseline-02", "baseline-03",
                 "fast-01", "fast-02", "fast-03"):
        assert f"{cell}_formation.csv" in names
        assert f"{cell}_hppc.csv" in names
        assert f"{cell}_aging.csv" in names
    assert "fleet_truth.json" in names
    assert "capacity_fade.svg" in names
    truth = json.loads((sim_dir / "fleet_truth.json").read_text())
    assert len(truth) == 6
    assert all(t["knee_cycle"] > 0 for t in truth)


def test_simulate_same_seed_reproduces_truth_bytes(tmp_path, runner, sim_dir):
    cfg = tmp_path / "fleet.json"
    cfg.write_text(json.dumps(FLEET_CFG))
    out = tmp_path / "again"
    res = runner.invoke(main, ["simulate", "--output-dir", str(out),
                               "--seed", "4", "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    assert (out / "fleet_truth.json").read_bytes() == \
        (sim_dir / "fleet_truth.json").read_bytes()
    assert (out / "baseline-01_formation.csv").read_bytes() == \
        (sim_dir / "baseline-01_formation.csv").read_bytes()


def test_simulate_rejects_unknown_config_key(tmp_path, runner):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"n_cells": 5}))
    res = runner.invoke(main, ["simulate", "--output-dir", str(tmp_path / "x"),
                               "--config", str(cfg)])
    assert res.exit_code == 2
    assert "bad fleet config" in res.output


# --- features / stats / predict ------------------------------------------------


def test_features_table_layout(features_csv):
    table = pd.read_csv(features_csv)
    assert len(table) == 6
    assert {"cell_id", "group", "q_c_ah", "q_d_ah", "q_lli_ah", "ce_f",
            "r_ls_ohm"}.issubset(table.columns)
    assert set(table["group"]) == {"baseline", "fast"}
    assert table["r_ls_ohm"].notna().all()


def test_features_requires_formation_files(tmp_path, runner):
    res = runner.invoke(main, ["features", "--input", str(tmp_path)])
    assert res.exit_code == 2
    assert "no *_formation.csv" in res.output


def test_stats_reports_group_tests(tmp_path, runner, features_csv):
    res = runner.invoke(main, ["stats", "--input", str(features_csv),
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = json.loads((tmp_path / "stats.json").read_text())
    labels = [r["label"] for r in rows]
    assert any("q_lli_ah" in l for l in labels)
    assert any("r_ls_ohm vs cycles_to_70" in l for l in labels)
    assert any(r["test_kind"] == "cv_mslr" for r in rows)
    corr = next(r for r in rows if r["test_kind"] == "pearson")
    assert corr["statistic"] < -0.9  # planted resistance-to-life map


def test_predict_ridge_beats_dummy(tmp_path, runner, features_csv):
    res = runner.invoke(main, ["predict", "--input", str(features_csv),
                               "--runs", "50", "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    payload = json.loads((tmp_path / "predict_report.json").read_text())
    ridge = payload["ridge"]["aggregate"]["test_mpe_mean"]
    dummy = payload["dummy"]["aggregate"]["test_mpe_mean"]
    assert ridge < dummy
    assert payload["ridge"]["config"]["n_runs"] == 50
    assert len(payload["dummy"]["runs"]["test_mpe"]) == 50


def test_predict_threaded_output_is_identical(tmp_path, runner, features_csv):
    a = tmp_path / "serial"
    b = tmp_path / "threaded"
    args = ["predict", "--input", str(features_csv), "--runs", "30"]
    res = runner.invoke(main, args + ["--output-dir", str(a)])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, args + ["--output-dir", str(b)],
                        env={"FORMATION_BENCH_THREADS": "3"})
    assert res.exit_code == 0, res.output
    assert (a / "predict_report.json").read_bytes() == \
        (b / "predict_report.json").read_bytes()


def test_predict_rejects_bad_thread_env(tmp_path, runner, features_csv):
    res = runner.invoke(main, ["predict", "--input", str(features_csv),
                               "--runs", "5", "--output-dir", str(tmp_path)],
                        env={"FORMATION_BENCH_THREADS": "many"})
    assert res.exit_code == 2
    assert "FORMATION_BENCH_THREADS" in res.output


def test_predict_rejects_unknown_feature(tmp_path, runner, features_csv):
    res = runner.invoke(main, ["predict", "--input", str(features_csv),
                               "--features", "impedance_phase",
                               "--runs", "5", "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    assert "unknown feature" in res.output


# --- curve fitting -------------------------------------------------------------


def test_fit_ocv_recovers_planted_alignment(tmp_path, runner):
    curves = reference_curves()
    alignment = default_alignment(curves)
    src = tmp_path / "curve.csv"
    write_curve_csv(src, alignment, curves)
    res = runner.invoke(main, ["fit-ocv", "--input", str(src),
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    fitted = json.loads((tmp_path / "alignment.json").read_text())
    assert fitted["c_pe_ah"] == pytest.approx(alignment.c_pe, rel=1e-3)
    assert fitted["c_ne_ah"] == pytest.approx(alignment.c_ne, rel=1e-3)
    assert fitted["x_100"] == pytest.approx(alignment.x_100, rel=1e-3)
    assert fitted["fit_rmse_v"] < 1e-4


def test_fit_ocv_rejects_missing_columns(tmp_path, runner):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,4\n")
    res = runner.invoke(main, ["fit-ocv", "--input", str(bad),
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 2
    assert "capacity_ah" in res.output


def test_fit_ocv_starved_budget_exits_one(tmp_path, runner):
    curves = reference_curves()
    src = tmp_path / "curve.csv"
    write_curve_csv(src, default_alignment(curves), curves)
    cfg = tmp_path / "starve.json"
    cfg.write_text(json.dumps({"n_starts": 1, "max_iter": 1}))
    res = runner.invoke(main, ["fit-ocv", "--input", str(src),
                               "--config", str(cfg),
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 1
    assert "error" in res.output


def test_degmode_trajectory_over_two_tests(tmp_path, runner):
    curves = reference_curves()
    alignment = default_alignment(curves)
    src = tmp_path / "rpts"
    src.mkdir()
    write_curve_csv(src / "000_fresh.csv", alignment, curves)
    write_curve_csv(src / "001_aged.csv",
                    shift_lithium_inventory(alignment, 0.08, curves=curves),
                    curves)
    res = runner.invoke(main, ["degmode", "--input", str(src),
                               "--cycles", "0,150",
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    table = pd.read_csv(tmp_path / "trajectory.csv")
    assert list(table["cycle_number"]) == [0, 150]
    planted_lli = 0.08 / alignment.lithium_inventory()
    assert table["lli"].iloc[-1] == pytest.approx(planted_lli, abs=5e-3)
    assert abs(table["lam_pe"].iloc[-1]) < 0.01
    assert "lli" in res.output


def test_degmode_needs_input_files(tmp_path, runner):
    res = runner.invoke(main, ["degmode", "--input", str(tmp_path)])
    assert res.exit_code == 2
    assert "no CSV files" in res.output


def test_degmode_cycle_count_mismatch(tmp_path, runner):
    curves = reference_curves()
    src = tmp_path / "rpts"
    src.mkdir()
    write_curve_csv(src / "000.csv", default_alignment(curves), curves)
    write_curve_csv(src / "001.csv", default_alignment(curves), curves)
    res = runner.invoke(main, ["degmode", "--input", str(src), "--cycles", "0"])
    assert res.exit_code == 2


# --- pulse extraction ----------------------------------------------------------


def test_hppc_command_recovers_truth(tmp_path, runner):
    spec = SynthCellSpec.default()
    hp = generate_hppc(spec, soc_points=(0.03, 0.05, 0.1, 0.5), dt_s=60.0)
    src = tmp_path / "cellA_hppc.csv"
    save_cycler_csv(hp.series, src)
    res = runner.invoke(main, ["hppc", "--input", str(src),
                               "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "hppc_profile.csv").exists()
    assert (tmp_path / "hppc_resistance.svg").exists()
    reported = float(res.output.split("discharge:")[1].split("mOhm")[0])
    assert reported == pytest.approx(
        hp.truth.low_soc_resistance_ohm * 1e3, rel=1e-3)


# --- snr ------------------------------------------------------------------------


def test_snr_prints_derivation(runner):
    res = runner.invoke(main, ["snr"])
    assert res.exit_code == 0
    assert "0.88 mOhm" in res.output
    assert "20.00 mAh" in res.output
    assert "6.15x" in res.output


def test_snr_writes_report(tmp_path, runner):
    res = runner.invoke(main, ["snr", "--output-dir", str(tmp_path)])
    assert res.exit_code == 0
    report = json.loads((tmp_path / "snr_report.json").read_text())
    assert 5.0 <= report["improvement_ratio"] <= 6.5


def test_snr_config_override_and_rejection(tmp_path, runner):
    cfg = tmp_path / "inst.json"
    cfg.write_text(json.dumps({"i_precision_pct": 0.04}))
    res = runner.invoke(main, ["snr", "--config", str(cfg)])
    assert res.exit_code == 0
    assert "2.000 mA" in res.output
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"precision": 0.04}))
    res = runner.invoke(main, ["snr", "--config", str(bad)])
    assert res.exit_code == 2
    assert "bad instrument config" in res.output


# --- sensitivity ----------------------------------------------------------------


def test_sensitivity_artifacts_and_frozen_values(tmp_path, runner):
    res = runner.invoke(main, ["sensitivity", "--output-dir", str(tmp_path)])
    assert res.exit_code == 0, res.output
    for name in ("sensitivity.csv", "fpos_sweep.csv", "resistance_profile.svg",
                 "sensitivity.svg", "fpos_sweep.svg"):
        assert (tmp_path / name).exists()
    assert "dR/dQ_lli at 5% SOC: -214.9647 mOhm/Ah" in res.output
    assert "dQ_d/dQ_lli: -0.9346" in res.output
    sweep = pd.read_csv(tmp_path / "fpos_sweep.csv")
    normalized = sweep["normalized_sensitivity"].to_numpy()
    assert np.all(np.diff(normalized) > 0)


def test_missing_required_flag_is_usage_error(runner):
    res = runner.invoke(main, ["hppc"])
    assert res.exit_code == 2
