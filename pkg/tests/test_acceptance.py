"""Acceptance gate: one test per numbered release criterion.

Each test exercises its criterion end to end at the stated tolerance,
asserts the stated runtime budget, and prints one summary line of the form
"[PASS] criterion N: ..." (run with -s to see the lines live).
"""

import json
import math
import time

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from formationbench import snr, stats
from formationbench._interp import MonotoneCubic
from formationbench.cli import main as cli_main
from formationbench.degmode import degradation_trajectory
from formationbench.errors import ConvergenceError
from formationbench.features import cycle_life, var_delta_q
from formationbench.hppc import ExtractConfig, extract_pulses, resistance_at_soc
from formationbench.ocv import FitConfig, fit_electrode_alignment, full_cell_voltage
from formationbench.predict import CvConfig, nested_cv
from formationbench.stoichsim import (
    apply_lam,
    default_resistance_model,
    fpos_sweep,
    rls_sensitivity,
    shift_lithium_inventory,
)
from formationbench.synthcell import (
    FadeModel,
    FleetConfig,
    SynthCellSpec,
    generate_fleet,
    generate_hppc,
    model_low_soc_resistance,
)


def report(n, detail, elapsed, budget_s=None):
    if budget_s is not None:
        assert elapsed < budget_s, (
            f"criterion {n} overran its {budget_s:g}s budget: {elapsed:.1f}s"
        )
        print(f"[PASS] criterion {n}: {detail} ({elapsed:.1f}s < {budget_s:g}s)")
    else:
        print(f"[PASS] criterion {n}: {detail} ({elapsed:.1f}s)")


def synth_curve(alignment, curves, n=200):
    q = np.linspace(0.0, alignment.q_full, n)
    return q, np.asarray(full_cell_voltage(alignment, curves, q))


def test_criterion_01_instrument_resolution():
    t0 = time.perf_counter()
    rep = snr.default_report()
    assert rep.i_err_a == 0.001
    assert rep.v_err_v == 0.001
    assert rep.r_limit_ohm == pytest.approx(0.88e-3, abs=0.005e-3)
    assert rep.q_limit_ah == 0.02
    assert 5.0 <= rep.improvement_ratio <= 6.5
    report(
        1,
        f"i_err 1 mA, v_err 1 mV, r_limit {rep.r_limit_ohm * 1e3:.3f} mOhm, "
        f"q_limit 20 mAh, ratio {rep.improvement_ratio:.2f}",
        time.perf_counter() - t0, 1.0,
    )


def test_criterion_02_group_statistics():
    t0 = time.perf_counter()
    cap = stats.two_sample_t(
        stats.synthetic_group(2370.0, 11.0, 19),
        stats.synthetic_group(2362.0, 7.0, 20),
    )
    assert 0.008 <= cap.p_value <= 0.015
    res = stats.two_sample_t(
        stats.synthetic_group(48.7, 1.6, 9),
        stats.synthetic_group(43.8, 1.1, 10),
    )
    assert res.p_value < 0.001
    report(
        2,
        f"capacity-band p {cap.p_value:.4f} in [0.008, 0.015], "
        f"resistance-band p {res.p_value:.2e} < 0.001",
        time.perf_counter() - t0, 1.0,
    )


def test_criterion_03_alignment_fit_round_trip(alignment, curves):
    t0 = time.perf_counter()
    q, v = synth_curve(alignment, curves, n=500)
    truth = (alignment.c_pe, alignment.c_ne, alignment.x_100)

    def rel_errors(fit):
        got = (fit.alignment.c_pe, fit.alignment.c_ne, fit.alignment.x_100)
        return [abs(g - t) / t for g, t in zip(got, truth)]

    clean = fit_electrode_alignment(q, v, curves, FitConfig())
    clean_err = max(rel_errors(clean))
    assert clean_err < 0.003

    noisy_errs = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        v_noisy = v + rng.normal(0.0, 0.002, v.size)
        try:
            fit = fit_electrode_alignment(q, v_noisy, curves, FitConfig())
        except ConvergenceError as exc:
            assert exc.best is not None
            fit = exc.best
        noisy_errs.append(max(rel_errors(fit)))
    median_err = float(np.median(noisy_errs))
    assert median_err < 0.015
    report(
        3,
        f"noise-free max error {clean_err:.2e} < 0.3%, "
        f"2 mV noise median error {median_err:.2%} < 1.5% over 50 seeds",
        time.perf_counter() - t0, 120.0,
    )


def test_criterion_04_degradation_mode_recovery(alignment, curves):
    t0 = time.perf_counter()
    q_li = alignment.lithium_inventory()

    delta = 0.24
    lli_only = shift_lithium_inventory(alignment, delta, curves=curves)
    traj = degradation_trajectory(
        [synth_curve(alignment, curves), synth_curve(lli_only, curves)],
        curves,
    )
    state = traj[-1]
    planted_lli = delta / q_li
    assert not state.failed
    assert abs(state.lli - planted_lli) < 0.02
    assert abs(state.lam_pe) < 0.02
    assert abs(state.lam_ne) < 0.02

    lam_cell = apply_lam(alignment, "positive", "delithiated", 0.10, curves=curves)
    traj2 = degradation_trajectory(
        [synth_curve(alignment, curves), synth_curve(lam_cell, curves)],
        curves,
    )
    state2 = traj2[-1]
    assert not state2.failed
    assert abs(state2.lam_pe - 0.10) < 0.02
    report(
        4,
        f"planted LLI {planted_lli:.3f} recovered as {state.lli:.3f} "
        f"(|LAM| < 2%), planted 10% LAM_PE recovered as {state2.lam_pe:.3f}",
        time.perf_counter() - t0, 300.0,
    )


def test_criterion_05_stoichiometry_sign_matrix(alignment, curves, rmodel):
    t0 = time.perf_counter()
    deltas = (0.0, 0.02, 0.05, 0.08, 0.10)
    r_ls, r_90 = [], []
    for d in deltas:
        al = alignment if d == 0.0 else shift_lithium_inventory(
            alignment, d, curves=curves)
        r_ls.append(model_low_soc_resistance(al, rmodel, soc=0.05, curves=curves))
        r_90.append(model_low_soc_resistance(al, rmodel, soc=0.90, curves=curves))
    assert all(b < a for a, b in zip(r_ls, r_ls[1:]))
    assert all(abs(r - r_90[0]) / r_90[0] < 0.01 for r in r_90)

    sens = rls_sensitivity(alignment, rmodel, (0.02, 0.05, 0.08), curves=curves)
    assert 0.8 <= -sens.dqd_dqlli <= 1.0
    mags = [abs(v) for v in sens.dr_dqlli]
    assert mags[0] > mags[1] > mags[2]

    def low_soc_r(al):
        return rmodel.full_resistance(al.y_at(0.05 * al.q_full))

    r0, q0 = low_soc_r(alignment), alignment.q_full
    resp = {
        (electrode, phase): (
            low_soc_r(al := apply_lam(alignment, electrode, phase, 0.15,
                                      curves=curves)) - r0,
            al.q_full - q0,
        )
        for electrode in ("positive", "negative")
        for phase in ("lithiated", "delithiated")
    }
    dr_pe_del, dq_pe_del = resp[("positive", "delithiated")]
    dr_pe_lit, dq_pe_lit = resp[("positive", "lithiated")]
    dr_ne_lit, dq_ne_lit = resp[("negative", "lithiated")]
    dr_ne_del, dq_ne_del = resp[("negative", "delithiated")]
    assert dr_pe_del > 0 and abs(dq_pe_del) / q0 < 0.01
    assert dq_pe_lit < -0.05 * q0 and abs(dr_pe_lit) < 0.10 * abs(dr_pe_del)
    assert dr_ne_lit < 0 and dq_ne_lit < -0.05 * q0
    assert abs(dr_ne_del) < 0.10 * abs(dr_pe_del) and abs(dq_ne_del) / q0 < 0.01
    report(
        5,
        f"R_LS strictly falls with inventory loss, R@90% within 1%, "
        f"|dQ_d/dQ_lli| {-sens.dqd_dqlli:.4f} in [0.8, 1.0], "
        f"|dR/dQ_lli| ordered {mags[0]:.3f} > {mags[1]:.3f} > {mags[2]:.3f}, "
        f"four-case sign pattern holds",
        time.perf_counter() - t0, 30.0,
    )


def test_criterion_06_resistance_partition_sweep(alignment, curves, rmodel):
    t0 = time.perf_counter()
    grid = (0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 1.0)
    rows = fpos_sweep(alignment, rmodel, grid, curves=curves)
    normalized = [row.normalized for row in rows]
    assert all(b > a for a, b in zip(normalized, normalized[1:]))
    at_quarter = normalized[grid.index(0.25)]
    at_full = normalized[grid.index(1.0)]
    assert at_quarter < 0.5 * at_full
    report(
        6,
        f"normalized sensitivity monotone in f_pos; "
        f"value {at_quarter:.3f} at f_pos=0.25 is below half of "
        f"{at_full:.3f} at f_pos=1",
        time.perf_counter() - t0, 30.0,
    )


def test_criterion_07_prediction_protocol(curves):
    t0 = time.perf_counter()
    cfg = FleetConfig(knee_noise_frac=0.05)
    fleet = generate_fleet(cfg, curves)
    ds = fleet.dataset(feature_names=("r_ls_ohm",))
    cv_cfg = CvConfig()  # 1000 runs, 4 folds, base seed 0
    ridge = nested_cv(ds, config=cv_cfg, model="ridge")
    dummy = nested_cv(ds, config=cv_cfg, model="dummy")
    gap = dummy.test_mpe_mean - ridge.test_mpe_mean
    assert gap >= 3.0

    life = ds.target
    n_total = life.size
    m = int(round(cv_cfg.validation_fraction * n_total))
    n_train = n_total - m
    cv_life = float(np.std(life, ddof=1) / np.mean(life))
    floor = math.sqrt(2.0 / math.pi) * cv_life * math.sqrt(
        n_total / (m * n_train)) * 100.0
    assert abs(dummy.test_mpe_mean - floor) <= 0.30 * floor

    fleet2 = generate_fleet(cfg, curves)
    ds2 = fleet2.dataset(feature_names=("r_ls_ohm",))
    np.testing.assert_array_equal(ds.features, ds2.features)
    ridge2 = nested_cv(ds2, config=cv_cfg, model="ridge")
    np.testing.assert_array_equal(ridge.test_mpe, ridge2.test_mpe)
    report(
        7,
        f"ridge |test MPE| {ridge.test_mpe_mean:.2f}% vs dummy "
        f"{dummy.test_mpe_mean:.2f}% (gap {gap:.2f}pp >= 3), dummy within "
        f"30% of {floor:.2f}% noise floor, bit-identical on rerun",
        time.perf_counter() - t0, 300.0,
    )


def test_criterion_08_feature_oracles(alignment, curves):
    t0 = time.perf_counter()

    def smooth_pair(seed):
        rng = np.random.default_rng(seed)
        v = np.linspace(2.95, 4.25, 40)
        base = 2.4 * (4.25 - v) / 1.3
        early = base + 0.05 * np.sin(3.0 * v) + rng.normal(0.0, 0.01, v.size)
        late = base - 0.1 * (v - 2.95) + 0.04 * np.cos(2.0 * v)
        return (v, early), (v, late)

    grid = np.linspace(3.0, 4.2, 1000)
    worst = 0.0
    for seed in (0, 1, 2, 3):
        early, late = smooth_pair(seed)
        resample = lambda c: MonotoneCubic(*map(np.asarray, c))(grid)
        dq = resample(late) - resample(early)
        mean = math.fsum(dq) / dq.size
        brute = math.fsum((d - mean) ** 2 for d in dq) / dq.size
        got = var_delta_q(early, late)
        worst = max(worst, abs(got - brute))
        assert got == pytest.approx(brute, abs=1e-12)
    early, _ = smooth_pair(0)
    offset = (early[0], np.asarray(early[1]) + 0.125)
    assert var_delta_q(early, offset) <= 1e-12

    fade = FadeModel(knee_cycle=300.0)
    cycles = np.arange(1.0, 1001.0)
    caps = 2.37 * fade.retention(cycles)
    worst_life = 0.0
    for level in (0.5, 0.6, 0.7, 0.8):
        out = cycle_life(cycles, caps, initial_capacity_ah=2.37, retention=level)
        assert not out.censored
        worst_life = max(worst_life,
                         abs(out.cycles - fade.cycles_to_retention(level)))
        assert worst_life <= 0.5

    spec = SynthCellSpec.default(sei_loss_formation=0.30, seed=11)
    hp = generate_hppc(spec, soc_points=(0.05, 0.1, 0.5, 0.9), curves=curves)
    profile = extract_pulses(hp.series, ExtractConfig(cell_id="oracle"))
    worst_r = 0.0
    for truth in hp.truth.pulses:
        fam = profile.family(truth.direction, 10.0)
        match = min(fam, key=lambda p: abs(p.soc - truth.soc))
        worst_r = max(worst_r, abs(match.resistance - truth.resistance_ohm))
        assert match.resistance == pytest.approx(truth.resistance_ohm, abs=1e-6)
    r_ls = resistance_at_soc(profile, 0.05)
    assert r_ls == pytest.approx(hp.truth.low_soc_resistance_ohm, abs=1e-6)
    report(
        8,
        f"var_delta_q within {worst:.1e} of brute force, offsets exactly "
        f"flat, cycle_life within {worst_life:.2e} cycles, pulse extraction "
        f"within {worst_r:.1e} Ohm",
        time.perf_counter() - t0, 60.0,
    )


def test_criterion_09_statistics_calibration():
    t0 = time.perf_counter()
    rate = stats.cv_mslr_rejection_rate(
        (10, 10), (0.15, 0.15), (1.0, 1.0), n_trials=2000, alpha=0.05,
        base_seed=0,
    )
    assert 0.03 <= rate <= 0.07

    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=11)
        y = 0.5 * x + rng.normal(size=11)
        mx = math.fsum(x) / x.size
        my = math.fsum(y) / y.size
        sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
        sxx = math.fsum((a - mx) ** 2 for a in x)
        syy = math.fsum((b - my) ** 2 for b in y)
        brute = sxy / math.sqrt(sxx * syy)
        got = stats.pearson(x, y).statistic
        worst = max(worst, abs(got - brute))
        assert got == pytest.approx(brute, abs=1e-12)
    report(
        9,
        f"null rejection rate {rate:.3f} in [0.03, 0.07] over 2000 trials, "
        f"pearson within {worst:.1e} of brute force",
        time.perf_counter() - t0, 120.0,
    )


def test_criterion_10_cli_determinism(tmp_path, alignment, curves):
    t0 = time.perf_counter()
    runner = CliRunner()
    fleet_cfg = tmp_path / "fleet.json"
    fleet_cfg.write_text(json.dumps(
        {"n_baseline": 3, "n_fast": 3, "max_cycles": 900, "dt_s": 60.0}))

    def run(args):
        res = runner.invoke(cli_main, args)
        assert res.exit_code == 0, res.output
        return res

    def data_files(root):
        return sorted(
            p for p in root.iterdir() if p.suffix in (".csv", ".json"))

    compared = 0

    def assert_dirs_match(a, b):
        nonlocal compared
        fa, fb = data_files(a), data_files(b)
        assert [p.name for p in fa] == [p.name for p in fb]
        for pa, pb in zip(fa, fb):
            assert pa.read_bytes() == pb.read_bytes(), pa.name
            compared += 1

    sims = []
    for tag in ("a", "b"):
        sim = tmp_path / f"sim-{tag}"
        run(["simulate", "--output-dir", str(sim), "--seed", "4",
             "--config", str(fleet_cfg)])
        feat = tmp_path / f"feat-{tag}"
        run(["features", "--input", str(sim), "--output-dir", str(feat)])
        run(["stats", "--input", str(feat / "features.csv"), "--seed", "0",
             "--output-dir", str(tmp_path / f"stats-{tag}")])
        run(["predict", "--input", str(feat / "features.csv"), "--runs", "50",
             "--seed", "0", "--output-dir", str(tmp_path / f"pred-{tag}")])
        run(["sensitivity", "--output-dir", str(tmp_path / f"sens-{tag}")])
        run(["snr", "--output-dir", str(tmp_path / f"snr-{tag}")])
        sims.append(sim)

    curve = tmp_path / "curve.csv"
    q, v = synth_curve(alignment, curves, n=400)
    pd.DataFrame({"capacity_ah": q, "voltage_v": v}).to_csv(curve, index=False)
    rpts = tmp_path / "rpts"
    rpts.mkdir()
    pd.DataFrame({"capacity_ah": q, "voltage_v": v}).to_csv(
        rpts / "000.csv", index=False)
    aged = shift_lithium_inventory(alignment, 0.08, curves=curves)
    qa, va = synth_curve(aged, curves, n=400)
    pd.DataFrame({"capacity_ah": qa, "voltage_v": va}).to_csv(
        rpts / "001.csv", index=False)
    hp = generate_hppc(SynthCellSpec.default(), soc_points=(0.05, 0.5),
                       dt_s=60.0, curves=curves)
    from formationbench.ingest import save_cycler_csv
    pulse_csv = tmp_path / "cell_hppc.csv"
    save_cycler_csv(hp.series, pulse_csv)
    for tag in ("a", "b"):
        run(["fit-ocv", "--input", str(curve),
             "--output-dir", str(tmp_path / f"fit-{tag}")])
        run(["degmode", "--input", str(rpts),
             "--output-dir", str(tmp_path / f"deg-{tag}")])
        run(["hppc", "--input", str(pulse_csv),
             "--output-dir", str(tmp_path / f"hppc-{tag}")])

    for stem in ("sim", "feat", "stats", "pred", "sens", "snr", "fit",
                 "deg", "hppc"):
        assert_dirs_match(tmp_path / f"{stem}-a", tmp_path / f"{stem}-b")
    report(
        10,
        f"all 9 pipelines byte-identical on rerun "
        f"({compared} JSON/CSV artifacts compared)",
        time.perf_counter() - t0,
    )
