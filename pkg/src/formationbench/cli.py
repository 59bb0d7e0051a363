"""Command-line surface for the formation-diagnostics pipeline.

Every subcommand is a thin adapter over one library call: parse flags (a
JSON config file may supply defaults, explicit flags win), dispatch, write
artifacts. Exit code 2 flags input/validation problems, 1 anything that
failed at runtime.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .errors import (
    ConfigError,
    EmptyInputError,
    FormationBenchError,
    InsufficientDataError,
    SchemaError,
    ValidationError,
)

__all__ = ["main"]


def _threads_from_env() -> int | None:
    raw = os.environ.get("FORMATION_BENCH_THREADS", "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"FORMATION_BENCH_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError("FORMATION_BENCH_THREADS must be at least 1")
    return value


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _merge(flag_value, config: dict, key: str, default):
    """Flag beats config file beats built-in default."""
    if flag_value is not None:
        return flag_value
    return config.get(key, default)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_curve_csv(path):
    df = pd.read_csv(path)
    for col in ("capacity_ah", "voltage_v"):
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    return df["capacity_ah"].to_numpy(float), df["voltage_v"].to_numpy(float)


def _pipeline_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except FormationBenchError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
def main():
    """Formation diagnostics: fitting, pulse analysis, prediction, simulation."""


@main.command("fit-ocv")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--output-dir", default=".", show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@_pipeline_errors
def fit_ocv_cmd(input_path, output_dir, config_path):
    """Fit electrode alignment to a slow charge/discharge curve CSV."""
    from .ocv import FitConfig, alignment_to_json, fit_electrode_alignment, reference_curves

    cfg = _load_config(config_path)
    try:
        fit_config = FitConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad fit config: {exc}") from exc
    q, v = _read_curve_csv(input_path)
    fit = fit_electrode_alignment(q, v, reference_curves(), fit_config)
    out = _outdir(output_dir)
    alignment_to_json(fit.alignment, out / "alignment.json", fit_rmse_v=fit.rmse_v)
    a = fit.alignment
    click.echo(
        f"fit rmse {fit.rmse_v:.6f} V | c_pe {a.c_pe:.4f} Ah | "
        f"c_ne {a.c_ne:.4f} Ah | x_100 {a.x_100:.4f} | wrote {out / 'alignment.json'}"
    )


@main.command("degmode")
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True))
@click.option("--cycles", default=None, help="Comma-separated cycle numbers, one per file.")
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def degmode_cmd(input_dir, cycles, output_dir):
    """Fit a sorted directory of reference-test curves into a degradation trajectory."""
    from .degmode import degradation_trajectory, trajectory_to_csv
    from .ocv import reference_curves

    files = sorted(Path(input_dir).glob("*.csv"))
    if not files:
        raise EmptyInputError(f"no CSV files in {input_dir}")
    cycle_numbers = None
    if cycles is not None:
        cycle_numbers = [int(tok) for tok in cycles.split(",") if tok.strip()]
    rpts = [_read_curve_csv(f) for f in files]
    traj = degradation_trajectory(rpts, reference_curves(), cycle_numbers=cycle_numbers)
    out = _outdir(output_dir)
    trajectory_to_csv(traj, out / "trajectory.csv")
    for s in traj:
        if s.failed:
            click.echo(f"rpt {s.rpt_index} (cycle {s.cycle_number}): fit did not converge")
        else:
            click.echo(
                f"rpt {s.rpt_index} (cycle {s.cycle_number}): lli {s.lli:+.4f} "
                f"lam_pe {s.lam_pe:+.4f} lam_ne {s.lam_ne:+.4f}"
            )
    click.echo(f"wrote {out / 'trajectory.csv'}")


@main.command("hppc")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--soc", default=0.05, show_default=True, type=float)
@click.option("--duration", default=10.0, show_default=True, type=float)
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def hppc_cmd(input_path, soc, duration, output_dir):
    """Extract a pulse-resistance profile from a cycler series."""
    from .hppc import ExtractConfig, extract_pulses, profile_to_csv, resistance_at_soc
    from .ingest import load_cycler_csv
    from .plots import line_chart

    series = load_cycler_csv(input_path)
    stem = Path(input_path).stem
    profile = extract_pulses(series, ExtractConfig(cell_id=stem))
    out = _outdir(output_dir)
    profile_to_csv(profile, out / "hppc_profile.csv")
    chart = []
    for direction in ("discharge", "charge"):
        fam = profile.family(direction, duration)
        if fam:
            chart.append(
                ([p.soc for p in fam], [p.resistance * 1e3 for p in fam], direction)
            )
    if chart:
        line_chart(
            out / "hppc_resistance.svg", chart,
            xlabel="SOC (fraction)", ylabel="resistance (mOhm)",
            title=f"{duration:g}s pulse resistance",
        )
    r = resistance_at_soc(profile, soc, duration=duration)
    click.echo(
        f"resistance at {soc:.1%} SOC, {duration:g}s discharge: {r * 1e3:.4f} mOhm | "
        f"wrote {out / 'hppc_profile.csv'}"
    )


@main.command("features")
@click.option("--input", "input_dir", required=True, type=click.Path(exists=True))
@click.option("--soc", default=0.05, show_default=True, type=float,
              help="SOC for the low-SOC resistance feature.")
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def features_cmd(input_dir, soc, output_dir):
    """Compute per-cell features from a directory of generated series."""
    from .features import (
        RETENTION_LEVELS,
        FeatureRecord,
        cycle_life,
        feature_table_to_csv,
        formation_features,
    )
    from .hppc import ExtractConfig, extract_pulses, resistance_at_soc
    from .ingest import load_cycler_csv

    root = Path(input_dir)
    formation_files = sorted(root.glob("*_formation.csv"))
    if not formation_files:
        raise EmptyInputError(f"no *_formation.csv files in {input_dir}")
    records = []
    for path in formation_files:
        cell_id = path.name[: -len("_formation.csv")]
        group = cell_id.split("-")[0]
        feats = formation_features(load_cycler_csv(path))
        r_ls = None
        hppc_path = root / f"{cell_id}_hppc.csv"
        if hppc_path.exists():
            profile = extract_pulses(
                load_cycler_csv(hppc_path), ExtractConfig(cell_id=cell_id)
            )
            r_ls = float(resistance_at_soc(profile, soc, duration=10.0))
        life = []
        aging_path = root / f"{cell_id}_aging.csv"
        if aging_path.exists():
            aging = pd.read_csv(aging_path)
            for col in ("cycle_number", "capacity_ah"):
                if col not in aging.columns:
                    raise SchemaError(f"{aging_path}: missing column {col!r}")
            life = [
                cycle_life(
                    aging["cycle_number"].to_numpy(float),
                    aging["capacity_ah"].to_numpy(float),
                    retention=level,
                )
                for level in RETENTION_LEVELS
            ]
        records.append(
            FeatureRecord(cell_id=cell_id, group=group, formation=feats,
                          r_ls_ohm=r_ls, life=life)
        )
    out = _outdir(output_dir)
    feature_table_to_csv(records, out / "features.csv")
    click.echo(f"{len(records)} cells -> {out / 'features.csv'}")


def _life_column(records, retention):
    values, cells, groups = [], [], []
    for rec in records:
        outcome = rec.life_at(retention)
        if outcome is not None and not outcome.censored:
            values.append(outcome.cycles)
            cells.append(rec.cell_id)
            groups.append(rec.group)
    return values, cells, groups


@main.command("stats")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--retention", default=0.7, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def stats_cmd(input_path, retention, seed, output_dir):
    """Group comparisons and correlations on a feature table."""
    from .features import feature_table_from_csv
    from .stats import cv_equality_mslr, pearson, two_sample_t

    records = feature_table_from_csv(input_path)
    groups = sorted({rec.group for rec in records})
    rows = []

    def add(label, result):
        rows.append({"label": label, **result.to_json_row()})

    if len(groups) == 2:
        ga, gb = groups
        for attr, getter in (
            ("q_lli_ah", lambda r: r.formation.q_lli),
            ("q_d_ah", lambda r: r.formation.q_d),
            ("ce_f", lambda r: r.formation.ce_f),
            ("r_ls_ohm", lambda r: r.r_ls_ohm),
        ):
            a = [getter(r) for r in records if r.group == ga and getter(r) is not None]
            b = [getter(r) for r in records if r.group == gb and getter(r) is not None]
            if len(a) >= 2 and len(b) >= 2:
                add(f"{attr}: {ga} vs {gb}", two_sample_t(a, b))
    life, cells, life_groups = _life_column(records, retention)
    r_by_cell = {rec.cell_id: rec.r_ls_ohm for rec in records}
    paired = [
        (r_by_cell[c], v) for c, v in zip(cells, life) if r_by_cell.get(c) is not None
    ]
    if len(paired) >= 3:
        add(
            f"r_ls_ohm vs cycles_to_{int(round(retention * 100))}",
            pearson([p[0] for p in paired], [p[1] for p in paired]),
        )
    life_sets = [
        [v for v, g in zip(life, life_groups) if g == grp] for grp in groups
    ]
    if len(life_sets) >= 2 and all(len(s) >= 3 for s in life_sets):
        add(
            f"cv of cycles_to_{int(round(retention * 100))} across groups",
            cv_equality_mslr(life_sets, seed=seed),
        )
    if not rows:
        raise InsufficientDataError(
            "feature table supports no tests (need 2 groups or life outcomes)"
        )
    out = _outdir(output_dir)
    with open(out / "stats.json", "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    for row in rows:
        click.echo(
            f"{row['label']}: {row['test_kind']} statistic {row['statistic']:+.4f} "
            f"p {row['p_value']:.4g}"
        )
    click.echo(f"wrote {out / 'stats.json'}")


@main.command("predict")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--features", "feature_list", default="r_ls_ohm", show_default=True,
              help="Comma-separated feature columns.")
@click.option("--retention", default=0.7, show_default=True, type=float)
@click.option("--runs", default=None, type=int)
@click.option("--folds", default=None, type=int)
@click.option("--alpha-grid", default=None,
              help="Comma-separated alphas, or a single integer grid size.")
@click.option("--seed", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def predict_cmd(input_path, feature_list, retention, runs, folds, alpha_grid,
                seed, config_path, output_dir):
    """Nested-CV ridge and dummy baselines on a feature table."""
    from .features import feature_table_from_csv
    from .predict import CvConfig, Dataset, default_alpha_grid, nested_cv

    cfg_file = _load_config(config_path)
    names = tuple(tok.strip() for tok in feature_list.split(",") if tok.strip())
    if alpha_grid is None:
        grid = tuple(cfg_file.get("alpha_grid", default_alpha_grid()))
    elif "," in alpha_grid:
        grid = tuple(float(tok) for tok in alpha_grid.split(",") if tok.strip())
    else:
        grid = default_alpha_grid(int(alpha_grid))
    config = CvConfig(
        validation_fraction=cfg_file.get("validation_fraction", 0.20),
        inner_folds=_merge(folds, cfg_file, "inner_folds", 4),
        n_runs=_merge(runs, cfg_file, "n_runs", 1000),
        alpha_grid=grid,
        base_seed=_merge(seed, cfg_file, "base_seed", 0),
    )

    records = feature_table_from_csv(input_path)
    life, cells, _ = _life_column(records, retention)
    by_cell = {rec.cell_id: rec for rec in records}
    rows, target, ids = [], [], []
    for cell, y in zip(cells, life):
        rec = by_cell[cell]
        values = []
        for name in names:
            if name == "q_lli_ah":
                values.append(rec.formation.q_lli)
            elif name == "q_c_ah":
                values.append(rec.formation.q_c)
            elif name == "q_d_ah":
                values.append(rec.formation.q_d)
            elif name == "ce_f":
                values.append(rec.formation.ce_f)
            elif name == "r_ls_ohm":
                values.append(rec.r_ls_ohm)
            elif name == "var_delta_q_ah2":
                values.append(rec.var_delta_q)
            else:
                raise ConfigError(f"unknown feature {name!r}")
        if any(v is None for v in values):
            continue
        rows.append(values)
        target.append(y)
        ids.append(cell)
    dataset = Dataset(
        features=np.asarray(rows, dtype=float),
        target=np.asarray(target, dtype=float),
        feature_names=names,
        cell_ids=tuple(ids),
        target_name=f"cycles_to_{int(round(retention * 100))}",
    )
    threads = _threads_from_env()
    ridge = nested_cv(dataset, config=config, model="ridge", threads=threads)
    dummy = nested_cv(dataset, config=config, model="dummy", threads=threads)
    out = _outdir(output_dir)
    payload = {"ridge": json.loads(ridge.to_json()), "dummy": json.loads(dummy.to_json())}
    with open(out / "predict_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    click.echo(
        f"ridge |test MPE| {ridge.test_mpe_mean:.2f}% (sd {ridge.test_mpe_sd:.2f}) | "
        f"dummy {dummy.test_mpe_mean:.2f}% (sd {dummy.test_mpe_sd:.2f}) | "
        f"wrote {out / 'predict_report.json'}"
    )


@main.command("sensitivity")
@click.option("--setpoints", default="0.02,0.05,0.08", show_default=True,
              help="Comma-separated SOC setpoints.")
@click.option("--fpos-grid", default="0.1,0.25,0.4,0.55,0.7,0.85,1.0",
              show_default=True)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--output-dir", default=".", show_default=True)
@_pipeline_errors
def sensitivity_cmd(setpoints, fpos_grid, config_path, output_dir):
    """Resistance/capacity sensitivity to lithium-inventory loss."""
    from .ocv import reference_curves
    from .plots import line_chart
    from .stoichsim import (
        ResistanceModel,
        default_alignment,
        default_resistance_model,
        fpos_sweep,
        fpos_table_to_csv,
        predicted_resistance_profile,
        rls_sensitivity,
        sensitivity_to_csv,
    )

    curves = reference_curves()
    alignment = default_alignment(curves)
    cfg = _load_config(config_path)
    if cfg:
        try:
            rmodel = ResistanceModel(**cfg)
        except TypeError as exc:
            raise ConfigError(f"bad resistance model config: {exc}") from exc
    else:
        rmodel = default_resistance_model(alignment, curves)
    socs = tuple(float(tok) for tok in setpoints.split(",") if tok.strip())
    fgrid = tuple(float(tok) for tok in fpos_grid.split(",") if tok.strip())

    report = rls_sensitivity(alignment, rmodel, socs, curves=curves)
    rows = fpos_sweep(alignment, rmodel, fgrid, curves=curves)
    out = _outdir(output_dir)
    sensitivity_to_csv(report, out / "sensitivity.csv")
    fpos_table_to_csv(rows, out / "fpos_sweep.csv")

    q, r = predicted_resistance_profile(alignment, rmodel)
    line_chart(
        out / "resistance_profile.svg",
        [(q / alignment.q_full, r * 1e3, None)],
        xlabel="SOC (fraction)", ylabel="resistance (mOhm)",
        title="predicted full-cell resistance",
    )
    line_chart(
        out / "sensitivity.svg",
        [(list(report.soc_setpoints),
          [abs(v) * 1e3 for v in report.dr_dqlli], None)],
        xlabel="SOC setpoint", ylabel="|dR/dQ_lli| (mOhm/Ah)",
        title="low-SOC sensitivity",
    )
    line_chart(
        out / "fpos_sweep.svg",
        [([row.f_pos for row in rows], [row.normalized for row in rows], None)],
        xlabel="positive-electrode share of resistance",
        ylabel="normalized sensitivity",
        title="sensitivity vs resistance partition",
    )
    for soc, val in zip(report.soc_setpoints, report.dr_dqlli):
        click.echo(f"dR/dQ_lli at {soc:.0%} SOC: {val * 1e3:+.4f} mOhm/Ah")
    click.echo(
        f"dQ_d/dQ_lli: {report.dqd_dqlli:+.4f} Ah/Ah | wrote {out / 'sensitivity.csv'}"
    )


@main.command("snr")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--test-hours", default=10.0, show_default=True, type=float)
@click.option("--output-dir", default=None)
@_pipeline_errors
def snr_cmd(config_path, test_hours, output_dir):
    """Instrument-resolution derivation for the two inventory-estimation routes."""
    from .snr import (
        InstrumentSpec,
        derivation_table,
        qlli_resolution,
        report_to_json,
        resolution_limits,
    )

    cfg = _load_config(config_path)
    try:
        spec = InstrumentSpec(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad instrument config: {exc}") from exc
    click.echo(derivation_table(spec, test_hours=test_hours))
    if output_dir is not None:
        out = _outdir(output_dir)
        report = qlli_resolution(resolution_limits(spec, test_hours=test_hours))
        report_to_json(report, out / "snr_report.json")
        click.echo(f"wrote {out / 'snr_report.json'}")


@main.command("simulate")
@click.option("--output-dir", required=True)
@click.option("--seed", default=None, type=int)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@_pipeline_errors
def simulate_cmd(output_dir, seed, config_path):
    """Generate a synthetic two-group fleet: series CSVs plus truth sidecar."""
    from .ingest import save_cycler_csv
    from .plots import line_chart
    from .synthcell import FleetConfig, generate_fleet

    cfg = _load_config(config_path)
    if seed is not None:
        cfg["seed"] = seed
    try:
        fleet_config = FleetConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad fleet config: {exc}") from exc
    out = _outdir(output_dir)
    fade_curves = []

    def sink(cell_id, form, hp, cycles, caps):
        save_cycler_csv(form.series, out / f"{cell_id}_formation.csv")
        save_cycler_csv(hp.series, out / f"{cell_id}_hppc.csv")
        pd.DataFrame({"cycle_number": cycles, "capacity_ah": caps}).to_csv(
            out / f"{cell_id}_aging.csv", index=False
        )
        fade_curves.append((cycles, caps / caps[0], None))

    fleet = generate_fleet(fleet_config, sink=sink)
    fleet.truth_to_json(out / "fleet_truth.json")
    line_chart(
        out / "capacity_fade.svg", fade_curves,
        xlabel="cycle", ylabel="capacity retention",
        title="simulated fleet capacity fade",
    )
    click.echo(
        f"{len(fleet.records)} cells -> {out} "
        f"(formation/hppc/aging CSVs, fleet_truth.json)"
    )


if __name__ == "__main__":
    main()
