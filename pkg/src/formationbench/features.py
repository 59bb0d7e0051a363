"""Formation-cycle features and cycle-life outcomes.

First-charge capacity includes the constant-voltage tail: everything from the
start of the record to the first discharge segment counts as the first charge.
Lithium consumed during formation is measured coulombically as the difference
between that first charge and the final full discharge of the formation
protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._interp import MonotoneCubic
from .errors import (
    ConfigError,
    FeatureError,
    InsufficientDataError,
    SpanError,
    ValidationError,
)
from .ingest import CyclerTimeSeries, SegmentConfig, integrate_capacity, segment_steps

__all__ = [
    "FormationFeatures",
    "FeatureRecord",
    "LifeOutcome",
    "formation_features",
    "var_delta_q",
    "cycle_life",
    "feature_table_to_csv",
    "feature_table_from_csv",
]

RETENTION_LEVELS = (0.5, 0.6, 0.7, 0.8)


@dataclass
class FormationFeatures:
    """Coulombic summary of one formation record (all in Ah except ce_f)."""

    q_c: float
    q_d: float
    q_lli: float
    ce_f: float

    def __post_init__(self):
        if not (self.q_c >= self.q_d > 0):
            raise ValidationError(
                f"need q_c >= q_d > 0, got q_c={self.q_c}, q_d={self.q_d}"
            )
        if abs(self.q_lli - (self.q_c - self.q_d)) > 1e-12:
            raise ValidationError("q_lli must equal q_c - q_d")
        if not (0 < self.ce_f <= 1):
            raise ValidationError(f"ce_f must lie in (0, 1], got {self.ce_f}")


@dataclass
class LifeOutcome:
    """Cycle count to a retention threshold; censored when never reached."""

    retention: float
    cycles: float
    censored: bool = False

    def __post_init__(self):
        if not (0 < self.retention < 1):
            raise ValidationError(f"retention must lie in (0, 1), got {self.retention}")
        if self.cycles <= 0:
            raise ValidationError("cycles must be positive")


@dataclass
class FeatureRecord:
    """One cell's feature row: formation features plus life outcomes."""

    cell_id: str
    group: str
    formation: FormationFeatures
    r_ls_ohm: float | None = None
    var_delta_q: float | None = None
    life: list[LifeOutcome] = field(default_factory=list)

    def life_at(self, retention: float) -> LifeOutcome | None:
        for o in self.life:
            if abs(o.retention - retention) < 1e-9:
                return o
        return None


def formation_features(
    series: CyclerTimeSeries, segmentation: SegmentConfig | None = None
) -> FormationFeatures:
    """Compute q_c, q_d, q_lli, ce_f from a formation record.

    q_c integrates every record from the series start up to the first
    discharge segment, so the CV tail of the first charge is included.
    q_d is the last constant-current discharge of the record.
    """
    segments = segment_steps(series, segmentation)
    first_discharge = None
    for s in segments:
        if s.kind in ("cc_discharge", "pulse_discharge"):
            first_discharge = s
            break
    if first_discharge is None:
        raise FeatureError("formation record has no discharge step")

    discharges = [s for s in segments if s.kind == "cc_discharge"]
    if not discharges:
        raise FeatureError("formation record has no full discharge step")
    final = discharges[-1]

    q_c = integrate_capacity(series.view(0, first_discharge.start))
    q_d = integrate_capacity(series.view(final.start, final.stop))
    if q_c <= 0:
        raise FeatureError("first charge has no integrable capacity")
    return FormationFeatures(q_c=q_c, q_d=q_d, q_lli=q_c - q_d, ce_f=q_d / q_c)


def var_delta_q(
    qv_early: tuple,
    qv_late: tuple,
    voltage_window: tuple = (3.0, 4.2),
    grid_points: int = 1000,
) -> float:
    """Population variance of the capacity difference between two Q(V) curves.

    Each input is (voltage, capacity) arrays for one discharge. Both curves
    are resampled onto a uniform voltage grid with a monotone cubic, then the
    pointwise difference's population variance is returned (Ah^2). A curve
    that does not span the full window raises SpanError.
    """
    if grid_points < 2:
        raise ConfigError("grid_points must be at least 2")
    lo, hi = voltage_window
    if not hi > lo:
        raise ConfigError("voltage window must have positive width")
    grid = np.linspace(lo, hi, grid_points)

    resampled = []
    for label, (v_raw, q_raw) in (("early", qv_early), ("late", qv_late)):
        v_arr = np.asarray(v_raw, dtype=float)
        q_arr = np.asarray(q_raw, dtype=float)
        if v_arr.size < 2:
            raise InsufficientDataError(f"{label} curve needs at least 2 points")
        order = np.argsort(v_arr, kind="stable")
        v_arr = v_arr[order]
        q_arr = q_arr[order]
        keep = np.concatenate(([True], np.diff(v_arr) > 1e-12))
        v_arr = v_arr[keep]
        q_arr = q_arr[keep]
        if v_arr[0] > lo + 1e-9 or v_arr[-1] < hi - 1e-9:
            raise SpanError(
                f"{label} curve spans [{v_arr[0]:.4f}, {v_arr[-1]:.4f}] V, "
                f"not the analysis window [{lo}, {hi}] V"
            )
        resampled.append(MonotoneCubic(v_arr, q_arr)(grid))

    delta = resampled[1] - resampled[0]
    return float(np.var(delta))


def cycle_life(
    cycle_numbers,
    capacities_ah,
    initial_capacity_ah: float | None = None,
    retention: float = 0.7,
    initial_window: int = 5,
) -> LifeOutcome:
    """First cycle at which capacity crosses retention * initial, by linear
    interpolation between the bracketing cycles.

    initial_capacity_ah defaults to the best capacity over the first
    initial_window entries. Series that never cross are censored at the last
    observed cycle.
    """
    c = np.asarray(cycle_numbers, dtype=float)
    q = np.asarray(capacities_ah, dtype=float)
    if c.ndim != 1 or c.shape != q.shape:
        raise ValidationError("cycle_numbers and capacities must be matching 1-D")
    if c.size < 2:
        raise InsufficientDataError("need at least 2 capacity points")
    if np.any(np.diff(c) <= 0):
        raise ValidationError("cycle numbers must be strictly increasing")
    if not (0 < retention < 1):
        raise ConfigError(f"retention must lie in (0, 1), got {retention}")

    q0 = (
        float(initial_capacity_ah)
        if initial_capacity_ah is not None
        else float(np.max(q[: min(initial_window, q.size)]))
    )
    if q0 <= 0:
        raise ValidationError("initial capacity must be positive")
    threshold = retention * q0

    below = q < threshold
    if not below.any():
        return LifeOutcome(retention=retention, cycles=float(c[-1]), censored=True)
    j = int(np.argmax(below))
    if j == 0:
        return LifeOutcome(retention=retention, cycles=float(c[0]))
    frac = (q[j - 1] - threshold) / (q[j - 1] - q[j])
    return LifeOutcome(
        retention=retention, cycles=float(c[j - 1] + frac * (c[j] - c[j - 1]))
    )


def feature_table_from_csv(path) -> list[FeatureRecord]:
    """Inverse of feature_table_to_csv. NaN cells map back to None/absent."""
    import pandas as pd

    df = pd.read_csv(path)
    needed = {"cell_id", "group", "q_c_ah", "q_d_ah", "q_lli_ah", "ce_f"}
    missing = needed - set(df.columns)
    if missing:
        raise ValidationError(f"feature table missing columns: {sorted(missing)}")
    records = []
    for _, row in df.iterrows():
        life = []
        for level in RETENTION_LEVELS:
            col = f"cycles_to_{int(round(level * 100))}"
            if col in df.columns and np.isfinite(row[col]):
                life.append(
                    LifeOutcome(
                        retention=level,
                        cycles=float(row[col]),
                        censored=bool(row.get(col + "_censored", False)),
                    )
                )
        r_ls = row.get("r_ls_ohm", np.nan)
        var_dq = row.get("var_delta_q_ah2", np.nan)
        records.append(
            FeatureRecord(
                cell_id=str(row["cell_id"]),
                group=str(row["group"]),
                formation=FormationFeatures(
                    q_c=float(row["q_c_ah"]),
                    q_d=float(row["q_d_ah"]),
                    q_lli=float(row["q_lli_ah"]),
                    ce_f=float(row["ce_f"]),
                ),
                r_ls_ohm=float(r_ls) if np.isfinite(r_ls) else None,
                var_delta_q=float(var_dq) if np.isfinite(var_dq) else None,
                life=life,
            )
        )
    return records


def feature_table_to_csv(records: list[FeatureRecord], path):
    """Write one row per cell with formation features, early-life markers,
    and cycles to each standard retention level."""
    import pandas as pd

    rows = []
    for rec in records:
        row = {
            "cell_id": rec.cell_id,
            "group": rec.group,
            "q_c_ah": rec.formation.q_c,
            "q_d_ah": rec.formation.q_d,
            "q_lli_ah": rec.formation.q_lli,
            "ce_f": rec.formation.ce_f,
            "r_ls_ohm": rec.r_ls_ohm if rec.r_ls_ohm is not None else np.nan,
            "var_delta_q_ah2": rec.var_delta_q if rec.var_delta_q is not None else np.nan,
        }
        for level in RETENTION_LEVELS:
            outcome = rec.life_at(level)
            col = f"cycles_to_{int(round(level * 100))}"
            row[col] = outcome.cycles if outcome is not None else np.nan
            row[col + "_censored"] = (
                bool(outcome.censored) if outcome is not None else False
            )
        rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False)
