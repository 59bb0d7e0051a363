"""Cycler time-series loading, step segmentation, and capacity integration.

Internal units are SI-derived throughout: seconds, amperes (signed, positive =
charge), volts, ampere-hours. Milli-scaled units appear only in CLI output
formatting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import (
    EmptyInputError,
    InsufficientDataError,
    IntegrityError,
    SchemaError,
)

__all__ = [
    "CANONICAL_COLUMNS",
    "REQUIRED_COLUMNS",
    "CyclerTimeSeries",
    "StepSegment",
    "SegmentConfig",
    "load_cycler_csv",
    "save_cycler_csv",
    "segment_steps",
    "integrate_capacity",
]

CANONICAL_COLUMNS = (
    "test_time_s",
    "cycle_index",
    "step_index",
    "current_a",
    "voltage_v",
    "charge_capacity_ah",
    "discharge_capacity_ah",
    "temperature_c",
)
# temperature is optional on load; everything else must be present.
REQUIRED_COLUMNS = CANONICAL_COLUMNS[:-1]

VOLTAGE_RANGE_V = (0.0, 5.0)


@dataclass
class CyclerTimeSeries:
    """Validated cycler samples in canonical column order.

    frame holds one row per accepted record; rejected_rows counts records
    dropped by the voltage range rule at load time.
    """

    frame: pd.DataFrame
    rejected_rows: int = 0
    source: str | None = None

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def time(self) -> np.ndarray:
        return self.frame["test_time_s"].to_numpy()

    @property
    def current(self) -> np.ndarray:
        return self.frame["current_a"].to_numpy()

    @property
    def voltage(self) -> np.ndarray:
        return self.frame["voltage_v"].to_numpy()

    def view(self, start: int, stop: int) -> pd.DataFrame:
        return self.frame.iloc[start:stop]


@dataclass
class StepSegment:
    """Half-open record range [start, stop) with one protocol-step kind."""

    kind: str
    start: int
    stop: int
    mean_current: float
    duration: float

    KINDS = (
        "cc_charge",
        "cv_charge",
        "cc_discharge",
        "rest",
        "pulse_charge",
        "pulse_discharge",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise IntegrityError(f"unknown segment kind {self.kind!r}")
        if self.stop <= self.start:
            raise IntegrityError("segment record range is empty")


@dataclass
class SegmentConfig:
    """Thresholds for segment_steps.

    rest_current_a: |I| below this is rest. pulse_max_s: current runs no longer
    than this are pulses. The CC->CV split fires at the first sample that sits
    within cv_voltage_window_v of the run's maximum voltage while current has
    dropped below cv_current_fraction of the early-run level; a run whose final
    current has not fallen below cv_end_fraction of its initial current is
    treated as all-CC.
    """

    rest_current_a: float = 1e-3
    pulse_max_s: float = 15.0
    cv_voltage_window_v: float = 5e-3
    cv_current_fraction: float = 0.95
    cv_end_fraction: float = 0.9


def _apply_schema(df: pd.DataFrame, schema_map: Mapping[str, str] | None):
    mapping = dict(schema_map) if schema_map else {}
    out = {}
    for logical in CANONICAL_COLUMNS:
        file_col = mapping.get(logical, logical)
        if file_col in df.columns:
            out[logical] = df[file_col]
        elif logical == "temperature_c":
            out[logical] = pd.Series(np.nan, index=df.index)
        else:
            raise SchemaError(
                f"required column {logical!r} (file column {file_col!r}) "
                "not found in input"
            )
    return pd.DataFrame(out)


def load_cycler_csv(
    path, schema_map: Mapping[str, str] | None = None
) -> CyclerTimeSeries:
    """Load a cycler CSV into canonical form.

    Rows with voltage outside [0, 5] V are rejected and counted. Time must be
    strictly increasing across the accepted rows; the series is never sorted
    silently.
    """
    raw = pd.read_csv(path)
    df = _apply_schema(raw, schema_map)
    for col in CANONICAL_COLUMNS:
        try:
            df[col] = pd.to_numeric(df[col], errors="raise")
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"column {col!r} is not numeric: {exc}") from exc

    lo, hi = VOLTAGE_RANGE_V
    keep = (df["voltage_v"] >= lo) & (df["voltage_v"] <= hi)
    rejected = int((~keep).sum())
    df = df[keep]

    times = df["test_time_s"].to_numpy()
    if times.size > 1:
        bad = np.nonzero(np.diff(times) <= 0)[0]
        if bad.size:
            row = df.index[int(bad[0]) + 1]
            raise IntegrityError(
                f"test_time_s not strictly increasing at input row {row} "
                f"(t={times[bad[0]]} then t={times[bad[0] + 1]})"
            )
    for col in ("charge_capacity_ah", "discharge_capacity_ah"):
        if (df[col].to_numpy() < 0).any():
            raise IntegrityError(f"{col} contains negative values")

    df = df.reset_index(drop=True)
    df["cycle_index"] = df["cycle_index"].astype(np.int64)
    df["step_index"] = df["step_index"].astype(np.int64)
    return CyclerTimeSeries(frame=df, rejected_rows=rejected, source=str(path))


def save_cycler_csv(series: CyclerTimeSeries, path):
    """Write canonical CSV; floats use shortest round-trip formatting."""
    series.frame.to_csv(path, index=False)


def _split_cc_cv(
    t: np.ndarray, i_abs: np.ndarray, v: np.ndarray, cfg: SegmentConfig
) -> int | None:
    """Index where a charge run switches CC->CV, or None for all-CC."""
    n = t.size
    if n < 3:
        return None
    i_early = float(np.median(i_abs[: min(5, n)]))
    if i_early <= 0 or i_abs[-1] >= cfg.cv_end_fraction * i_early:
        return None
    v_top = float(v.max())
    near_top = v >= v_top - cfg.cv_voltage_window_v
    dropped = i_abs <= cfg.cv_current_fraction * i_early
    hits = np.nonzero(near_top & dropped)[0]
    if hits.size == 0 or hits[0] == 0:
        return None
    return int(hits[0])


def segment_steps(
    series: CyclerTimeSeries, config: SegmentConfig | None = None
) -> list[StepSegment]:
    """Partition every record into protocol-step segments.

    Records are grouped into maximal runs of equal current sign (rest when
    |I| < rest threshold); charge runs are split CC/CV; runs no longer than
    the pulse ceiling become pulse segments.
    """
    cfg = config or SegmentConfig()
    if len(series) == 0:
        raise EmptyInputError("cannot segment an empty series")
    t = series.time
    i = series.current
    v = series.voltage
    sign = np.zeros(t.size, dtype=np.int8)
    sign[i > cfg.rest_current_a] = 1
    sign[i < -cfg.rest_current_a] = -1

    boundaries = np.nonzero(np.diff(sign) != 0)[0] + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [t.size]))

    segments: list[StepSegment] = []

    def emit(kind, a, b):
        segments.append(
            StepSegment(
                kind=kind,
                start=int(a),
                stop=int(b),
                mean_current=float(np.mean(i[a:b])),
                duration=float(t[b - 1] - t[a]),
            )
        )

    for a, b in zip(starts, stops):
        run_sign = sign[a]
        duration = float(t[b - 1] - t[a])
        if run_sign == 0:
            emit("rest", a, b)
        elif run_sign < 0:
            emit("pulse_discharge" if duration <= cfg.pulse_max_s else "cc_discharge", a, b)
        else:
            if duration <= cfg.pulse_max_s:
                emit("pulse_charge", a, b)
                continue
            split = _split_cc_cv(t[a:b], np.abs(i[a:b]), v[a:b], cfg)
            if split is None:
                emit("cc_charge", a, b)
            else:
                emit("cc_charge", a, a + split)
                emit("cv_charge", a + split, b)
    return segments


def integrate_capacity(records: pd.DataFrame | Iterable) -> float:
    """Trapezoidal integral of |current| over time, in Ah."""
    if isinstance(records, pd.DataFrame):
        t = records["test_time_s"].to_numpy(dtype=float)
        i = records["current_a"].to_numpy(dtype=float)
    else:
        arr = np.asarray(list(records), dtype=float)
        t, i = arr[:, 0], arr[:, 1]
    if t.size < 2:
        raise InsufficientDataError(
            f"capacity integration needs at least 2 records, got {t.size}"
        )
    return float(np.trapezoid(np.abs(i), t)) / 3600.0
