"""Pulse-resistance extraction from HPPC sequences.

A pulse is timed from the last rest sample before it (the instant the current
steps). Resistance at duration d is |V(t_start + d) - V_rest| / |I_pulse| with
the voltage linearly interpolated between the samples bracketing t_start + d.
SOC is assigned from net charge throughput since the end of the last full
discharge, divided by that discharge's integrated capacity (or a nominal
capacity when configured).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._interp import MonotoneCubic
from .errors import (
    ConfigError,
    ExtrapolationError,
    InsufficientDataError,
    IntegrityError,
    ValidationError,
)
from .ingest import CyclerTimeSeries, SegmentConfig, integrate_capacity, segment_steps

__all__ = [
    "PulseMeasurement",
    "ResistanceProfile",
    "ExtractConfig",
    "extract_pulses",
    "resistance_at_soc",
    "profile_to_csv",
    "profile_from_csv",
]


@dataclass
class PulseMeasurement:
    """One resistance reading: a pulse observed at one duration."""

    soc: float
    direction: str
    duration: float
    pulse_current: float
    v_before: float
    v_at_duration: float
    resistance: float
    below_floor: bool = False

    def __post_init__(self):
        if self.direction not in ("charge", "discharge"):
            raise ValidationError(f"unknown pulse direction {self.direction!r}")
        if self.pulse_current == 0:
            raise ValidationError("pulse current must be nonzero")
        expected = abs(self.v_at_duration - self.v_before) / abs(self.pulse_current)
        if abs(self.resistance - expected) > 1e-15 + 1e-12 * expected:
            raise ValidationError("resistance inconsistent with Ohm's law fields")
        if self.resistance < 0:
            raise ValidationError("resistance must be non-negative")


@dataclass
class ResistanceProfile:
    """All pulse measurements for one cell, sorted by SOC."""

    cell_id: str
    temperature_label: str
    pulses: list[PulseMeasurement] = field(default_factory=list)

    def __post_init__(self):
        self.pulses = sorted(self.pulses, key=lambda p: p.soc)
        families: dict[tuple, float] = {}
        for p in self.pulses:
            key = (p.direction, p.duration)
            if key in families and p.soc <= families[key]:
                raise IntegrityError(
                    f"duplicate or non-increasing SOC {p.soc} in family {key}"
                )
            families[key] = p.soc

    def family(self, direction: str, duration: float) -> list[PulseMeasurement]:
        return [
            p
            for p in self.pulses
            if p.direction == direction and abs(p.duration - duration) < 1e-9
        ]


@dataclass
class ExtractConfig:
    """Settings for extract_pulses.

    durations: seconds after pulse start at which resistances are read.
    reference_capacity_ah overrides the measured last-full-discharge capacity;
    soc_basis "nominal" requires it. min_full_discharge_s is the duration
    floor for a discharge to count as the SOC reference.
    """

    durations: tuple = (1.0, 5.0, 10.0)
    soc_basis: str = "measured"
    reference_capacity_ah: float | None = None
    min_full_discharge_s: float = 3600.0
    resistance_floor_ohm: float = 1e-6
    cell_id: str = "cell"
    temperature_label: str = "room"
    segmentation: SegmentConfig = field(default_factory=SegmentConfig)

    def __post_init__(self):
        if self.soc_basis not in ("measured", "nominal"):
            raise ConfigError(f"unknown soc_basis {self.soc_basis!r}")
        if self.soc_basis == "nominal" and not self.reference_capacity_ah:
            raise ConfigError("nominal soc_basis requires reference_capacity_ah")
        if any(d <= 0 for d in self.durations):
            raise ConfigError("pulse durations must be positive")


def _net_throughput_ah(t: np.ndarray, i: np.ndarray, a: int, b: int) -> float:
    """Signed trapezoidal charge throughput over record indices [a, b]."""
    if b <= a:
        return 0.0
    return float(np.trapezoid(i[a : b + 1], t[a : b + 1])) / 3600.0


def extract_pulses(
    series: CyclerTimeSeries, config: ExtractConfig | None = None
) -> ResistanceProfile:
    """Extract every pulse's resistances at the configured durations."""
    cfg = config or ExtractConfig()
    segments = segment_steps(series, cfg.segmentation)
    t = series.time
    i = series.current
    v = series.voltage

    pulse_idx = [
        k for k, s in enumerate(segments) if s.kind in ("pulse_charge", "pulse_discharge")
    ]
    if not pulse_idx:
        raise InsufficientDataError("series contains no pulse segments")

    if cfg.soc_basis == "nominal":
        q_ref = float(cfg.reference_capacity_ah)
        ref_end = 0
    else:
        candidates = [
            s
            for s in segments[: pulse_idx[0]]
            if s.kind == "cc_discharge" and s.duration >= cfg.min_full_discharge_s
        ]
        if not candidates:
            raise ConfigError(
                "no full reference discharge found before the first pulse; "
                "supply reference_capacity_ah"
            )
        ref = candidates[-1]
        q_ref = (
            float(cfg.reference_capacity_ah)
            if cfg.reference_capacity_ah
            else integrate_capacity(series.view(ref.start, ref.stop))
        )
        ref_end = ref.stop - 1

    pulses: list[PulseMeasurement] = []
    for k in pulse_idx:
        seg = segments[k]
        if k == 0 or segments[k - 1].kind != "rest":
            warnings.warn(
                f"pulse at record {seg.start} has no preceding rest; skipped",
                stacklevel=2,
            )
            continue
        rest_last = segments[k - 1].stop - 1
        t_start = t[rest_last]
        v_before = float(v[rest_last])
        soc = _net_throughput_ah(t, i, ref_end, rest_last) / q_ref
        seg_t = t[seg.start : seg.stop]
        seg_v = v[seg.start : seg.stop]
        current = float(np.mean(i[seg.start : seg.stop]))
        direction = "charge" if current > 0 else "discharge"
        for d in cfg.durations:
            t_query = t_start + d
            if t_query > seg_t[-1] + 1e-12:
                warnings.warn(
                    f"pulse at t={t_start:.1f}s shorter than {d}s; duration omitted",
                    stacklevel=2,
                )
                continue
            v_at = float(np.interp(t_query, seg_t, seg_v))
            r = abs(v_at - v_before) / abs(current)
            pulses.append(
                PulseMeasurement(
                    soc=soc,
                    direction=direction,
                    duration=float(d),
                    pulse_current=current,
                    v_before=v_before,
                    v_at_duration=v_at,
                    resistance=r,
                    below_floor=r < cfg.resistance_floor_ohm,
                )
            )
    return ResistanceProfile(
        cell_id=cfg.cell_id, temperature_label=cfg.temperature_label, pulses=pulses
    )


def resistance_at_soc(
    profile: ResistanceProfile,
    soc: float,
    duration: float = 10.0,
    direction: str = "discharge",
    method: str = "pchip",
) -> float:
    """Interpolate the (direction, duration) resistance family at one SOC.

    Exact at measured knots; never extrapolates beyond the measured SOC span.
    method "pchip" (default) is the shape-preserving monotone cubic; "linear"
    is the straight-line fallback.
    """
    fam = profile.family(direction, duration)
    if len(fam) < 2:
        raise InsufficientDataError(
            f"need at least 2 pulses in family ({direction}, {duration}s), "
            f"have {len(fam)}"
        )
    xs = np.array([p.soc for p in fam])
    ys = np.array([p.resistance for p in fam])
    if soc < xs[0] - 1e-12 or soc > xs[-1] + 1e-12:
        raise ExtrapolationError(
            f"SOC {soc} outside measured span [{xs[0]:.4f}, {xs[-1]:.4f}]"
        )
    if method == "linear":
        return float(np.interp(soc, xs, ys))
    if method != "pchip":
        raise ConfigError(f"unknown interpolation method {method!r}")
    return float(MonotoneCubic(xs, ys)(soc))


def profile_to_csv(profile: ResistanceProfile, path):
    import pandas as pd

    pd.DataFrame(
        {
            "cell_id": [profile.cell_id] * len(profile.pulses),
            "temperature_label": [profile.temperature_label] * len(profile.pulses),
            "soc": [p.soc for p in profile.pulses],
            "direction": [p.direction for p in profile.pulses],
            "duration_s": [p.duration for p in profile.pulses],
            "current_a": [p.pulse_current for p in profile.pulses],
            "resistance_ohm": [p.resistance for p in profile.pulses],
        }
    ).to_csv(path, index=False)


def profile_from_csv(path) -> list[ResistanceProfile]:
    """Read profile rows back, one profile per cell id in file order."""
    import pandas as pd

    df = pd.read_csv(path)
    profiles = []
    for cell_id, group in df.groupby("cell_id", sort=False):
        pulses = []
        for _, row in group.iterrows():
            r = float(row["resistance_ohm"])
            i_p = float(row["current_a"])
            # v fields are not stored in the CSV; reconstruct a consistent pair.
            pulses.append(
                PulseMeasurement(
                    soc=float(row["soc"]),
                    direction=str(row["direction"]),
                    duration=float(row["duration_s"]),
                    pulse_current=i_p,
                    v_before=0.0,
                    v_at_duration=r * abs(i_p) if i_p != 0 else 0.0,
                    resistance=r,
                )
            )
        profiles.append(
            ResistanceProfile(
                cell_id=str(cell_id),
                temperature_label=str(group["temperature_label"].iloc[0]),
                pulses=pulses,
            )
        )
    return profiles
