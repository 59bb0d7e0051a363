"""Instrument-resolution analysis for lithium-inventory estimation.

Compares two routes to the same quantity: inferring inventory loss from a
pulse-resistance measurement versus from a slow discharge-capacity
measurement. Worst-case instrument error bands propagate through each route;
the ratio of the resulting resolution limits says which route wins.

Capacity error assumes a fixed-duration slow discharge, so a current-offset
error integrates linearly over the test and enters with both signs.
Voltage-termination error is deliberately out of scope.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

from .errors import DegenerateInstrumentError, ValidationError

__all__ = [
    "InstrumentSpec",
    "ResolutionLimits",
    "ResolutionReport",
    "resolution_limits",
    "qlli_resolution",
    "default_instrument",
    "default_report",
    "derivation_table",
    "report_to_json",
]

# Inventory change per unit of diagnostic signal for the default calibrated
# stoichiometry model: 40 mAh of inventory moves the low-SOC pulse resistance
# by 10 mOhm and the discharge capacity by 37 mAh.
DEFAULT_SENS_R_AH_PER_OHM = 0.040 / 0.010
DEFAULT_SENS_QD_AH_PER_AH = 40.0 / 37.0
DEFAULT_TEST_HOURS = 10.0


@dataclass(frozen=True)
class InstrumentSpec:
    """Cycler accuracy figures plus the operating points of the two routes.

    Precisions are percentages of full scale. Zero precision models an ideal
    channel; anything at or above 1% is rejected as implausible for lab
    equipment in this class.
    """

    v_precision_pct: float = 0.02
    v_full_scale_v: float = 5.0
    i_precision_pct: float = 0.02
    i_full_scale_a: float = 5.0
    i_set_pulse_a: float = 2.37
    i_set_capacity_a: float = 0.237
    delta_v_meas_v: float = 0.1

    def __post_init__(self):
        for name in ("v_full_scale_v", "i_full_scale_a", "i_set_pulse_a",
                     "i_set_capacity_a", "delta_v_meas_v"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("v_precision_pct", "i_precision_pct"):
            p = getattr(self, name)
            if not (0.0 <= p < 1.0):
                raise ValidationError(f"{name} must lie in [0, 1) percent, got {p}")


class ResolutionLimits(NamedTuple):
    i_err_a: float
    v_err_v: float
    r_limit_ohm: float
    q_limit_ah: float


@dataclass(frozen=True)
class ResolutionReport:
    i_err_a: float
    v_err_v: float
    r_limit_ohm: float
    q_limit_ah: float
    qlli_res_via_r_ah: float
    qlli_res_via_qd_ah: float
    improvement_ratio: float

    def __post_init__(self):
        for name in ("i_err_a", "v_err_v", "r_limit_ohm", "q_limit_ah",
                     "qlli_res_via_r_ah", "qlli_res_via_qd_ah"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


def resolution_limits(
    spec: InstrumentSpec, *, test_hours: float = DEFAULT_TEST_HOURS
) -> ResolutionLimits:
    """Worst-case resolution of the pulse-resistance and capacity routes.

    The resistance limit brackets the reading between the error-band
    extremes: largest voltage over smallest current minus smallest voltage
    over largest current. The capacity limit is the two-sided drift of a
    current offset integrated over the discharge duration.
    """
    if test_hours <= 0:
        raise ValidationError(f"test_hours must be positive, got {test_hours}")
    i_err = spec.i_full_scale_a * spec.i_precision_pct / 100.0
    v_err = spec.v_full_scale_v * spec.v_precision_pct / 100.0
    if spec.i_set_pulse_a <= i_err:
        raise DegenerateInstrumentError(
            f"pulse setpoint {spec.i_set_pulse_a} A inside the current error "
            f"band ±{i_err} A; resistance is unresolvable"
        )
    dv = spec.delta_v_meas_v
    r_limit = (dv + v_err) / (spec.i_set_pulse_a - i_err) - (dv - v_err) / (
        spec.i_set_pulse_a + i_err
    )
    q_limit = 2.0 * i_err * test_hours
    return ResolutionLimits(i_err, v_err, r_limit, q_limit)


def qlli_resolution(
    limits: ResolutionLimits,
    sens_r_ah_per_ohm: float = DEFAULT_SENS_R_AH_PER_OHM,
    sens_qd_ah_per_ah: float = DEFAULT_SENS_QD_AH_PER_AH,
) -> ResolutionReport:
    """Map instrument limits to inventory-resolution limits via sensitivities.

    A zero sensitivity is allowed (it zeroes that route); the improvement
    ratio is then infinite and flagged by the caller's own judgement.
    """
    if sens_r_ah_per_ohm < 0 or sens_qd_ah_per_ah < 0:
        raise ValidationError("sensitivities must be non-negative")
    via_r = sens_r_ah_per_ohm * limits.r_limit_ohm
    via_qd = sens_qd_ah_per_ah * limits.q_limit_ah
    ratio = via_qd / via_r if via_r > 0 else math.inf
    return ResolutionReport(
        i_err_a=limits.i_err_a,
        v_err_v=limits.v_err_v,
        r_limit_ohm=limits.r_limit_ohm,
        q_limit_ah=limits.q_limit_ah,
        qlli_res_via_r_ah=via_r,
        qlli_res_via_qd_ah=via_qd,
        improvement_ratio=ratio,
    )


def default_instrument() -> InstrumentSpec:
    return InstrumentSpec()


def default_report(*, test_hours: float = DEFAULT_TEST_HOURS) -> ResolutionReport:
    return qlli_resolution(resolution_limits(default_instrument(), test_hours=test_hours))


def report_to_json(report: ResolutionReport, path=None) -> str:
    text = json.dumps(asdict(report), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def derivation_table(
    spec: InstrumentSpec | None = None,
    *,
    sens_r_ah_per_ohm: float = DEFAULT_SENS_R_AH_PER_OHM,
    sens_qd_ah_per_ah: float = DEFAULT_SENS_QD_AH_PER_AH,
    test_hours: float = DEFAULT_TEST_HOURS,
) -> str:
    """Human-readable derivation: inputs, error bands, both routes, ratio."""
    spec = spec or default_instrument()
    lim = resolution_limits(spec, test_hours=test_hours)
    rep = qlli_resolution(lim, sens_r_ah_per_ohm, sens_qd_ah_per_ah)
    rows = [
        ("voltage precision", f"{spec.v_precision_pct:g}% of {spec.v_full_scale_v:g} V"),
        ("current precision", f"{spec.i_precision_pct:g}% of {spec.i_full_scale_a:g} A"),
        ("pulse current setpoint", f"{spec.i_set_pulse_a:g} A"),
        ("capacity-test current", f"{spec.i_set_capacity_a:g} A over {test_hours:g} h"),
        ("measured pulse drop", f"{spec.delta_v_meas_v * 1e3:g} mV"),
        ("current error band", f"±{lim.i_err_a * 1e3:.3f} mA"),
        ("voltage error band", f"±{lim.v_err_v * 1e3:.3f} mV"),
        ("resistance resolution", f"{lim.r_limit_ohm * 1e3:.2f} mOhm"),
        ("capacity resolution", f"{lim.q_limit_ah * 1e3:.2f} mAh"),
        ("inventory via resistance", f"{rep.qlli_res_via_r_ah * 1e3:.2f} mAh"),
        ("inventory via capacity", f"{rep.qlli_res_via_qd_ah * 1e3:.2f} mAh"),
        ("improvement ratio", f"{rep.improvement_ratio:.2f}x"),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)
