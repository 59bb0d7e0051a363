"""What-if engine for electrode-level degradation mechanisms.

Operations here move a valid :class:`~formationbench.ocv.ElectrodeAlignment`
through hypothetical degradation (lithium-inventory shifts, active-material
losses), partition the full-cell resistance between the positive electrode and
everything else, and differentiate observable quantities (low-SOC resistance,
discharge capacity) with respect to lost lithium. A Butler-Volmer evaluator
covers charge-transfer kinetics at the particle surface.

All voltage re-solves work on the lithium coordinate n = lithium currently in
the negative electrode (Ah): y = (q_li - n)/c_pe, x = n/c_ne, and the cell
voltage U_pos(y) - U_neg(x) is strictly increasing in n, so window endpoints
are plain bracketed roots.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import BoundaryError, ConfigError, DomainError, ValidationError
from .ocv import CurveSet, ElectrodeAlignment, reference_curves

__all__ = [
    "ResistanceModel",
    "ButlerVolmerParams",
    "SensitivityReport",
    "FposSweepRow",
    "DEFAULT_C_PE_AH",
    "DEFAULT_C_NE_AH",
    "DEFAULT_V_LIMITS",
    "TOP_ANCHOR_Y100",
    "default_alignment",
    "default_resistance_model",
    "solve_alignment_from_inventory",
    "lithium_inventory",
    "shift_lithium_inventory",
    "apply_lam",
    "predicted_resistance_profile",
    "rls_sensitivity",
    "fpos_sweep",
    "rescale_fpos",
    "bv_flux",
    "sensitivity_to_csv",
    "fpos_table_to_csv",
]

# Bundled synthetic cell geometry. Electrode capacities in Ah; the lithium
# inventory is defined implicitly by anchoring the positive stoichiometry at
# the 4.2 V limit to TOP_ANCHOR_Y100, which keeps fits (which fix the same
# anchor) unbiased on self-generated data.
DEFAULT_C_PE_AH = 3.15
DEFAULT_C_NE_AH = 3.30
DEFAULT_V_LIMITS = (3.0, 4.2)
TOP_ANCHOR_Y100 = 0.03

# Calibration anchors for the default resistance partition: full-cell
# resistance of the bundled synthetic cell at 5% and 90% SOC, in ohms.
_CAL_SOC_LOW, _CAL_R_LOW = 0.05, 0.1397
_CAL_SOC_MID, _CAL_R_MID = 0.90, 0.0236
_CAL_EXPONENT = 1.5
_CAL_F_POS = 0.7

# The divergent (1-y)^(-p) term is only meaningful inside the cycling window;
# evaluation clamps lithiation here so transient excursions above the window
# (e.g. the start of a formation charge) see a finite ceiling.
LITHIATION_CAP = 0.85


@dataclass
class ResistanceModel:
    """Full-cell resistance split into a positive-electrode term and a remainder.

    R_full(y) = R_pos(y) + r_other with R_pos(y) = r0 + k*(1 - y)^(-p),
    strictly increasing in lithiation y for k > 0. r_other is SOC-independent
    and tied to the partition fraction by r_other = (1 - f_pos)*r_ref.
    """

    r0: float
    k: float
    p: float
    r_other: float
    f_pos: float
    r_ref: float
    lithiation_cap: float = LITHIATION_CAP

    def __post_init__(self):
        if self.p <= 0:
            raise ValidationError(f"exponent p must be positive, got {self.p}")
        if self.k < 0:
            raise ValidationError(f"k must be non-negative, got {self.k}")
        if not (0.0 <= self.f_pos <= 1.0):
            raise ValidationError(f"f_pos must lie in [0, 1], got {self.f_pos}")
        if self.r_ref < 0 or self.r_other < -1e-15:
            raise ValidationError("reference resistances must be non-negative")
        if abs(self.r_other - (1.0 - self.f_pos) * self.r_ref) > 1e-9:
            raise ValidationError(
                "r_other inconsistent with (1 - f_pos) * r_ref: "
                f"{self.r_other} vs {(1.0 - self.f_pos) * self.r_ref}"
            )
        if not (0.0 < self.lithiation_cap < 1.0):
            raise ValidationError("lithiation_cap must lie in (0, 1)")

    def r_pos(self, y):
        yc = np.minimum(np.asarray(y, dtype=float), self.lithiation_cap)
        out = self.r0 + self.k * (1.0 - yc) ** (-self.p)
        return float(out) if np.isscalar(y) or np.ndim(y) == 0 else out

    def full_resistance(self, y):
        return self.r_pos(y) + self.r_other

    def to_json(self, path=None):
        payload = {
            "r0_ohm": self.r0,
            "k_ohm": self.k,
            "p": self.p,
            "r_other_ohm": self.r_other,
            "f_pos": self.f_pos,
            "r_ref_ohm": self.r_ref,
            "lithiation_cap": self.lithiation_cap,
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "ResistanceModel":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(
            r0=d["r0_ohm"],
            k=d["k_ohm"],
            p=d["p"],
            r_other=d["r_other_ohm"],
            f_pos=d["f_pos"],
            r_ref=d["r_ref_ohm"],
            lithiation_cap=d.get("lithiation_cap", LITHIATION_CAP),
        )


# CODATA 2018 exact values.
_FARADAY = 96485.33212331001
_GAS_CONSTANT = 8.31446261815324


@dataclass
class ButlerVolmerParams:
    """Charge-transfer kinetics parameters. Units are the caller's consistent set."""

    k0: float
    c_e: float
    c_s_max: float
    alpha: float = 0.5
    temperature: float = 298.15
    faraday_constant: float = _FARADAY
    gas_constant: float = _GAS_CONSTANT

    def __post_init__(self):
        positives = {
            "k0": self.k0,
            "c_e": self.c_e,
            "c_s_max": self.c_s_max,
            "temperature": self.temperature,
            "faraday_constant": self.faraday_constant,
            "gas_constant": self.gas_constant,
        }
        for name, val in positives.items():
            if val <= 0:
                raise ValidationError(f"{name} must be positive, got {val}")
        if not (0.0 < self.alpha < 1.0):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass
class SensitivityReport:
    """Derivatives of observables with respect to lithium-inventory loss.

    dr_dqlli[i] is dR/dQ_lli (ohm/Ah) at soc_setpoints[i]; dqd_dqlli is the
    discharge-capacity derivative (Ah/Ah). Both are central differences over
    qlli_grid evaluated at its middle point.
    """

    soc_setpoints: tuple
    dr_dqlli: tuple
    dqd_dqlli: float
    qlli_grid: tuple


@dataclass
class FposSweepRow:
    f_pos: float
    dr_dqlli: float
    normalized: float


def _curves_or_default(curves: CurveSet | None) -> CurveSet:
    return curves if curves is not None else reference_curves()


def solve_alignment_from_inventory(
    q_li: float,
    c_pe: float,
    c_ne: float,
    curves: CurveSet | None = None,
    v_limits: tuple[float, float] = DEFAULT_V_LIMITS,
    curve_id: str | None = None,
) -> ElectrodeAlignment:
    """Build the alignment implied by electrode capacities and lithium inventory.

    Solves the two voltage-limit crossings on the lithium coordinate n
    (lithium in the negative electrode, Ah) by bracketed root finding.
    """
    curves = _curves_or_default(curves)
    v_min, v_max = v_limits
    if q_li <= 0 or c_pe <= 0 or c_ne <= 0:
        raise DomainError("inventory and capacities must be positive")
    if v_min >= v_max:
        raise ConfigError(f"voltage limits out of order: {v_limits}")

    u_pos = curves.positive.interpolator
    u_neg = curves.negative.interpolator

    def volt(n):
        return u_pos((q_li - n) / c_pe) - u_neg(n / c_ne)

    n_lo = max(0.0, q_li - c_pe)
    n_hi = min(c_ne, q_li)
    if n_lo >= n_hi:
        raise DomainError("no feasible lithium split for these capacities")
    v_lo, v_hi = volt(n_lo), volt(n_hi)
    if v_lo > v_min or v_hi < v_max:
        raise DomainError(
            f"voltage limits [{v_min}, {v_max}] not reachable: "
            f"span is [{v_lo:.4f}, {v_hi:.4f}]"
        )
    n_0 = brentq(lambda n: volt(n) - v_min, n_lo, n_hi, xtol=1e-13, rtol=8.9e-16)
    n_100 = brentq(lambda n: volt(n) - v_max, n_lo, n_hi, xtol=1e-13, rtol=8.9e-16)
    if n_100 <= n_0:
        raise DomainError("voltage window collapsed during re-solve")
    return ElectrodeAlignment(
        c_pe=c_pe,
        c_ne=c_ne,
        y_0=(q_li - n_0) / c_pe,
        y_100=(q_li - n_100) / c_pe,
        x_0=n_0 / c_ne,
        x_100=n_100 / c_ne,
        q_full=(n_100 - n_0) / 1.0,
        curve_id=curve_id if curve_id is not None else curves.fingerprint(),
    )


def lithium_inventory(alignment: ElectrodeAlignment) -> float:
    """Cyclable lithium in Ah, counted at full charge."""
    return alignment.lithium_inventory()


def default_alignment(curves: CurveSet | None = None) -> ElectrodeAlignment:
    """Fresh alignment of the bundled synthetic cell.

    Defined by the default electrode capacities plus the top-of-charge anchor:
    the positive stoichiometry at the 4.2 V limit equals TOP_ANCHOR_Y100
    exactly, which fixes the lithium inventory.
    """
    curves = _curves_or_default(curves)
    u_pos_top = float(curves.positive.potential_at(TOP_ANCHOR_Y100))
    v_max = DEFAULT_V_LIMITS[1]
    u_neg = curves.negative.interpolator
    # x_100 solves U_neg(x) = U_pos(y_100) - v_max on the tabulated domain.
    target = u_pos_top - v_max
    x_100 = brentq(
        lambda x: float(u_neg(x)) - target, 1e-9, 1.0 - 1e-9, xtol=1e-14
    )
    q_li = DEFAULT_C_PE_AH * TOP_ANCHOR_Y100 + DEFAULT_C_NE_AH * x_100
    return solve_alignment_from_inventory(
        q_li, DEFAULT_C_PE_AH, DEFAULT_C_NE_AH, curves=curves
    )


def default_resistance_model(
    alignment: ElectrodeAlignment | None = None,
    curves: CurveSet | None = None,
) -> ResistanceModel:
    """Resistance partition calibrated to the bundled synthetic cell.

    (r0, k) are solved so the full-cell profile passes through the two
    calibration anchors (5% and 90% SOC); the remainder term follows from the
    default positive-electrode share of the 90%-SOC reference resistance.
    """
    if alignment is None:
        alignment = default_alignment(curves)
    r_other = (1.0 - _CAL_F_POS) * _CAL_R_MID
    y_low = float(alignment.y_at(_CAL_SOC_LOW * alignment.q_full))
    y_mid = float(alignment.y_at(_CAL_SOC_MID * alignment.q_full))
    g_low = (1.0 - y_low) ** (-_CAL_EXPONENT)
    g_mid = (1.0 - y_mid) ** (-_CAL_EXPONENT)
    k = ((_CAL_R_LOW - r_other) - (_CAL_R_MID - r_other)) / (g_low - g_mid)
    r0 = (_CAL_R_MID - r_other) - k * g_mid
    return ResistanceModel(
        r0=r0, k=k, p=_CAL_EXPONENT, r_other=r_other, f_pos=_CAL_F_POS,
        r_ref=_CAL_R_MID,
    )


def shift_lithium_inventory(
    alignment: ElectrodeAlignment,
    delta_q_lli: float,
    curves: CurveSet | None = None,
    v_limits: tuple[float, float] = DEFAULT_V_LIMITS,
) -> ElectrodeAlignment:
    """Remove delta_q_lli Ah of cyclable lithium and re-solve the windows.

    Electrode capacities are unchanged; both stoichiometry windows move and
    the full capacity shrinks. delta_q_lli = 0 returns an identical copy.
    """
    if delta_q_lli < 0:
        raise DomainError(f"delta_q_lli must be non-negative, got {delta_q_lli}")
    if delta_q_lli == 0.0:
        return replace(alignment)
    q_li = alignment.lithium_inventory() - delta_q_lli
    if q_li <= 0:
        raise DomainError("shift exceeds available lithium inventory")
    return solve_alignment_from_inventory(
        q_li, alignment.c_pe, alignment.c_ne, curves=curves, v_limits=v_limits,
        curve_id=alignment.curve_id,
    )


def apply_lam(
    alignment: ElectrodeAlignment,
    electrode: str,
    phase: str,
    fraction: float,
    curves: CurveSet | None = None,
    v_limits: tuple[float, float] = DEFAULT_V_LIMITS,
) -> ElectrodeAlignment:
    """Remove a fraction of one electrode's active material and re-solve.

    The removed material carries the lithium it holds at its phase's window
    endpoint: lithiated-phase loss pins the maximum-lithiation endpoint of the
    window (that endpoint state is preserved exactly), delithiated-phase loss
    pins the minimum-lithiation endpoint. The opposite voltage cut is then
    re-solved with the reduced capacity and inventory.
    """
    if electrode not in ("positive", "negative"):
        raise ValidationError(f"unknown electrode: {electrode!r}")
    if phase not in ("lithiated", "delithiated"):
        raise ValidationError(f"unknown phase: {phase!r}")
    if not (0.0 <= fraction <= 0.5):
        raise ValidationError(f"fraction must lie in [0, 0.5], got {fraction}")
    if fraction == 0.0:
        return replace(alignment)
    c_pe, c_ne = alignment.c_pe, alignment.c_ne
    q_li = alignment.lithium_inventory()
    if electrode == "positive":
        # Positive lithiation peaks at the bottom cut (y_0), bottoms at y_100.
        pinned = alignment.y_0 if phase == "lithiated" else alignment.y_100
        q_li -= fraction * c_pe * pinned
        c_pe *= 1.0 - fraction
    else:
        # Negative lithiation peaks at the top cut (x_100), bottoms at x_0.
        pinned = alignment.x_100 if phase == "lithiated" else alignment.x_0
        q_li -= fraction * c_ne * pinned
        c_ne *= 1.0 - fraction
    if q_li <= 0:
        raise DomainError("active-material loss removed the whole inventory")
    return solve_alignment_from_inventory(
        q_li, c_pe, c_ne, curves=curves, v_limits=v_limits,
        curve_id=alignment.curve_id,
    )


def predicted_resistance_profile(
    alignment: ElectrodeAlignment,
    rmodel: ResistanceModel,
    q_grid=None,
):
    """Full-cell resistance sampled on a capacity grid (Ah from 0% SOC)."""
    if q_grid is None:
        q_grid = np.linspace(0.0, alignment.q_full, 201)
    q = np.asarray(q_grid, dtype=float)
    if np.any(q < -1e-9) or np.any(q > alignment.q_full + 1e-9):
        raise DomainError("capacity grid outside [0, q_full]")
    r = rmodel.full_resistance(alignment.y_at(q))
    return q, np.asarray(r, dtype=float)


DEFAULT_SOC_SETPOINTS = (0.02, 0.05, 0.08)
# 1 mAh steps out to 23 mAh: small against the effect size, large against
# root-solve noise.
DEFAULT_QLLI_GRID = tuple(np.arange(24) * 1e-3)


def rls_sensitivity(
    alignment: ElectrodeAlignment,
    rmodel: ResistanceModel,
    soc_setpoints: Sequence[float] = DEFAULT_SOC_SETPOINTS,
    qlli_grid: Sequence[float] = DEFAULT_QLLI_GRID,
    curves: CurveSet | None = None,
    v_limits: tuple[float, float] = DEFAULT_V_LIMITS,
) -> SensitivityReport:
    """Differentiate resistance setpoints and discharge capacity against LLI.

    Every grid value is applied as a lithium-inventory shift; resistances are
    read at fixed SOC fractions of each shifted alignment's own full capacity.
    Central differences over the grid, reported at its middle point. A grid
    with zero span returns zero sensitivities.
    """
    soc = np.asarray(soc_setpoints, dtype=float)
    if soc.ndim != 1 or soc.size == 0:
        raise ConfigError("soc_setpoints must be a non-empty 1-d sequence")
    if np.any(soc <= 0) or np.any(soc >= 1):
        raise DomainError(f"SOC setpoints must lie in (0, 1): {soc_setpoints}")
    grid = np.asarray(qlli_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ConfigError("qlli_grid needs at least 3 points")
    if np.any(grid < 0):
        raise DomainError("qlli_grid values must be non-negative")
    if float(grid.max() - grid.min()) == 0.0:
        return SensitivityReport(
            soc_setpoints=tuple(soc),
            dr_dqlli=tuple(0.0 for _ in soc),
            dqd_dqlli=0.0,
            qlli_grid=tuple(grid),
        )
    if not np.all(np.diff(grid) > 0):
        raise ValidationError("qlli_grid must be strictly increasing")

    curves = _curves_or_default(curves)
    q_li0 = alignment.lithium_inventory()
    r_vals = np.empty((grid.size, soc.size))
    qd_vals = np.empty(grid.size)
    for i, delta in enumerate(grid):
        al = solve_alignment_from_inventory(
            q_li0 - delta, alignment.c_pe, alignment.c_ne,
            curves=curves, v_limits=v_limits,
        )
        qd_vals[i] = al.q_full
        r_vals[i] = rmodel.full_resistance(al.y_at(soc * al.q_full))
    mid = grid.size // 2
    dr = np.gradient(r_vals, grid, axis=0)[mid]
    dqd = float(np.gradient(qd_vals, grid)[mid])
    return SensitivityReport(
        soc_setpoints=tuple(soc),
        dr_dqlli=tuple(float(v) for v in dr),
        dqd_dqlli=dqd,
        qlli_grid=tuple(grid),
    )


def rescale_fpos(template: ResistanceModel, f_pos: float) -> ResistanceModel:
    """Re-partition a model to a new positive-electrode share.

    The positive term scales proportionally with f_pos and the remainder
    absorbs the rest, so the total reference-point resistance is preserved.
    """
    if template.f_pos <= 0:
        raise ConfigError("template f_pos must be positive to rescale")
    if not (0.0 <= f_pos <= 1.0):
        raise ValidationError(f"f_pos must lie in [0, 1], got {f_pos}")
    factor = f_pos / template.f_pos
    return ResistanceModel(
        r0=template.r0 * factor,
        k=template.k * factor,
        p=template.p,
        r_other=(1.0 - f_pos) * template.r_ref,
        f_pos=f_pos,
        r_ref=template.r_ref,
        lithiation_cap=template.lithiation_cap,
    )


def fpos_sweep(
    alignment: ElectrodeAlignment,
    template: ResistanceModel,
    f_pos_grid: Sequence[float],
    soc: float = 0.05,
    curves: CurveSet | None = None,
) -> list[FposSweepRow]:
    """Low-SOC resistance sensitivity as a function of the resistance partition.

    Each row reports dR/dQ_lli at the given SOC for one f_pos value, plus that
    sensitivity normalized by the f_pos = 1 case.
    """
    grid = [0.0, 1e-3, 2e-3]
    reference = rls_sensitivity(
        alignment, rescale_fpos(template, 1.0), [soc], grid, curves=curves
    ).dr_dqlli[0]
    if reference == 0.0:
        raise ConfigError("reference sensitivity vanished; cannot normalize")
    rows = []
    for f in f_pos_grid:
        sens = rls_sensitivity(
            alignment, rescale_fpos(template, float(f)), [soc], grid, curves=curves
        ).dr_dqlli[0]
        rows.append(FposSweepRow(float(f), sens, sens / reference))
    return rows


def bv_flux(params: ButlerVolmerParams, c_se: float, eta: float) -> float:
    """Reaction flux from charge-transfer kinetics at the particle surface.

    j = k0 * c_e^(1-a) * (c_s_max - c_se)^(1-a) * c_se^a
        * (exp((1-a)F eta / RT) - exp(-a F eta / RT))
    """
    if c_se <= 0.0 or c_se >= params.c_s_max:
        raise BoundaryError(
            "surface concentration at or beyond a boundary: the exchange term "
            f"vanishes (c_se={c_se}, c_s_max={params.c_s_max})"
        )
    a = params.alpha
    f_over_rt = params.faraday_constant / (
        params.gas_constant * params.temperature
    )
    exchange = (
        params.k0
        * params.c_e ** (1.0 - a)
        * (params.c_s_max - c_se) ** (1.0 - a)
        * c_se**a
    )
    try:
        forward = math.exp((1.0 - a) * f_over_rt * eta)
        backward = math.exp(-a * f_over_rt * eta)
    except OverflowError:
        return math.inf if eta > 0 else -math.inf
    return exchange * (forward - backward)


def sensitivity_to_csv(report: SensitivityReport, path):
    """Emit one row per quantity: resistance rows per setpoint, capacity last."""
    import pandas as pd

    rows = [
        {
            "quantity": "resistance_ohm",
            "soc": s,
            "sensitivity_per_ah_lli": d,
        }
        for s, d in zip(report.soc_setpoints, report.dr_dqlli)
    ]
    rows.append(
        {
            "quantity": "discharge_capacity_ah",
            "soc": np.nan,
            "sensitivity_per_ah_lli": report.dqd_dqlli,
        }
    )
    pd.DataFrame(rows).to_csv(path, index=False)


def fpos_table_to_csv(rows: list[FposSweepRow], path):
    import pandas as pd

    pd.DataFrame(
        {
            "f_pos": [r.f_pos for r in rows],
            "dr_dqlli_ohm_per_ah": [r.dr_dqlli for r in rows],
            "normalized_sensitivity": [r.normalized for r in rows],
        }
    ).to_csv(path, index=False)
