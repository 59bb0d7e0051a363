"""Degradation-mode trajectories from fitted electrode alignments.

Lithium inventory is counted at full charge (q_li = c_pe*y_100 + c_ne*x_100),
which makes the lithium-loss fraction independent of drift in the 0%-SOC
voltage cut. Active-material losses are capacity ratios per electrode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyError,
    ConvergenceError,
    DomainError,
    InsufficientDataError,
)
from .ocv import CurveSet, ElectrodeAlignment, FitConfig, fit_electrode_alignment

__all__ = [
    "DegradationState",
    "degradation_metrics",
    "degradation_trajectory",
    "trajectory_to_csv",
]

# Fits may legitimately land a hair negative on a fresh cell; anything below
# this is a broken fit, not noise.
MODE_FLOOR = -0.05


@dataclass
class DegradationState:
    """Degradation modes at one reference performance test."""

    rpt_index: int
    cycle_number: int
    lli: float
    lam_pe: float
    lam_ne: float
    q_li: float
    fit_rmse_v: float = math.nan
    flagged: bool = False
    failed: bool = False

    def __post_init__(self):
        if self.failed:
            return
        for name in ("lli", "lam_pe", "lam_ne"):
            val = getattr(self, name)
            if not (MODE_FLOOR <= val <= 1.0):
                raise DomainError(f"{name} = {val:.4f} outside [{MODE_FLOOR}, 1]")
        if min(self.lli, self.lam_pe, self.lam_ne) < 0:
            self.flagged = True

    @staticmethod
    def gap(rpt_index: int, cycle_number: int) -> "DegradationState":
        """Marker for an RPT whose fit did not converge."""
        return DegradationState(
            rpt_index=rpt_index,
            cycle_number=cycle_number,
            lli=math.nan,
            lam_pe=math.nan,
            lam_ne=math.nan,
            q_li=math.nan,
            fit_rmse_v=math.nan,
            failed=True,
        )


def degradation_metrics(
    fresh: ElectrodeAlignment,
    aged: ElectrodeAlignment,
    *,
    rpt_index: int = 0,
    cycle_number: int = 0,
    fit_rmse_v: float = math.nan,
) -> DegradationState:
    """Modes of `aged` relative to `fresh`: capacity-ratio LAM per electrode
    and top-of-charge lithium-inventory loss."""
    if (
        fresh.curve_id is not None
        and aged.curve_id is not None
        and fresh.curve_id != aged.curve_id
    ):
        raise ConsistencyError(
            "alignments were fitted against different half-cell curve sets: "
            f"{fresh.curve_id} vs {aged.curve_id}"
        )
    q_li_fresh = fresh.lithium_inventory()
    q_li_aged = aged.lithium_inventory()
    if q_li_fresh <= 0:
        raise DomainError("fresh alignment has non-positive lithium inventory")
    return DegradationState(
        rpt_index=rpt_index,
        cycle_number=cycle_number,
        lli=1.0 - q_li_aged / q_li_fresh,
        lam_pe=1.0 - aged.c_pe / fresh.c_pe,
        lam_ne=1.0 - aged.c_ne / fresh.c_ne,
        q_li=q_li_aged,
        fit_rmse_v=fit_rmse_v,
    )


def degradation_trajectory(
    rpt_curves,
    curves: CurveSet,
    config: FitConfig | None = None,
    cycle_numbers=None,
) -> list[DegradationState]:
    """Fit each reference-test (q, V) curve and difference it against the
    first successfully fitted one.

    Each fit is independent; the only coupling is that every fit after the
    first also seeds its simplex from the previous successful solution. A
    non-converging RPT yields a gap marker in place, never a global failure.
    """
    rpt_curves = list(rpt_curves)
    if len(rpt_curves) < 2:
        raise InsufficientDataError("trajectory needs at least 2 reference tests")
    if cycle_numbers is None:
        cycle_numbers = list(range(len(rpt_curves)))
    else:
        cycle_numbers = [int(c) for c in cycle_numbers]
        if len(cycle_numbers) != len(rpt_curves):
            raise InsufficientDataError(
                "cycle_numbers must match the number of reference tests"
            )

    fresh: ElectrodeAlignment | None = None
    fresh_rmse = math.nan
    prev_theta = None
    states: list[DegradationState] = []
    for k, (q, v) in enumerate(rpt_curves):
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        span = float(np.max(q) - np.min(q))
        extra = None
        if prev_theta is not None and span > 0:
            c_pe_prev, c_ne_prev, x100_prev = prev_theta
            extra = [(c_pe_prev / span, c_ne_prev / span, x100_prev)]
        try:
            fit = fit_electrode_alignment(q, v, curves, config, extra_starts=extra)
        except ConvergenceError:
            states.append(DegradationState.gap(k, cycle_numbers[k]))
            continue
        a = fit.alignment
        prev_theta = (a.c_pe, a.c_ne, a.x_100)
        if fresh is None:
            fresh = a
            fresh_rmse = fit.rmse_v
            states.append(
                degradation_metrics(
                    fresh, fresh, rpt_index=k, cycle_number=cycle_numbers[k],
                    fit_rmse_v=fresh_rmse,
                )
            )
        else:
            states.append(
                degradation_metrics(
                    fresh, a, rpt_index=k, cycle_number=cycle_numbers[k],
                    fit_rmse_v=fit.rmse_v,
                )
            )
    return states


def trajectory_to_csv(states, path):
    import pandas as pd

    pd.DataFrame(
        {
            "rpt_index": [s.rpt_index for s in states],
            "cycle_number": [s.cycle_number for s in states],
            "lli": [s.lli for s in states],
            "lam_pe": [s.lam_pe for s in states],
            "lam_ne": [s.lam_ne for s in states],
            "q_li_ah": [s.q_li for s in states],
            "fit_rmse_v": [s.fit_rmse_v for s in states],
        }
    ).to_csv(path, index=False)
