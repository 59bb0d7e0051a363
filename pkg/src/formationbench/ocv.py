"""Half-cell potential curves, full-cell voltage composition, and alignment fits.

The full-cell equilibrium voltage is composed from two half-cell potential
curves and an :class:`ElectrodeAlignment` that maps full-cell capacity to the
stoichiometry windows each electrode traverses between the voltage limits:

    V(q) = U_pos(y(q)) - U_neg(x(q)),  y(q) = y_0 - q/c_pe,  x(q) = x_0 + q/c_ne

Fitting inverts that composition: given a slow-rate (q, V) curve and the curve
pair, a bounded derivative-free search recovers (c_pe, c_ne, x_100) with the
top-of-charge positive stoichiometry y_100 held fixed by default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from ._interp import MonotoneCubic
from .errors import ConfigError, ConvergenceError, DomainError, ValidationError

__all__ = [
    "HalfCellCurve",
    "CurveSet",
    "ElectrodeAlignment",
    "FitConfig",
    "FitResult",
    "reference_curves",
    "full_cell_voltage",
    "fit_electrode_alignment",
    "electrode_window_at_voltage",
    "load_halfcell_csv",
    "save_halfcell_csv",
    "alignment_to_json",
    "alignment_from_json",
]


@dataclass
class HalfCellCurve:
    """Tabulated near-equilibrium potential of one electrode vs Li/Li+.

    Parameters
    ----------
    electrode : {"positive", "negative"}
    stoichiometry_grid : array
        Strictly ascending lithiation fractions, at least 20 points, covering
        [0.005, 0.995] at minimum.
    potential : array
        Potential in volts per grid point, strictly decreasing with lithiation.
    """

    electrode: str
    stoichiometry_grid: np.ndarray
    potential: np.ndarray
    _interp: MonotoneCubic | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.electrode not in ("positive", "negative"):
            raise ValidationError(f"unknown electrode kind: {self.electrode!r}")
        grid = np.asarray(self.stoichiometry_grid, dtype=float)
        pot = np.asarray(self.potential, dtype=float)
        if grid.ndim != 1 or grid.shape != pot.shape:
            raise ValidationError("grid and potential must be matching 1-d arrays")
        if grid.size < 20:
            raise ValidationError("half-cell curve needs at least 20 grid points")
        if not np.all(np.diff(grid) > 0):
            raise ValidationError("stoichiometry grid must be strictly ascending")
        if grid[0] > 0.005 or grid[-1] < 0.995:
            raise ValidationError("grid must cover [0.005, 0.995]")
        if not np.all(np.diff(pot) < 0):
            raise ValidationError("potential must strictly decrease with lithiation")
        self.stoichiometry_grid = grid
        self.potential = pot

    @property
    def interpolator(self) -> MonotoneCubic:
        if self._interp is None:
            self._interp = MonotoneCubic(self.stoichiometry_grid, self.potential)
        return self._interp

    def potential_at(self, stoich):
        """Potential at the given lithiation(s); out-of-grid queries clamp."""
        return self.interpolator(stoich)

    def was_clamped(self, stoich):
        # logical_not, not ~: in_domain returns a python bool for scalars.
        return np.logical_not(self.interpolator.in_domain(stoich))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.electrode.encode())
        h.update(np.ascontiguousarray(self.stoichiometry_grid).tobytes())
        h.update(np.ascontiguousarray(self.potential).tobytes())
        return h.hexdigest()[:16]


class CurveSet(NamedTuple):
    """A positive/negative half-cell curve pair used together."""

    positive: HalfCellCurve
    negative: HalfCellCurve

    def fingerprint(self) -> str:
        return self.positive.fingerprint() + self.negative.fingerprint()


# Analytic reference curve pair bundled for tests and the synthetic cell.
# Both forms are strictly decreasing on [0, 1]:
#   U_pos(y) = 4.246 - 0.80*y - 0.25*exp(30*(y-1)) + 0.10*exp(-25*y)
#   U_neg(x) = 0.115 + 0.70*exp(-44*x) - 0.065*x
# The exponential knees sit just inside the cycling window ends so all three
# free alignment parameters stay identifiable. The negative curve is nearly
# flat at high lithiation (top-of-charge anchor barely drifts with aging) and
# steep near empty, so the low-voltage cut is pinned by the negative electrode
# rather than the positive one. Sampled on a uniform 241-point grid; every
# consumer interpolates the same table, so generator and fitter share one
# voltage model.
_POS_COEFFS = (4.246, 0.80, 0.25, 30.0, 0.10, 25.0)
_NEG_COEFFS = (0.115, 0.70, 44.0, 0.065)
_REFERENCE_GRID_POINTS = 241


def _u_pos_analytic(y):
    a0, a1, a2, a3, a4, a5 = _POS_COEFFS
    y = np.asarray(y, dtype=float)
    return a0 - a1 * y - a2 * np.exp(a3 * (y - 1.0)) + a4 * np.exp(-a5 * y)


def _u_neg_analytic(x):
    b0, b1, b2, b3 = _NEG_COEFFS
    x = np.asarray(x, dtype=float)
    return b0 + b1 * np.exp(-b2 * x) - b3 * x


def reference_curves() -> CurveSet:
    """Bundled synthetic half-cell curve pair (documented analytic form)."""
    grid = np.linspace(0.0, 1.0, _REFERENCE_GRID_POINTS)
    pos = HalfCellCurve("positive", grid, _u_pos_analytic(grid))
    neg = HalfCellCurve("negative", grid.copy(), _u_neg_analytic(grid))
    return CurveSet(pos, neg)


@dataclass
class ElectrodeAlignment:
    """Electrode capacities plus the stoichiometry windows between voltage limits.

    Invariants: 0 <= y_100 < y_0 <= 1, 0 <= x_0 < x_100 <= 1, and
    c_pe*(y_0 - y_100) = c_ne*(x_100 - x_0) = q_full within 1e-6 Ah.
    """

    c_pe: float
    c_ne: float
    y_0: float
    y_100: float
    x_0: float
    x_100: float
    q_full: float
    curve_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self, tol: float = 1e-6):
        if not (0.0 <= self.y_100 < self.y_0 <= 1.0):
            raise ValidationError(
                f"positive window invalid: y_100={self.y_100}, y_0={self.y_0}"
            )
        if not (0.0 <= self.x_0 < self.x_100 <= 1.0):
            raise ValidationError(
                f"negative window invalid: x_0={self.x_0}, x_100={self.x_100}"
            )
        if self.c_pe <= 0 or self.c_ne <= 0 or self.q_full <= 0:
            raise ValidationError("capacities must be positive")
        span_pe = self.c_pe * (self.y_0 - self.y_100)
        span_ne = self.c_ne * (self.x_100 - self.x_0)
        if abs(span_pe - self.q_full) > tol or abs(span_ne - self.q_full) > tol:
            raise ValidationError(
                "capacity consistency violated: "
                f"c_pe*dy={span_pe:.9f}, c_ne*dx={span_ne:.9f}, q_full={self.q_full:.9f}"
            )

    def lithium_inventory(self) -> float:
        """Cyclable lithium in Ah, counted at full charge."""
        return self.c_pe * self.y_100 + self.c_ne * self.x_100

    def y_at(self, q):
        return self.y_0 - np.asarray(q, dtype=float) / self.c_pe

    def x_at(self, q):
        return self.x_0 + np.asarray(q, dtype=float) / self.c_ne


def full_cell_voltage(
    alignment: ElectrodeAlignment,
    curves: CurveSet,
    q,
    *,
    return_clamped: bool = False,
):
    """Equilibrium full-cell voltage at capacity q (Ah from 0% SOC).

    q may be a scalar or an array within [0, q_full]. Stoichiometries falling
    outside a curve's tabulated domain are clamped; pass return_clamped=True to
    receive a flag alongside the voltage.
    """
    qa = np.asarray(q, dtype=float)
    if np.any(qa < -1e-12) or np.any(qa > alignment.q_full + 1e-12):
        raise DomainError(
            f"q outside [0, q_full={alignment.q_full:.6f}]: {qa.min()}..{qa.max()}"
        )
    y = alignment.y_at(qa)
    x = alignment.x_at(qa)
    v = curves.positive.potential_at(y) - curves.negative.potential_at(x)
    if return_clamped:
        clamped = np.any(curves.positive.was_clamped(y)) or np.any(
            curves.negative.was_clamped(x)
        )
        return v, bool(clamped)
    return v


@dataclass
class FitConfig:
    """Settings for :func:`fit_electrode_alignment`.

    Bounds for the electrode capacities are expressed as multiples of the
    measured curve's capacity span. Convergence follows the bounded
    derivative-free simplex with 8 Latin-hypercube starts; a start counts as
    converged when the simplex objective spread falls below fatol (V^2) within
    max_iter iterations.
    """

    fix_y100: bool = True
    y_100: float = 0.03
    capacity_bounds: tuple[float, float] = (0.5, 2.0)
    x100_bounds: tuple[float, float] = (0.5, 1.0)
    y100_bounds: tuple[float, float] = (0.0, 0.2)
    n_starts: int = 8
    seed: int = 7
    grid_points: int = 1000
    fatol: float = 1e-9
    xatol: float = 1e-7
    max_iter: int = 2000


@dataclass
class FitResult:
    alignment: ElectrodeAlignment
    rmse_v: float
    converged: bool
    n_evaluations: int


def _resample_measured(q, v, n_points):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != v.shape or q.ndim != 1:
        raise ValidationError("measured curve must be two matching 1-d arrays")
    order = np.argsort(q, kind="stable")
    q, v = q[order], v[order]
    # De-duplicate capacity values, averaging their voltages.
    uq, inverse, counts = np.unique(q, return_inverse=True, return_counts=True)
    if uq.size != q.size:
        sums = np.zeros(uq.size)
        np.add.at(sums, inverse, v)
        v = sums / counts
        q = uq
    if q.size < 50:
        raise ValidationError("measured curve needs at least 50 distinct points")
    grid = np.linspace(q[0], q[-1], n_points)
    resampled = MonotoneCubic(q, v)(grid)
    return grid, resampled, float(q[-1] - q[0]), float(q[0])


def fit_electrode_alignment(
    measured_q,
    measured_v,
    curves: CurveSet,
    config: FitConfig | None = None,
    extra_starts: Sequence[Sequence[float]] | None = None,
) -> FitResult:
    """Fit an alignment to a measured slow-rate (q, V) curve.

    Minimizes RMS voltage error on a uniform capacity grid over the free
    parameters (c_pe, c_ne, x_100), with y_100 fixed by default. The capacity
    axis is normalized internally by the measured span so the search landscape
    is invariant to capacity units. Raises ConvergenceError carrying the best
    solution found when no start converges within the iteration budget.
    """
    cfg = config or FitConfig()
    if cfg.capacity_bounds[0] <= 0 or cfg.capacity_bounds[0] >= cfg.capacity_bounds[1]:
        raise ConfigError(f"infeasible capacity bounds {cfg.capacity_bounds}")
    if not (0 <= cfg.x100_bounds[0] < cfg.x100_bounds[1] <= 1):
        raise ConfigError(f"infeasible x_100 bounds {cfg.x100_bounds}")
    grid, v_meas, q_span, q_lo = _resample_measured(
        measured_q, measured_v, cfg.grid_points
    )
    # Work on the capacity-from-top coordinate, normalized by the span.
    s = (grid[-1] - grid) / q_span  # 1 at the curve bottom, 0 at the top
    u_pos = curves.positive.interpolator
    u_neg = curves.negative.interpolator

    free_y100 = not cfg.fix_y100

    def objective(theta):
        c_pe_n, c_ne_n, x_100 = theta[0], theta[1], theta[2]
        y_100 = theta[3] if free_y100 else cfg.y_100
        y = np.clip(y_100 + s / c_pe_n, 0.0, 1.0)
        x = np.clip(x_100 - s / c_ne_n, 0.0, 1.0)
        resid = u_pos(y) - u_neg(x) - v_meas
        return float(resid @ resid) / resid.size

    lo = [cfg.capacity_bounds[0], cfg.capacity_bounds[0], cfg.x100_bounds[0]]
    hi = [cfg.capacity_bounds[1], cfg.capacity_bounds[1], cfg.x100_bounds[1]]
    if free_y100:
        lo.append(cfg.y100_bounds[0])
        hi.append(cfg.y100_bounds[1])
    lo = np.asarray(lo)
    hi = np.asarray(hi)

    sampler = qmc.LatinHypercube(d=lo.size, seed=cfg.seed)
    starts = [lo + (hi - lo) * row for row in sampler.random(cfg.n_starts)]
    if extra_starts:
        for st in extra_starts:
            st = np.asarray(st, dtype=float)
            if st.size != lo.size:
                raise ConfigError("extra start has wrong dimension")
            starts.append(np.clip(st, lo, hi))

    best = None
    best_converged = False
    n_eval = 0
    bounds = list(zip(lo, hi))
    for start in starts:
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "fatol": cfg.fatol,
                "xatol": cfg.xatol,
                "maxiter": cfg.max_iter,
                "maxfev": 4 * cfg.max_iter,
            },
        )
        n_eval += res.nfev
        if best is None or res.fun < best.fun:
            best = res
            best_converged = bool(res.success)
        elif res.success and abs(res.fun - best.fun) <= cfg.fatol:
            best_converged = True

    theta = best.x
    y_100 = theta[3] if free_y100 else cfg.y_100
    c_pe = theta[0] * q_span
    c_ne = theta[1] * q_span
    x_100 = theta[2]
    rmse = math.sqrt(max(best.fun, 0.0))
    try:
        alignment = ElectrodeAlignment(
            c_pe=c_pe,
            c_ne=c_ne,
            y_0=y_100 + q_span / c_pe,
            y_100=y_100,
            x_0=x_100 - q_span / c_ne,
            x_100=x_100,
            q_full=q_span,
            curve_id=curves.fingerprint(),
        )
    except ValidationError:
        # An aborted search can sit on an infeasible point (window outside
        # [0, 1]); report that as non-convergence, not as a validation bug.
        if not best_converged:
            raise ConvergenceError(
                f"search stopped on an infeasible alignment after "
                f"{cfg.max_iter} iterations (best RMSE {rmse:.6e} V)",
                best=None,
            ) from None
        raise
    result = FitResult(alignment, rmse, best_converged, n_eval)
    if not best_converged:
        raise ConvergenceError(
            f"no start converged within {cfg.max_iter} iterations "
            f"(best RMSE {rmse:.6e} V)",
            best=result,
        )
    return result


def electrode_window_at_voltage(
    alignment: ElectrodeAlignment,
    curves: CurveSet,
    v_target: float,
    *,
    v_tol: float = 1e-6,
):
    """Capacity and electrode states where the full-cell voltage equals v_target.

    Solves full_cell_voltage(q) = v_target by bisection to within v_tol volts
    and returns (q, y, x, u_pos). The voltage is strictly increasing in q for a
    valid alignment, so the bracket is [0, q_full].
    """
    v_lo = float(full_cell_voltage(alignment, curves, 0.0))
    v_hi = float(full_cell_voltage(alignment, curves, alignment.q_full))
    if not (min(v_lo, v_hi) - 1e-12 <= v_target <= max(v_lo, v_hi) + 1e-12):
        raise DomainError(
            f"v_target {v_target} outside span [{v_lo:.6f}, {v_hi:.6f}]"
        )
    a, b = 0.0, alignment.q_full
    fa = v_lo - v_target
    fb = v_hi - v_target
    # Targets at (or within tolerance of) an endpoint have no sign change
    # inside the bracket; return the endpoint instead of bisecting.
    if abs(fa) <= v_tol:
        q = a
    elif abs(fb) <= v_tol:
        q = b
    else:
        q = 0.5 * (a + b)
        for _ in range(200):
            q = 0.5 * (a + b)
            f = float(full_cell_voltage(alignment, curves, q)) - v_target
            if abs(f) <= v_tol:
                break
            if (f < 0) == (fa < 0):
                a, fa = q, f
            else:
                b = q
    y = float(alignment.y_at(q))
    x = float(alignment.x_at(q))
    u_pos = float(curves.positive.potential_at(y))
    return q, y, x, u_pos


def load_halfcell_csv(path, electrode: str) -> HalfCellCurve:
    """Read a two-column half-cell curve CSV (stoichiometry, potential_v)."""
    import pandas as pd

    df = pd.read_csv(path)
    for col in ("stoichiometry", "potential_v"):
        if col not in df.columns:
            raise ConfigError(f"half-cell curve file missing column {col!r}")
    return HalfCellCurve(
        electrode,
        df["stoichiometry"].to_numpy(dtype=float),
        df["potential_v"].to_numpy(dtype=float),
    )


def save_halfcell_csv(curve: HalfCellCurve, path):
    import pandas as pd

    pd.DataFrame(
        {"stoichiometry": curve.stoichiometry_grid, "potential_v": curve.potential}
    ).to_csv(path, index=False)


def alignment_to_json(alignment: ElectrodeAlignment, path=None, fit_rmse_v=None):
    """Serialize an alignment (six window fields, q_full, fit RMSE) as JSON."""
    payload = {
        "c_pe_ah": alignment.c_pe,
        "c_ne_ah": alignment.c_ne,
        "y_0": alignment.y_0,
        "y_100": alignment.y_100,
        "x_0": alignment.x_0,
        "x_100": alignment.x_100,
        "q_full_ah": alignment.q_full,
        "fit_rmse_v": fit_rmse_v,
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def alignment_from_json(path) -> tuple[ElectrodeAlignment, float | None]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    alignment = ElectrodeAlignment(
        c_pe=payload["c_pe_ah"],
        c_ne=payload["c_ne_ah"],
        y_0=payload["y_0"],
        y_100=payload["y_100"],
        x_0=payload["x_0"],
        x_100=payload["x_100"],
        q_full=payload["q_full_ah"],
    )
    return alignment, payload.get("fit_rmse_v")


def _replace_alignment(alignment: ElectrodeAlignment, **kw) -> ElectrodeAlignment:
    return replace(alignment, **kw)
