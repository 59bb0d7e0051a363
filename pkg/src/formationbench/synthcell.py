"""Synthetic cell generator: formation records, pulse sequences, fleets.

The cell state is the lithium pair (m, n) in Ah: m in the positive electrode,
n in the negative. Every step boundary (voltage target, hold-current cut,
side-reaction completion) is root-solved on the quasi-static state equation,
so cut states are exact and path independent. Each emitted step places its
first sample STEP_EPSILON_S after the boundary carrying the new current, and
its last sample exactly on the boundary, which keeps trapezoidal integrals of
the emitted record within ~1e-6 Ah of the underlying state change.

Ground-truth charge and discharge capacities are defined as the trapezoidal
integrals of the emitted samples over the same record windows the feature
pipeline integrates, so a round trip through ingest + features reproduces
them to float precision.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq
from scipy.special import expit

from .errors import ConfigError, DomainError, ValidationError
from .features import (
    FeatureRecord,
    FormationFeatures,
    LifeOutcome,
    cycle_life,
    formation_features,
)
from .hppc import ExtractConfig, extract_pulses, resistance_at_soc
from .ingest import CANONICAL_COLUMNS, CyclerTimeSeries
from .ocv import CurveSet, ElectrodeAlignment, reference_curves
from .stoichsim import (
    DEFAULT_V_LIMITS,
    ResistanceModel,
    default_alignment,
    default_resistance_model,
    solve_alignment_from_inventory,
)

__all__ = [
    "STEP_EPSILON_S",
    "SEI_CURRENT_FRACTION",
    "PULSE_RESPONSE_TIMES",
    "PULSE_RESPONSE_WEIGHTS",
    "DEFAULT_SOC_POINTS",
    "FadeModel",
    "NoiseSpec",
    "SynthCellSpec",
    "ProtocolStep",
    "baseline_formation_protocol",
    "fast_formation_protocol",
    "FormationOutput",
    "HppcPulseTruth",
    "HppcTruth",
    "HppcOutput",
    "generate_formation",
    "generate_hppc",
    "FleetConfig",
    "FleetCellTruth",
    "FleetResult",
    "generate_fleet",
    "model_low_soc_resistance",
]

# Lead-in offset of each step's first sample past the boundary (seconds).
STEP_EPSILON_S = 1e-3
# Share of charge current consumed by the passivation side reaction while
# the planted first-charge lithium budget lasts.
SEI_CURRENT_FRACTION = 0.25
# Fraction of the 10 s pulse resistance already developed at 1 s and 5 s.
PULSE_RESPONSE_TIMES = (0.0, 1.0, 5.0, 10.0)
PULSE_RESPONSE_WEIGHTS = (0.8, 0.8, 0.92, 1.0)
DEFAULT_SOC_POINTS = (0.02, 0.04, 0.08, 0.12, 0.5, 0.85, 0.9, 0.95)

# Keep a hair of stoichiometry headroom so half-cell potentials are queried
# strictly inside their calibrated grids.
_STOICH_MARGIN = 5e-4
_KNEE_DROP_FRACTION = 0.55


@dataclass(frozen=True)
class FadeModel:
    """Capacity retention: linear plateau plus a logistic knee.

    post_knee_rate is the steepest per-cycle retention slope at the knee;
    the logistic width follows from it and the fixed total drop.
    """

    plateau_rate: float = 1e-4
    knee_cycle: float = 450.0
    post_knee_rate: float = 0.0171875

    def __post_init__(self):
        if self.plateau_rate < 0 or self.post_knee_rate <= 0:
            raise ValidationError("fade rates must be non-negative (knee rate > 0)")
        if self.knee_cycle <= 0:
            raise ValidationError("knee_cycle must be positive")

    @property
    def knee_width_cycles(self) -> float:
        return _KNEE_DROP_FRACTION / (4.0 * self.post_knee_rate)

    def retention(self, cycles):
        c = np.asarray(cycles, dtype=float)
        out = (
            1.0
            - self.plateau_rate * c
            - _KNEE_DROP_FRACTION * expit((c - self.knee_cycle) / self.knee_width_cycles)
        )
        return float(out) if np.ndim(cycles) == 0 else out

    def cycles_to_retention(self, retention: float, search_limit: float = 1e5) -> float:
        f = lambda c: self.retention(c) - retention
        if f(1.0) <= 0:
            return 1.0
        hi = self.knee_cycle + 50.0 * self.knee_width_cycles
        hi = min(max(hi, 10.0), search_limit)
        if f(hi) > 0:
            raise DomainError(f"retention {retention} never reached by cycle {hi:.0f}")
        return float(brentq(f, 1.0, hi, xtol=1e-9, rtol=8.9e-16))


@dataclass(frozen=True)
class NoiseSpec:
    voltage_sd: float = 0.0
    current_sd: float = 0.0

    def __post_init__(self):
        if self.voltage_sd < 0 or self.current_sd < 0:
            raise ValidationError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class SynthCellSpec:
    """Planted truth for one synthetic cell.

    alignment_truth describes the cell AFTER formation; the simulator adds
    sei_loss_formation Ah of lithium back to build the as-assembled state.
    """

    alignment_truth: ElectrodeAlignment
    rmodel_truth: ResistanceModel
    sei_loss_formation: float = 0.346
    fade: FadeModel = field(default_factory=FadeModel)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    nominal_capacity_ah: float = 2.3
    seed: int = 0

    def __post_init__(self):
        if self.sei_loss_formation < 0:
            raise ValidationError("sei_loss_formation must be non-negative")
        if self.nominal_capacity_ah <= 0:
            raise ValidationError("nominal_capacity_ah must be positive")

    @classmethod
    def default(cls, **overrides) -> "SynthCellSpec":
        align = overrides.pop("alignment_truth", None) or default_alignment()
        rmodel = overrides.pop("rmodel_truth", None) or default_resistance_model(align)
        return cls(alignment_truth=align, rmodel_truth=rmodel, **overrides)


@dataclass(frozen=True)
class ProtocolStep:
    kind: str  # cc_charge | cc_discharge | cv_hold | rest
    c_rate: float | None = None
    target_v: float | None = None
    cut_c_rate: float | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if self.kind in ("cc_charge", "cc_discharge"):
            if not self.c_rate or self.c_rate <= 0 or self.target_v is None:
                raise ConfigError(f"{self.kind} needs a positive c_rate and target_v")
        elif self.kind == "cv_hold":
            if self.target_v is None or not self.cut_c_rate or self.cut_c_rate <= 0:
                raise ConfigError("cv_hold needs target_v and a positive cut_c_rate")
        elif self.kind == "rest":
            if not self.duration_s or self.duration_s <= 0:
                raise ConfigError("rest needs a positive duration_s")
        else:
            raise ConfigError(f"unknown protocol step kind {self.kind!r}")


def _cc(rate, v):
    return ProtocolStep(kind="cc_charge", c_rate=rate, target_v=v)


def _dc(rate, v):
    return ProtocolStep(kind="cc_discharge", c_rate=rate, target_v=v)


def _cv(v, cut=0.01):
    return ProtocolStep(kind="cv_hold", target_v=v, cut_c_rate=cut)


def _rest(s):
    return ProtocolStep(kind="rest", duration_s=s)


def baseline_formation_protocol(
    v_limits=DEFAULT_V_LIMITS, rest_s: float = 6 * 3600.0
) -> tuple:
    """Three C/10 constant-current/constant-voltage cycles over the full
    window, with a long rest before the final discharge."""
    lo, hi = v_limits
    steps = []
    for k in range(3):
        steps += [_cc(0.1, hi), _cv(hi)]
        if k == 2:
            steps.append(_rest(rest_s))
        steps.append(_dc(0.1, lo))
    return tuple(steps)


def fast_formation_protocol(
    v_limits=DEFAULT_V_LIMITS, v_knee: float = 3.9, rest_s: float = 6 * 3600.0
) -> tuple:
    """1C charge to the plateau voltage, straight on to the top at C/5, five
    C/5 cycles between the plateau and the top, then a C/10 diagnostic pair."""
    lo, hi = v_limits
    steps = [_cc(1.0, v_knee), _cc(0.2, hi), _cv(hi)]
    for _ in range(5):
        steps += [_dc(0.2, v_knee), _cc(0.2, hi), _cv(hi)]
    steps += [_dc(0.2, lo), _cc(0.1, hi), _cv(hi), _rest(rest_s), _dc(0.1, lo)]
    return tuple(steps)


_PROTOCOLS = {
    "baseline": baseline_formation_protocol,
    "fast": fast_formation_protocol,
}


class _Block:
    __slots__ = ("kind", "t", "i", "v", "step_index", "cycle_index")

    def __init__(self, kind, t, i, v, step_index, cycle_index):
        self.kind = kind
        self.t = t
        self.i = i
        self.v = v
        self.step_index = step_index
        self.cycle_index = cycle_index


class _Simulator:
    """Quasi-static cell integrator emitting cycler-style samples."""

    def __init__(self, spec: SynthCellSpec, curves: CurveSet | None = None):
        self.spec = spec
        self.curves = curves or reference_curves()
        align = spec.alignment_truth
        self.c_pe = align.c_pe
        self.c_ne = align.c_ne
        self.rmodel = spec.rmodel_truth
        self.q_li_post = align.lithium_inventory()
        self.i_1c = spec.nominal_capacity_ah
        self.t = 0.0
        self.m = 0.0
        self.n = 0.0
        self.sei = 0.0
        self.blocks: list[_Block] = []
        self.step_index = 1
        self.cycle_index = 1

    # -- state helpers ---------------------------------------------------

    def _voc(self, m, n):
        y = np.asarray(m) / self.c_pe
        x = np.asarray(n) / self.c_ne
        return self.curves.positive.potential_at(y) - self.curves.negative.potential_at(x)

    def _r(self, m):
        return self.rmodel.full_resistance(np.asarray(m) / self.c_pe)

    def _m_bounds(self, q_li):
        m_lo = max(_STOICH_MARGIN * self.c_pe, q_li - (1 - _STOICH_MARGIN) * self.c_ne)
        m_hi = min((1 - _STOICH_MARGIN) * self.c_pe, q_li - _STOICH_MARGIN * self.c_ne)
        if m_lo >= m_hi:
            raise DomainError("no feasible lithium split for this inventory")
        return m_lo, m_hi

    def seat_at_voltage(self, v_target, i_load):
        """Initialize (m, n) on the as-assembled inventory such that the
        loaded terminal voltage equals v_target under the post-formation
        window; the planted first-charge loss is added to the positive side."""
        q_post = self.q_li_post
        m_lo, m_hi = self._m_bounds(q_post)

        def g(m):
            return self._voc(m, q_post - m) + i_load * self._r(m) - v_target

        m_root = brentq(g, m_lo, m_hi, xtol=1e-14, rtol=8.9e-16)
        self.n = q_post - m_root
        self.m = m_root + self.spec.sei_loss_formation
        self.sei = self.spec.sei_loss_formation
        if self.m > (1 - _STOICH_MARGIN) * self.c_pe:
            raise DomainError(
                "as-assembled positive lithiation exceeds the model range; "
                "sei_loss_formation too large for this alignment"
            )
        return m_root

    # -- emission --------------------------------------------------------

    def _sample_times(self, t1, dt):
        t0 = self.t
        if t1 - t0 <= 2 * STEP_EPSILON_S:
            return np.array([t1])
        # keep the final boundary sample clear of the uniform grid
        inner = (
            np.arange(t0 + dt, t1 - 0.01 * dt, dt) if (t1 - t0) > dt else np.empty(0)
        )
        return np.concatenate(([t0 + STEP_EPSILON_S], inner, [t1]))

    def _push(self, kind, t, i, v):
        self.blocks.append(
            _Block(kind, np.asarray(t, dtype=float), np.asarray(i, dtype=float),
                   np.asarray(v, dtype=float), self.step_index, self.cycle_index)
        )

    def advance_step_counters(self, kind):
        self.step_index += 1
        if kind == "cc_discharge":
            self.cycle_index += 1

    # -- step runners ----------------------------------------------------

    def _phi(self, i_a):
        return SEI_CURRENT_FRACTION if (self.sei > 1e-15 and i_a > 0) else 0.0

    def run_cc(self, i_a, *, target_v=None, target_m=None, dt=10.0):
        if i_a == 0:
            raise ConfigError("constant-current step needs a nonzero current")
        kind = "cc_charge" if i_a > 0 else "cc_discharge"
        guard = 0
        while True:
            guard += 1
            if guard > 8:
                raise ConfigError("constant-current step failed to terminate")
            phi = self._phi(i_a)
            m0, n0 = self.m, self.n

            def state_at(d):
                dm = i_a * d / 3600.0
                return m0 - dm, n0 + (1.0 - phi) * dm

            def v_at(d):
                m, n = state_at(d)
                return self._voc(m, n) + i_a * self._r(m)

            d_max = self._max_cc_seconds(i_a, phi)
            events = []
            if phi > 0:
                events.append((3600.0 * self.sei / (phi * i_a), "sei"))
            if target_m is not None:
                d_t = 3600.0 * (m0 - target_m) / i_a
                if d_t < 0:
                    raise ConfigError("throughput target lies behind the current state")
                events.append((d_t, "done"))
            if target_v is not None:
                f = lambda d: v_at(d) - target_v
                f0 = f(0.0)
                if (i_a > 0 and f0 >= 0) or (i_a < 0 and f0 <= 0):
                    events.append((0.0, "done"))  # target already met
                else:
                    f1 = f(d_max)
                    if (f0 < 0) == (f1 < 0):
                        raise ConfigError(
                            f"voltage target {target_v} V unreachable at "
                            f"{i_a:+.3f} A within the stoichiometry window"
                        )
                    events.append(
                        (brentq(f, 0.0, d_max, xtol=1e-10, rtol=8.9e-16), "done")
                    )
            if not events:
                raise ConfigError("constant-current step has no termination event")
            d_end, what = min(events)

            if d_end > 0:
                ts = self._sample_times(self.t + d_end, dt)
                ds = ts - self.t
                ms, ns = state_at(ds)
                vs = self._voc(ms, ns) + i_a * self._r(ms)
                self._push(kind, ts, np.full_like(ts, i_a), vs)
                self.t = float(ts[-1])
            m_end, n_end = state_at(d_end)
            consumed = phi * (m0 - m_end)
            self.m, self.n = float(m_end), float(n_end)
            self.sei = 0.0 if what == "sei" else max(0.0, self.sei - consumed)
            if what != "sei":
                return

    def _max_cc_seconds(self, i_a, phi):
        if i_a > 0:
            dm = self.m - _STOICH_MARGIN * self.c_pe
            dn = ((1 - _STOICH_MARGIN) * self.c_ne - self.n) / max(1.0 - phi, 1e-9)
        else:
            dm = (1 - _STOICH_MARGIN) * self.c_pe - self.m
            dn = self.n - _STOICH_MARGIN * self.c_ne
        d = 3600.0 * min(dm, dn) / abs(i_a)
        if d <= 0:
            raise DomainError("cell state already at the stoichiometry margin")
        return d

    def run_cv(self, v_hold, i_cut, dt=10.0, max_steps=2_000_000):
        if i_cut <= 0:
            raise ConfigError("hold cut current must be positive")
        guard = 0
        while True:
            guard += 1
            if guard > 4:
                raise ConfigError("voltage hold failed to terminate")
            phi = SEI_CURRENT_FRACTION if self.sei > 1e-15 else 0.0
            # During a charge hold the positive electrode passes the full
            # current, so the trajectory is one-dimensional in m.
            m0, n0 = self.m, self.n

            def n_of(m):
                return n0 + (1.0 - phi) * (m0 - m)

            def cur(m):
                return (v_hold - float(self._voc(m, n_of(m)))) / float(self._r(m))

            if cur(m0) <= i_cut * (1 + 1e-12):
                return
            m_sei = m0 - self.sei / phi if phi > 0 else -np.inf

            ts = [self.t + STEP_EPSILON_S]
            ms = [m0 - cur(m0) * STEP_EPSILON_S / 3600.0]
            t_k, m_k = self.t, m0
            event = None
            for _ in range(max_steps):
                m_next = self._rk4_cv(m_k, cur, dt)
                if m_next <= m_sei:
                    event = ("sei", m_sei)
                    break
                if cur(m_next) <= i_cut:
                    lo, hi = m_next, m_k
                    m_cut = brentq(
                        lambda m: cur(m) - i_cut, lo, hi, xtol=1e-14, rtol=8.9e-16
                    )
                    if m_cut <= m_sei:
                        event = ("sei", m_sei)
                    else:
                        event = ("cut", m_cut)
                    break
                t_k += dt
                m_k = m_next
                ts.append(t_k)
                ms.append(m_k)
            if event is None:
                raise ConfigError("voltage hold exceeded the step budget")
            what, m_end = event
            t_end = t_k + self._cv_time_to(m_k, m_end, cur)
            if ts and t_end <= ts[-1] + 1e-6:
                ts.pop()
                ms.pop()
            ts.append(max(t_end, self.t + STEP_EPSILON_S))
            ms.append(m_end)
            ts_a = np.asarray(ts)
            ms_a = np.asarray(ms)
            is_a = np.array([cur(m) for m in ms_a])
            self._push("cv_hold", ts_a, is_a, np.full_like(ts_a, v_hold))
            consumed = phi * (m0 - m_end)
            self.t = float(t_end)
            self.m = float(m_end)
            self.n = float(n_of(m_end))
            self.sei = 0.0 if what == "sei" else max(0.0, self.sei - consumed)
            if what != "sei":
                return

    @staticmethod
    def _rk4_cv(m, cur, dt):
        f = lambda mm: -cur(mm) / 3600.0
        k1 = f(m)
        k2 = f(m + 0.5 * dt * k1)
        k3 = f(m + 0.5 * dt * k2)
        k4 = f(m + dt * k3)
        return m + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0

    @staticmethod
    def _cv_time_to(m_from, m_to, cur):
        """Seconds to traverse [m_to, m_from] under dm/dt = -I(m)/3600,
        by 16-point Gauss-Legendre quadrature of 3600/I."""
        if m_from == m_to:
            return 0.0
        nodes, weights = np.polynomial.legendre.leggauss(16)
        half = 0.5 * (m_from - m_to)
        mid = 0.5 * (m_from + m_to)
        mm = mid + half * nodes
        integrand = np.array([3600.0 / cur(m) for m in mm])
        return float(half * np.dot(weights, integrand))

    def run_rest(self, duration, dt=60.0):
        v = float(self._voc(self.m, self.n))
        ts = self._sample_times(self.t + duration, dt)
        self._push("rest", ts, np.zeros_like(ts), np.full_like(ts, v))
        self.t = float(ts[-1])

    def run_pulse(self, i_a, duration=10.0, sample_dt=0.5):
        """Stylized pulse: the overpotential develops as a fixed fraction of
        the planted full resistance at the pulse-start lithiation."""
        r_plant = float(self._r(self.m))
        v0 = float(self._voc(self.m, self.n))
        taus = np.concatenate(
            ([STEP_EPSILON_S], np.arange(sample_dt, duration + 1e-9, sample_dt))
        )
        w = np.interp(taus, PULSE_RESPONSE_TIMES, PULSE_RESPONSE_WEIGHTS)
        vs = v0 + i_a * r_plant * w
        ts = self.t + taus
        kind = "pulse_charge" if i_a > 0 else "pulse_discharge"
        self._push(kind, ts, np.full_like(ts, i_a), vs)
        dm = i_a * duration / 3600.0
        self.t = float(ts[-1])
        self.m -= dm
        self.n += dm
        return r_plant

    # -- protocol execution ----------------------------------------------

    def run_protocol(self, steps: Sequence[ProtocolStep], dt):
        for step in steps:
            if step.kind == "cc_charge":
                self.run_cc(step.c_rate * self.i_1c, target_v=step.target_v, dt=dt)
            elif step.kind == "cc_discharge":
                self.run_cc(-step.c_rate * self.i_1c, target_v=step.target_v, dt=dt)
            elif step.kind == "cv_hold":
                self.run_cv(step.target_v, step.cut_c_rate * self.i_1c, dt=dt)
            elif step.kind == "rest":
                self.run_rest(step.duration_s, dt=max(dt, 60.0))
            self.advance_step_counters(step.kind)

    # -- assembly ----------------------------------------------------------

    def assemble(self) -> tuple[CyclerTimeSeries, list[tuple[str, int, int]]]:
        """Concatenate blocks into a canonical frame; returns the series and
        (kind, start_row, stop_row) spans for ground-truth windows."""
        import pandas as pd

        if not self.blocks:
            raise ConfigError("nothing was simulated")
        t = np.concatenate([b.t for b in self.blocks])
        i = np.concatenate([b.i for b in self.blocks])
        v = np.concatenate([b.v for b in self.blocks])
        step = np.concatenate(
            [np.full(b.t.size, b.step_index, dtype=np.int64) for b in self.blocks]
        )
        cyc = np.concatenate(
            [np.full(b.t.size, b.cycle_index, dtype=np.int64) for b in self.blocks]
        )
        rng = np.random.default_rng(self.spec.seed)
        if self.spec.noise.voltage_sd > 0:
            v = v + rng.normal(0.0, self.spec.noise.voltage_sd, v.size)
        if self.spec.noise.current_sd > 0:
            i = i + rng.normal(0.0, self.spec.noise.current_sd, i.size)
        q_c = cumulative_trapezoid(np.clip(i, 0.0, None), t, initial=0.0) / 3600.0
        q_d = cumulative_trapezoid(np.clip(-i, 0.0, None), t, initial=0.0) / 3600.0
        frame = pd.DataFrame(
            {
                "test_time_s": t,
                "cycle_index": cyc,
                "step_index": step,
                "current_a": i,
                "voltage_v": v,
                "charge_capacity_ah": q_c,
                "discharge_capacity_ah": q_d,
                "temperature_c": np.full(t.size, 25.0),
            }
        )[list(CANONICAL_COLUMNS)]
        spans = []
        row = 0
        for b in self.blocks:
            spans.append((b.kind, row, row + b.t.size))
            row += b.t.size
        return CyclerTimeSeries(frame=frame, rejected_rows=0, source="synthetic"), spans


def _window_capacity(series: CyclerTimeSeries, start: int, stop: int) -> float:
    t = series.time[start:stop]
    i = series.current[start:stop]
    return float(np.trapezoid(np.abs(i), t)) / 3600.0


# -- formation ------------------------------------------------------------


@dataclass
class FormationOutput:
    series: CyclerTimeSeries
    truth: FormationFeatures
    sei_loss_planted: float
    protocol: str
    alignment: ElectrodeAlignment
    seated_lithium_ah: float

    def truth_to_json(self, path=None):
        payload = {
            "q_c_ah": self.truth.q_c,
            "q_d_ah": self.truth.q_d,
            "q_lli_ah": self.truth.q_lli,
            "ce_f": self.truth.ce_f,
            "sei_loss_planted_ah": self.sei_loss_planted,
            "protocol": self.protocol,
        }
        text = json.dumps(payload, indent=2, sort_keys=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _resolve_protocol(protocol) -> tuple[str, tuple]:
    if isinstance(protocol, str):
        if protocol not in _PROTOCOLS:
            raise ConfigError(
                f"unknown protocol {protocol!r}; expected one of {sorted(_PROTOCOLS)}"
            )
        return protocol, _PROTOCOLS[protocol]()
    steps = tuple(protocol)
    if not steps or not all(isinstance(s, ProtocolStep) for s in steps):
        raise ConfigError("protocol must be a name or a sequence of ProtocolStep")
    return "custom", steps


def generate_formation(
    spec: SynthCellSpec,
    protocol="baseline",
    dt_s: float = 10.0,
    curves: CurveSet | None = None,
    v_limits=DEFAULT_V_LIMITS,
) -> FormationOutput:
    """Simulate a formation protocol and attach trapezoid-defined truth.

    The cell is seated so that the final discharge of the protocol returns
    it exactly to its starting lithium split, which makes the first-charge /
    final-discharge capacity difference equal the planted loss.
    """
    name, steps = _resolve_protocol(protocol)
    discharges = [s for s in steps if s.kind == "cc_discharge"]
    if not discharges:
        raise ConfigError("formation protocol needs at least one discharge")
    final = discharges[-1]

    sim = _Simulator(spec, curves)
    seated = sim.seat_at_voltage(final.target_v, -final.c_rate * sim.i_1c)
    sim.run_protocol(steps, dt_s)
    if sim.sei > 1e-12:
        warnings.warn(
            f"{sim.sei:.4f} Ah of the planted first-charge loss was never "
            "consumed; protocol too shallow for this spec",
            stacklevel=2,
        )
    series, spans = sim.assemble()

    first_dis = next(k for k, (kind, _, _) in enumerate(spans) if kind == "cc_discharge")
    final_dis = max(k for k, (kind, _, _) in enumerate(spans) if kind == "cc_discharge")
    q_c = _window_capacity(series, 0, spans[first_dis][1])
    q_d = _window_capacity(series, spans[final_dis][1], spans[final_dis][2])
    truth = FormationFeatures(q_c=q_c, q_d=q_d, q_lli=q_c - q_d, ce_f=q_d / q_c)
    return FormationOutput(
        series=series,
        truth=truth,
        sei_loss_planted=spec.sei_loss_formation,
        protocol=name,
        alignment=spec.alignment_truth,
        seated_lithium_ah=seated,
    )


# -- reference pulse sequence ----------------------------------------------


@dataclass(frozen=True)
class HppcPulseTruth:
    soc: float
    direction: str
    resistance_ohm: float


@dataclass
class HppcTruth:
    reference_capacity_ah: float
    low_soc_resistance_ohm: float
    soc_points: tuple
    pulses: list[HppcPulseTruth]

    def to_json(self, path=None):
        payload = {
            "reference_capacity_ah": self.reference_capacity_ah,
            "low_soc_resistance_ohm": self.low_soc_resistance_ohm,
            "soc_points": list(self.soc_points),
            "pulses": [
                {"soc": p.soc, "direction": p.direction, "resistance_ohm": p.resistance_ohm}
                for p in self.pulses
            ],
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


@dataclass
class HppcOutput:
    series: CyclerTimeSeries
    truth: HppcTruth


def generate_hppc(
    spec: SynthCellSpec,
    soc_points=DEFAULT_SOC_POINTS,
    *,
    dt_s: float = 10.0,
    reference_dt_s: float = 30.0,
    pulse_c_rate: float = 1.0,
    pulse_duration_s: float = 10.0,
    rest_s: float = 600.0,
    charge_c_rate: float = 1.0 / 3.0,
    cut_c_rate: float = 0.01,
    curves: CurveSet | None = None,
    v_limits=DEFAULT_V_LIMITS,
) -> HppcOutput:
    """Full reference discharge, then a pulse pair at each ascending SOC.

    The planted resistance of every pulse is the truth model evaluated at the
    pulse-start lithiation; the pulse voltage transient develops the standard
    1 s / 5 s / 10 s fractions of it, so extraction recovers the model.
    """
    pts = tuple(float(s) for s in soc_points)
    if not pts or any(not (0.0 < s < 1.0) for s in pts):
        raise ConfigError("soc_points must lie strictly inside (0, 1)")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise ConfigError("soc_points must be strictly increasing")

    lo, hi = v_limits
    sim = _Simulator(spec, curves)
    # Post-formation cell: no side reaction remains.
    q_li = sim.q_li_post
    m_lo, m_hi = sim._m_bounds(q_li)
    i_cut = cut_c_rate * sim.i_1c
    g_top = lambda m: float(sim._voc(m, q_li - m)) + i_cut * float(sim._r(m)) - hi
    m_top = brentq(g_top, m_lo, m_hi, xtol=1e-14, rtol=8.9e-16)
    sim.m = m_top
    sim.n = q_li - m_top
    sim.sei = 0.0

    i_c20 = sim.i_1c / 20.0
    sim.run_cc(-i_c20, target_v=lo, dt=reference_dt_s)
    sim.advance_step_counters("cc_discharge")
    # Trapezoid capacity of the reference discharge, the same number the
    # extractor will divide by.
    q_ref = float(
        np.trapezoid(np.abs(sim.blocks[-1].i), sim.blocks[-1].t)
    ) / 3600.0
    m_bot = sim.m

    sim.run_rest(rest_s, dt=max(dt_s, 60.0))
    sim.advance_step_counters("rest")

    i_pulse = pulse_c_rate * sim.i_1c
    i_charge = charge_c_rate * sim.i_1c
    pulses: list[HppcPulseTruth] = []
    for s in pts:
        target_m = m_bot - s * q_ref
        if not m_lo < target_m < m_hi:
            raise ConfigError(f"SOC point {s} is outside the feasible window")
        sim.run_cc(i_charge, target_m=target_m, dt=dt_s)
        sim.advance_step_counters("cc_charge")
        sim.run_rest(rest_s, dt=max(dt_s, 60.0))
        sim.advance_step_counters("rest")
        # Each pulse's truth row carries the SOC the cell is actually at when
        # the pulse fires; the charge pulse sits one pulse's throughput lower.
        soc_here = (m_bot - sim.m) / q_ref
        r = sim.run_pulse(-i_pulse, duration=pulse_duration_s)
        pulses.append(
            HppcPulseTruth(soc=soc_here, direction="discharge", resistance_ohm=r)
        )
        sim.advance_step_counters("pulse_discharge")
        sim.run_rest(rest_s, dt=max(dt_s, 60.0))
        sim.advance_step_counters("rest")
        soc_here = (m_bot - sim.m) / q_ref
        r = sim.run_pulse(i_pulse, duration=pulse_duration_s)
        pulses.append(
            HppcPulseTruth(soc=soc_here, direction="charge", resistance_ohm=r)
        )
        sim.advance_step_counters("pulse_charge")
        sim.run_rest(rest_s, dt=max(dt_s, 60.0))
        sim.advance_step_counters("rest")

    series, _ = sim.assemble()
    r_ls = spec.rmodel_truth.full_resistance((m_bot - 0.05 * q_ref) / sim.c_pe)
    truth = HppcTruth(
        reference_capacity_ah=q_ref,
        low_soc_resistance_ohm=float(r_ls),
        soc_points=pts,
        pulses=pulses,
    )
    return HppcOutput(series=series, truth=truth)


def model_low_soc_resistance(
    alignment: ElectrodeAlignment,
    rmodel: ResistanceModel,
    soc: float = 0.05,
    *,
    nominal_capacity_ah: float = 2.3,
    cut_c_rate: float = 0.01,
    reference_c_rate: float = 0.05,
    curves: CurveSet | None = None,
    v_limits=DEFAULT_V_LIMITS,
) -> float:
    """Model-side low-SOC resistance: what an ideal slow-rate reference test
    followed by interpolation-free evaluation at `soc` would report."""
    cv = curves or reference_curves()
    lo, hi = v_limits
    c_pe, c_ne = alignment.c_pe, alignment.c_ne
    q_li = alignment.lithium_inventory()
    m_lo = max(_STOICH_MARGIN * c_pe, q_li - (1 - _STOICH_MARGIN) * c_ne)
    m_hi = min((1 - _STOICH_MARGIN) * c_pe, q_li - _STOICH_MARGIN * c_ne)

    def voc(m):
        return float(
            cv.positive.potential_at(m / c_pe) - cv.negative.potential_at((q_li - m) / c_ne)
        )

    def r_of(m):
        return float(rmodel.full_resistance(m / c_pe))

    i_cut = cut_c_rate * nominal_capacity_ah
    i_ref = reference_c_rate * nominal_capacity_ah
    m_top = brentq(lambda m: voc(m) + i_cut * r_of(m) - hi, m_lo, m_hi, xtol=1e-14)
    m_bot = brentq(lambda m: voc(m) - i_ref * r_of(m) - lo, m_lo, m_hi, xtol=1e-14)
    q_ref = m_bot - m_top
    if q_ref <= 0:
        raise DomainError("reference window collapsed; check the alignment")
    return float(rmodel.full_resistance((m_bot - soc * q_ref) / c_pe))


# -- fleet -----------------------------------------------------------------


@dataclass(frozen=True)
class FleetConfig:
    """Two-group synthetic fleet with a planted first-charge-loss offset and
    a planted monotone map from low-SOC resistance to knee cycle."""

    n_baseline: int = 19
    n_fast: int = 20
    seed: int = 16
    sei_baseline_mean_ah: float = 0.346
    sei_offset_ah: float = 0.023
    sei_baseline_sd_ah: float = 0.027
    sei_fast_sd_ah: float = 0.035
    sei_clamp_ah: tuple = (0.25, 0.48)
    knee_ref_cycle: float = 450.0
    knee_per_ohm: float = -12700.0
    knee_noise_frac: float = 0.02
    plateau_rate: float = 1e-4
    post_knee_rate: float = 0.0171875
    max_cycles: int = 1000
    retention_levels: tuple = (0.5, 0.6, 0.7, 0.8)
    hppc_soc_points: tuple = (0.02, 0.04, 0.08, 0.12)
    dt_s: float = 30.0

    def __post_init__(self):
        if self.n_baseline + self.n_fast < 4:
            raise ConfigError("fleet needs at least 4 cells")
        if self.n_baseline < 2 or self.n_fast < 2:
            raise ConfigError("each group needs at least 2 cells")
        if self.sei_baseline_sd_ah < 0 or self.sei_fast_sd_ah < 0:
            raise ConfigError("group spreads must be non-negative")
        if not self.sei_clamp_ah[0] < self.sei_clamp_ah[1]:
            raise ConfigError("sei_clamp_ah must be an increasing pair")


@dataclass(frozen=True)
class FleetCellTruth:
    cell_id: str
    group: str
    sei_loss_ah: float
    lithium_inventory_ah: float
    low_soc_resistance_ohm: float
    knee_cycle: float
    cycles_to_70pct: float


@dataclass
class FleetResult:
    records: list[FeatureRecord]
    truth: list[FleetCellTruth]
    config: FleetConfig

    def group_values(self, attribute: str, group: str) -> np.ndarray:
        out = []
        for rec in self.records:
            if rec.group != group:
                continue
            if attribute == "q_lli_ah":
                out.append(rec.formation.q_lli)
            elif attribute == "ce_f":
                out.append(rec.formation.ce_f)
            elif attribute == "r_ls_ohm":
                out.append(rec.r_ls_ohm)
            else:
                raise ConfigError(f"unknown fleet attribute {attribute!r}")
        return np.asarray(out, dtype=float)

    def life_values(self, retention: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
        """(values, censored flags) for the whole fleet in record order."""
        vals, cens = [], []
        for rec in self.records:
            o = rec.life_at(retention)
            if o is None:
                raise ConfigError(f"no life outcome at retention {retention}")
            vals.append(o.cycles)
            cens.append(o.censored)
        return np.asarray(vals), np.asarray(cens)

    def dataset(self, feature_names=("q_lli_ah", "ce_f", "r_ls_ohm"), retention=0.7):
        from .predict import Dataset

        life, cens = self.life_values(retention)
        keep = ~cens
        if not np.all(keep):
            warnings.warn(
                f"{int(np.sum(cens))} censored cells excluded from the dataset",
                stacklevel=2,
            )
        cols = []
        for name in feature_names:
            col = []
            for rec, k in zip(self.records, keep):
                if not k:
                    continue
                if name == "q_lli_ah":
                    col.append(rec.formation.q_lli)
                elif name == "q_c_ah":
                    col.append(rec.formation.q_c)
                elif name == "q_d_ah":
                    col.append(rec.formation.q_d)
                elif name == "ce_f":
                    col.append(rec.formation.ce_f)
                elif name == "r_ls_ohm":
                    col.append(rec.r_ls_ohm)
                else:
                    raise ConfigError(f"unknown feature {name!r}")
            cols.append(col)
        x = np.asarray(cols, dtype=float).T
        return Dataset(
            features=x,
            target=life[keep],
            feature_names=tuple(feature_names),
            cell_ids=tuple(
                rec.cell_id for rec, k in zip(self.records, keep) if k
            ),
            target_name=f"cycles_to_{int(round(retention * 100))}",
        )

    def truth_to_json(self, path=None):
        payload = [
            {
                "cell_id": t.cell_id,
                "group": t.group,
                "sei_loss_ah": t.sei_loss_ah,
                "lithium_inventory_ah": t.lithium_inventory_ah,
                "low_soc_resistance_ohm": t.low_soc_resistance_ohm,
                "knee_cycle": t.knee_cycle,
                "cycles_to_70pct": t.cycles_to_70pct,
            }
            for t in self.truth
        ]
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def generate_fleet(
    config: FleetConfig | None = None,
    curves: CurveSet | None = None,
    *,
    sink=None,
) -> FleetResult:
    """Simulate a two-group fleet through the full pipeline.

    Both features and outcomes come from generated records processed by the
    real ingest / feature / pulse-extraction code, not from the planted
    numbers directly.

    sink, when given, is called once per cell as
    sink(cell_id, formation_output, hppc_output, cycle_numbers, capacities_ah)
    so callers can persist the raw series without a second simulation pass.
    """
    cfg = config or FleetConfig()
    cv = curves or reference_curves()
    rng = np.random.default_rng(cfg.seed)
    n_total = cfg.n_baseline + cfg.n_fast
    groups = ["baseline"] * cfg.n_baseline + ["fast"] * cfg.n_fast
    means = np.where(
        np.arange(n_total) < cfg.n_baseline,
        cfg.sei_baseline_mean_ah,
        cfg.sei_baseline_mean_ah + cfg.sei_offset_ah,
    )
    sds = np.where(
        np.arange(n_total) < cfg.n_baseline, cfg.sei_baseline_sd_ah, cfg.sei_fast_sd_ah
    )
    sei = np.clip(rng.normal(means, sds), *cfg.sei_clamp_ah)
    knee_noise = rng.normal(0.0, 1.0, n_total)

    anchor_alignment = default_alignment(cv)
    rmodel = default_resistance_model(anchor_alignment, cv)
    q_li_anchor = anchor_alignment.lithium_inventory()
    sei_anchor = cfg.sei_baseline_mean_ah
    r_anchor = model_low_soc_resistance(anchor_alignment, rmodel, curves=cv)

    records: list[FeatureRecord] = []
    truths: list[FleetCellTruth] = []
    group_counter = {"baseline": 0, "fast": 0}
    for idx in range(n_total):
        group = groups[idx]
        group_counter[group] += 1
        cell_id = f"{group}-{group_counter[group]:02d}"
        q_li_post = q_li_anchor + sei_anchor - float(sei[idx])
        alignment = solve_alignment_from_inventory(
            q_li_post, anchor_alignment.c_pe, anchor_alignment.c_ne, curves=cv
        )
        r_truth = model_low_soc_resistance(alignment, rmodel, curves=cv)
        knee = cfg.knee_ref_cycle + cfg.knee_per_ohm * (r_truth - r_anchor)
        knee = max(knee, 60.0) * (1.0 + cfg.knee_noise_frac * float(knee_noise[idx]))
        fade = FadeModel(
            plateau_rate=cfg.plateau_rate,
            knee_cycle=knee,
            post_knee_rate=cfg.post_knee_rate,
        )
        spec = SynthCellSpec(
            alignment_truth=alignment,
            rmodel_truth=rmodel,
            sei_loss_formation=float(sei[idx]),
            fade=fade,
            nominal_capacity_ah=2.3,
            seed=cfg.seed + idx,
        )

        form = generate_formation(spec, protocol=group, dt_s=cfg.dt_s, curves=cv)
        feats = formation_features(form.series)
        hp = generate_hppc(
            spec, soc_points=cfg.hppc_soc_points, dt_s=cfg.dt_s, curves=cv
        )
        profile = extract_pulses(hp.series, ExtractConfig(cell_id=cell_id))
        r_ls = resistance_at_soc(profile, 0.05, duration=10.0, direction="discharge")

        cycles = np.arange(1, cfg.max_cycles + 1, dtype=float)
        caps = feats.q_d * fade.retention(cycles)
        life = [
            cycle_life(cycles, caps, retention=level)
            for level in cfg.retention_levels
        ]
        if sink is not None:
            sink(cell_id, form, hp, cycles, caps)
        records.append(
            FeatureRecord(
                cell_id=cell_id,
                group=group,
                formation=feats,
                r_ls_ohm=float(r_ls),
                life=life,
            )
        )
        truths.append(
            FleetCellTruth(
                cell_id=cell_id,
                group=group,
                sei_loss_ah=float(sei[idx]),
                lithium_inventory_ah=q_li_post,
                low_soc_resistance_ohm=float(r_truth),
                knee_cycle=float(knee),
                cycles_to_70pct=fade.cycles_to_retention(0.7),
            )
        )
    return FleetResult(records=records, truth=truths, config=cfg)
