"""Mechanistic stoichiometry-shift engine: inventory shifts, material loss,
resistance partitioning, sensitivities, and reaction kinetics.

The sensitivity oracle splits the chain rule: the outer resistance derivative
comes from sympy's symbolic differentiation, the inner window response from a
Richardson-extrapolated fine difference, two orders of magnitude finer than
the step the module uses.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import sympy

from formationbench.errors import (
    BoundaryError,
    ConfigError,
    DomainError,
    ValidationError,
)
from formationbench.stoichsim import (
    ButlerVolmerParams,
    ResistanceModel,
    apply_lam,
    bv_flux,
    default_resistance_model,
    fpos_sweep,
    fpos_table_to_csv,
    lithium_inventory,
    predicted_resistance_profile,
    rescale_fpos,
    rls_sensitivity,
    sensitivity_to_csv,
    shift_lithium_inventory,
    solve_alignment_from_inventory,
)

# Frozen sensitivities of the default calibrated model at 2/5/8% SOC, ohm/Ah,
# and the capacity response in Ah/Ah.
FROZEN_DR_DQLLI = (-0.2714451, -0.2149647, -0.1726969)
FROZEN_DQD_DQLLI = -0.9346


def test_lithium_inventory_formula(alignment):
    want = alignment.c_pe * alignment.y_100 + alignment.c_ne * alignment.x_100
    assert lithium_inventory(alignment) == pytest.approx(want, abs=1e-12)
    assert alignment.lithium_inventory() == lithium_inventory(alignment)


def test_solve_from_inventory_round_trip(alignment, curves):
    solved = solve_alignment_from_inventory(
        lithium_inventory(alignment), alignment.c_pe, alignment.c_ne, curves=curves
    )
    assert solved.y_0 == pytest.approx(alignment.y_0, abs=1e-9)
    assert solved.x_100 == pytest.approx(alignment.x_100, abs=1e-9)
    assert solved.q_full == pytest.approx(alignment.q_full, abs=1e-8)


def test_shift_zero_is_identity(alignment, curves):
    shifted = shift_lithium_inventory(alignment, 0.0, curves=curves)
    assert shifted.q_full == alignment.q_full
    assert shifted.y_0 == alignment.y_0
    assert shifted.x_0 == alignment.x_0


def test_shift_rejects_negative_and_exhaustion(alignment, curves):
    with pytest.raises(DomainError):
        shift_lithium_inventory(alignment, -0.01, curves=curves)
    with pytest.raises(DomainError):
        shift_lithium_inventory(alignment, 50.0, curves=curves)


def test_shift_removes_exactly_that_inventory(alignment, curves):
    shifted = shift_lithium_inventory(alignment, 0.1, curves=curves)
    assert lithium_inventory(alignment) - lithium_inventory(shifted) == pytest.approx(
        0.1, abs=1e-9
    )
    # Electrode capacities are untouched; only the windows move.
    assert shifted.c_pe == alignment.c_pe
    assert shifted.c_ne == alignment.c_ne


def test_shift_capacity_response_band(alignment, curves):
    shifted = shift_lithium_inventory(alignment, 0.1, curves=curves)
    drop = alignment.q_full - shifted.q_full
    assert drop > 0
    assert 0.8 <= drop / 0.1 <= 1.0


def test_shift_lowers_low_soc_resistance(alignment, curves, rmodel):
    shifted = shift_lithium_inventory(alignment, 0.023, curves=curves)
    for soc in (0.02, 0.05, 0.08, 0.10):
        r_base = rmodel.full_resistance(alignment.y_at(soc * alignment.q_full))
        r_after = rmodel.full_resistance(shifted.y_at(soc * shifted.q_full))
        assert r_after < r_base


def test_shift_leaves_high_soc_resistance(alignment, curves, rmodel):
    r_base = rmodel.full_resistance(alignment.y_at(0.9 * alignment.q_full))
    for delta in (0.01, 0.05, 0.1):
        shifted = shift_lithium_inventory(alignment, delta, curves=curves)
        r_after = rmodel.full_resistance(shifted.y_at(0.9 * shifted.q_full))
        assert abs(r_after - r_base) / r_base < 0.01


def test_apply_lam_identity_at_zero(alignment, curves):
    out = apply_lam(alignment, "positive", "lithiated", 0.0, curves=curves)
    assert out.c_pe == alignment.c_pe
    assert out.q_full == pytest.approx(alignment.q_full, abs=1e-9)


def test_apply_lam_validates_arguments(alignment, curves):
    with pytest.raises(ValidationError):
        apply_lam(alignment, "sideways", "lithiated", 0.1, curves=curves)
    with pytest.raises(ValidationError):
        apply_lam(alignment, "positive", "solid", 0.1, curves=curves)
    with pytest.raises(ValidationError):
        apply_lam(alignment, "positive", "lithiated", 0.75, curves=curves)


def test_apply_lam_scales_capacity(alignment, curves):
    out = apply_lam(alignment, "positive", "delithiated", 0.15, curves=curves)
    assert out.c_pe == pytest.approx(0.85 * alignment.c_pe, rel=1e-12)
    assert out.c_ne == alignment.c_ne
    out = apply_lam(alignment, "negative", "lithiated", 0.15, curves=curves)
    assert out.c_ne == pytest.approx(0.85 * alignment.c_ne, rel=1e-12)
    assert out.c_pe == alignment.c_pe


def lam_responses(alignment, curves, rmodel, fraction=0.15):
    """(dR_LS, dQ_d) for the four loss cases at the given fraction."""

    def r_ls(al):
        return rmodel.full_resistance(al.y_at(0.05 * al.q_full))

    r0, q0 = r_ls(alignment), alignment.q_full
    out = {}
    for electrode in ("positive", "negative"):
        for phase in ("lithiated", "delithiated"):
            al = apply_lam(alignment, electrode, phase, fraction, curves=curves)
            out[(electrode, phase)] = (r_ls(al) - r0, al.q_full - q0)
    return out, r0, q0


def test_material_loss_sign_matrix(alignment, curves, rmodel):
    # Resistance responds to losses that pull the positive electrode fuller
    # at the bottom of discharge; capacity responds to lithiated-phase losses.
    resp, r0, q0 = lam_responses(alignment, curves, rmodel)
    dr_pe_del, dq_pe_del = resp[("positive", "delithiated")]
    dr_pe_lit, dq_pe_lit = resp[("positive", "lithiated")]
    dr_ne_lit, dq_ne_lit = resp[("negative", "lithiated")]
    dr_ne_del, dq_ne_del = resp[("negative", "delithiated")]

    assert dr_pe_del > 0
    assert abs(dq_pe_del) / q0 < 0.01

    assert dq_pe_lit < -0.05 * q0
    assert abs(dr_pe_lit) < 0.10 * abs(dr_pe_del)

    assert dr_ne_lit < 0
    assert dq_ne_lit < -0.05 * q0

    assert abs(dr_ne_del) < 0.10 * abs(dr_pe_del)
    assert abs(dq_ne_del) / q0 < 0.01


def test_resistance_profile_flat_when_positive_share_zero(alignment):
    flat = ResistanceModel(r0=0.0, k=0.0, p=1.0, r_other=0.0236, f_pos=0.0, r_ref=0.0236)
    q, r = predicted_resistance_profile(alignment, flat)
    assert np.allclose(r, 0.0236, rtol=0, atol=1e-15)


def test_resistance_profile_rises_toward_empty(alignment, rmodel):
    q, r = predicted_resistance_profile(alignment, rmodel)
    assert np.all(np.diff(r) <= 1e-15)
    assert r[0] > r[-1]


def test_default_model_hits_calibration_anchors(alignment, rmodel):
    r_5 = rmodel.full_resistance(alignment.y_at(0.05 * alignment.q_full))
    r_90 = rmodel.full_resistance(alignment.y_at(0.90 * alignment.q_full))
    assert r_5 == pytest.approx(0.1397, abs=1e-9)
    assert r_90 == pytest.approx(0.0236, abs=1e-9)


def test_resistance_model_json_round_trip(tmp_path, rmodel):
    path = tmp_path / "model.json"
    rmodel.to_json(path)
    loaded = ResistanceModel.from_json(path)
    assert loaded == rmodel


def test_resistance_model_validates_partition():
    with pytest.raises(ValidationError):
        ResistanceModel(r0=0.0, k=0.01, p=1.5, r_other=0.5, f_pos=0.7, r_ref=0.0236)


def test_sensitivity_frozen_defaults(alignment, rmodel, curves):
    report = rls_sensitivity(alignment, rmodel, curves=curves)
    assert report.soc_setpoints == (0.02, 0.05, 0.08)
    for got, want in zip(report.dr_dqlli, FROZEN_DR_DQLLI):
        assert got == pytest.approx(want, abs=1e-6)
    assert report.dqd_dqlli == pytest.approx(FROZEN_DQD_DQLLI, abs=5e-4)
    assert 0.8 <= -report.dqd_dqlli <= 1.0


def test_sensitivity_magnitude_grows_at_lower_soc(alignment, rmodel, curves):
    report = rls_sensitivity(alignment, rmodel, curves=curves)
    mags = [abs(v) for v in report.dr_dqlli]
    assert mags[0] > mags[1] > mags[2]
    assert all(v < 0 for v in report.dr_dqlli)


def test_sensitivity_zero_span_grid(alignment, rmodel, curves):
    report = rls_sensitivity(
        alignment, rmodel, qlli_grid=[0.0, 0.0, 0.0], curves=curves
    )
    assert report.dr_dqlli == (0.0, 0.0, 0.0)
    assert report.dqd_dqlli == 0.0


def test_sensitivity_rejects_coarse_grid(alignment, rmodel, curves):
    with pytest.raises(ConfigError):
        rls_sensitivity(alignment, rmodel, qlli_grid=[0.0, 1e-3], curves=curves)


def test_sensitivity_toy_model_matches_symbolic_chain(alignment, curves):
    # Outer factor dR/dy from sympy; inner window response by Richardson
    # extrapolation at h and h/2. The module's coarser central difference
    # must agree with the product to high relative accuracy.
    toy = ResistanceModel(r0=0.0, k=1.0, p=1.0, r_other=0.0, f_pos=1.0, r_ref=0.1)
    soc = 0.05
    grid = np.linspace(0.0, 1e-3, 5)
    report = rls_sensitivity(
        alignment, toy, soc_setpoints=[soc], qlli_grid=grid, curves=curves
    )
    delta_star = float(grid[len(grid) // 2])

    y_sym = sympy.Symbol("y")
    dr_dy_expr = sympy.diff((1 - y_sym) ** -1, y_sym)
    q_li0 = lithium_inventory(alignment)

    def y_of_delta(delta):
        al = solve_alignment_from_inventory(
            q_li0 - delta, alignment.c_pe, alignment.c_ne, curves=curves
        )
        return al.y_at(soc * al.q_full), al.q_full

    def richardson(f, x, h):
        d1 = (f(x + h) - f(x - h)) / (2.0 * h)
        d2 = (f(x + h / 2) - f(x - h / 2)) / h
        return (4.0 * d2 - d1) / 3.0

    h = 1e-4
    y_star, _ = y_of_delta(delta_star)
    dy_ddelta = richardson(lambda d: y_of_delta(d)[0], delta_star, h)
    dqd_ddelta = richardson(lambda d: y_of_delta(d)[1], delta_star, h)
    want = float(dr_dy_expr.subs(y_sym, y_star)) * dy_ddelta

    assert report.dr_dqlli[0] == pytest.approx(want, rel=1e-6)
    assert report.dqd_dqlli == pytest.approx(dqd_ddelta, rel=1e-6)


def test_fpos_rescale_preserves_reference_total(rmodel):
    for f in (0.0, 0.25, 0.5, 1.0):
        scaled = rescale_fpos(rmodel, f)
        assert scaled.f_pos == f
        assert scaled.r_other == pytest.approx((1 - f) * rmodel.r_ref, abs=1e-15)
        assert scaled.r_ref == rmodel.r_ref


def test_fpos_sweep_monotone_and_anchored(alignment, rmodel, curves):
    rows = fpos_sweep(alignment, rmodel, [0.0, 0.25, 0.5, 0.7, 1.0], curves=curves)
    mags = [abs(r.dr_dqlli) for r in rows]
    assert mags == sorted(mags)
    assert rows[0].dr_dqlli == 0.0
    assert rows[0].normalized == 0.0
    assert rows[-1].normalized == pytest.approx(1.0, abs=1e-12)
    by_f = {r.f_pos: r for r in rows}
    assert by_f[0.25].normalized < 0.5


def test_sweep_csv_emitters(tmp_path, alignment, rmodel, curves):
    report = rls_sensitivity(alignment, rmodel, curves=curves)
    p1 = tmp_path / "sens.csv"
    sensitivity_to_csv(report, p1)
    assert p1.read_text().count("\n") >= 2
    rows = fpos_sweep(alignment, rmodel, [0.5, 1.0], curves=curves)
    p2 = tmp_path / "fpos.csv"
    fpos_table_to_csv(rows, p2)
    assert "f_pos" in p2.read_text().splitlines()[0]


def test_bv_flux_zero_at_equilibrium():
    params = ButlerVolmerParams(k0=2e-6, c_e=1000.0, c_s_max=50000.0)
    assert bv_flux(params, 25000.0, 0.0) == 0.0


def test_bv_flux_antisymmetric_at_half_alpha():
    params = ButlerVolmerParams(k0=2e-6, c_e=1000.0, c_s_max=50000.0, alpha=0.5)
    for eta in (0.01, 0.05, 0.2):
        assert bv_flux(params, 25000.0, eta) == pytest.approx(
            -bv_flux(params, 25000.0, -eta), rel=1e-12
        )


def test_bv_flux_strictly_increasing_in_overpotential():
    params = ButlerVolmerParams(k0=2e-6, c_e=1000.0, c_s_max=50000.0, alpha=0.35)
    etas = np.linspace(-0.3, 0.3, 41)
    vals = [bv_flux(params, 30000.0, float(e)) for e in etas]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_bv_flux_boundary_concentrations():
    params = ButlerVolmerParams(k0=2e-6, c_e=1000.0, c_s_max=50000.0)
    with pytest.raises(BoundaryError):
        bv_flux(params, 0.0, 0.05)
    with pytest.raises(BoundaryError):
        bv_flux(params, 50000.0, 0.05)


def test_bv_flux_matches_high_precision_formula():
    import mpmath

    mpmath.mp.dps = 50
    k0, c_e, c_s_max, alpha, temp = 2e-6, 1200.0, 51554.0, 0.45, 298.15
    c_se, eta = 23456.0, 0.05
    params = ButlerVolmerParams(
        k0=k0, c_e=c_e, c_s_max=c_s_max, alpha=alpha, temperature=temp
    )
    F = mpmath.mpf(params.faraday_constant)
    R = mpmath.mpf(params.gas_constant)
    a = mpmath.mpf(alpha)
    pre = (
        mpmath.mpf(k0)
        * mpmath.mpf(c_e) ** (1 - a)
        * (mpmath.mpf(c_s_max) - mpmath.mpf(c_se)) ** (1 - a)
        * mpmath.mpf(c_se) ** a
    )
    f = F * mpmath.mpf(eta) / (R * mpmath.mpf(temp))
    want = pre * (mpmath.e ** ((1 - a) * f) - mpmath.e ** (-a * f))
    got = bv_flux(params, c_se, eta)
    assert got == pytest.approx(float(want), rel=1e-12)
