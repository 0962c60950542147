import math

import numpy as np
import pytest

from takeover.core.rng import RngStream
from takeover.domain.cf_models import (
    HDV_KINDS,
    ActuatorState,
    CfController,
    CfKind,
    CfSpec,
    cf_accel,
    equilibrium_gap,
    hl_accel,
    idm_pid_accel,
    idm_pid_preset,
    optimal_velocity_inverse,
)
from takeover.errors import CollisionStateError, EquilibriumError, InvalidParameterError
from takeover.services.metrics import disturbance_profile
from takeover.services.platoon import PlatoonConfig, pulse_profile, run

IDM = CfSpec(CfKind.IDM, {"v0": 33.3, "T": 1.6, "s0": 2.0, "a": 1.5, "b": 2.0, "delta": 4.0})
OVM = CfSpec(CfKind.OVM, {"kappa": 0.6, "V1": 6.75, "V2": 7.91, "C1": 0.13, "C2": 1.57})


def hl(k_s, k_v, h, c1=0.0, c2=0.0, s0=2.0):
    coeffs = (c1, c2) if (c1 or c2) else ()
    return CfSpec(CfKind.HL, {"s0": s0, "h": h, "k_s": k_s, "k_v": k_v, "order": len(coeffs)}, coeffs=coeffs)


# --- human-driver laws ---------------------------------------------------------

def test_idm_equilibrium_gap_closed_form():
    # s* = 2 + 26.2 * 1.6 = 43.92 ; gap = s* / sqrt(1 - (26.2/33.3)^4) = 55.92
    gap = equilibrium_gap(IDM, 26.2)
    assert gap == pytest.approx(55.92, abs=0.01)
    assert cf_accel(IDM, gap, 26.2, 0.0) == pytest.approx(0.0, abs=1e-8)


def test_idm_standstill_equilibrium_is_s0():
    assert equilibrium_gap(IDM, 0.0) == pytest.approx(2.0, abs=1e-9)


def test_idm_free_road_accelerates_at_a():
    assert cf_accel(IDM, 1e4, 0.0, 0.0) == pytest.approx(1.5, abs=1e-6)


def test_ovm_fixed_point_and_free_flow():
    gap = equilibrium_gap(OVM, 10.0)
    assert gap == pytest.approx(optimal_velocity_inverse(OVM, 10.0), abs=1e-8)
    assert cf_accel(OVM, gap, 10.0, 0.0) == pytest.approx(0.0, abs=1e-8)
    # far ahead: kappa * (V1 + V2 - v) > 0
    assert cf_accel(OVM, 1e4, 10.0, 0.0) == pytest.approx(0.6 * (6.75 + 7.91 - 10.0), abs=1e-6)


def test_gfm_brakes_only_on_closing():
    gfm = CfSpec(CfKind.GFM, {"kappa": 0.6, "lam": 0.5, "V1": 6.75, "V2": 7.91, "C1": 0.13, "C2": 1.57})
    fvdm = CfSpec(CfKind.FVDM, dict(gfm.params))
    gap = equilibrium_gap(gfm, 10.0)
    assert cf_accel(gfm, gap, 10.0, 2.0) == pytest.approx(0.0, abs=1e-8)
    assert cf_accel(fvdm, gap, 10.0, 2.0) == pytest.approx(1.0, abs=1e-8)
    assert cf_accel(gfm, gap, 10.0, -2.0) == pytest.approx(-1.0, abs=1e-8)


def test_no_equilibrium_above_free_flow_speed():
    with pytest.raises(EquilibriumError):
        equilibrium_gap(IDM, 40.0)
    with pytest.raises(EquilibriumError):
        equilibrium_gap(OVM, 6.75 + 7.91)
    with pytest.raises(EquilibriumError):
        equilibrium_gap(IDM, -1.0)


def test_acceleration_is_clamped():
    assert cf_accel(IDM, 0.5, 30.0, -10.0) == IDM.a_min
    assert cf_accel(OVM, 1e4, 0.0, 0.0) == pytest.approx(min(OVM.a_max, 0.6 * 14.66))


def test_cf_inputs_are_checked():
    with pytest.raises(CollisionStateError):
        cf_accel(IDM, 0.0, 10.0, 0.0)
    with pytest.raises(InvalidParameterError):
        cf_accel(IDM, 10.0, -1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        cf_accel(IDM, math.nan, 10.0, 0.0)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        CfSpec(CfKind.IDM, {"v0": 30.0, "T": 1.5})
    with pytest.raises(InvalidParameterError):
        CfSpec(CfKind.IDM, {**IDM.params, "T": -1.0})
    with pytest.raises(InvalidParameterError):
        CfSpec(CfKind.HL, {"s0": 2.0, "h": 1.4, "k_s": 0.1, "k_v": 0.8, "order": 2}, coeffs=(0.1,))
    with pytest.raises(InvalidParameterError):
        CfSpec(CfKind.OVM, dict(OVM.params), coeffs=(0.1,))


def test_posterior_particles_are_monotone(hdv_posterior):
    gaps = [5.0, 10.0, 20.0, 40.0, 80.0]
    dvs = [-4.0, -1.0, 0.0, 1.0, 4.0]
    for kind in HDV_KINDS:
        for spec in hdv_posterior.particles[kind]:
            by_gap = [cf_accel(spec, g, 20.0, 0.0) for g in gaps]
            by_dv = [cf_accel(spec, 30.0, 20.0, dv) for dv in dvs]
            assert all(b >= a - 1e-12 for a, b in zip(by_gap, by_gap[1:])), spec
            assert all(b >= a - 1e-12 for a, b in zip(by_dv, by_dv[1:])), spec


def test_posterior_particles_hold_equilibrium(hdv_posterior, av_posterior):
    specs = [s for kind in HDV_KINDS for s in hdv_posterior.particles[kind]] + list(av_posterior.particles)
    for spec in specs:
        gap = equilibrium_gap(spec, 26.2)
        assert abs(cf_accel(spec, gap, 26.2, 0.0)) < 1e-8, spec


# --- automation baselines ------------------------------------------------------------

def test_hl_feedback_terms():
    spec = hl(0.1, 0.5, 1.4)
    v = 20.0
    base = 2.0 + 1.4 * v
    # k_s * 10 m of spacing error = 1.0 ; k_v * 1 m/s = 0.5
    assert hl_accel(spec, base + 10.0, v, 0.0) == pytest.approx(1.0)
    assert hl_accel(spec, base, v, 1.0) == pytest.approx(0.5)
    assert hl_accel(spec, base + 1000.0, v, 0.0) == spec.a_max


def test_hl_filter_uses_realized_history(hl_spec):
    gap = 2.0 + 1.4 * 26.2
    # 0.15 * 1.0 + 0.05 * 2.0 = 0.25 ; missing entries count as zero
    assert hl_accel(hl_spec, gap, 26.2, 0.0, history=(1.0, 2.0)) == pytest.approx(0.25)
    assert hl_accel(hl_spec, gap, 26.2, 0.0, history=(1.0,)) == pytest.approx(0.15)
    with pytest.raises(InvalidParameterError):
        hl_accel(IDM, 30.0, 20.0, 0.0)


def test_controller_feeds_back_realized_acceleration(hl_spec):
    ctl = CfController(hl_spec)
    gap = 2.0 + 1.4 * 26.2
    assert ctl.command(gap, 26.2, 0.0) == pytest.approx(0.0)
    ctl.observe(1.0)
    assert ctl.command(gap, 26.2, 0.0) == pytest.approx(0.15)
    ctl.observe(-2.0)
    # history is now (-2.0, 1.0)
    assert ctl.command(gap, 26.2, 0.0) == pytest.approx(-0.3 + 0.05)


def test_idm_pid_unit_gain_tracks_command_in_one_tick():
    spec = CfSpec(
        CfKind.IDM_PID,
        {"v0": 30.0, "T": 1.5, "s0": 2.0, "a": 1.0, "b": 1.5, "delta": 4.0,
         "kp": 1.0, "ki": 0.0, "kd": 0.0, "tau": 0.1, "i_max": 1.0},
    )
    command = cf_accel(spec, 1e4, 0.0, 0.0)
    a_next, state = idm_pid_accel(spec, 1e4, 0.0, 0.0, ActuatorState(), dt=0.1)
    assert a_next == pytest.approx(command)
    assert state.a_real == a_next


def test_idm_pid_settles_on_constant_command():
    spec = idm_pid_preset("conservative")
    command = cf_accel(spec, 1e4, 0.0, 0.0)
    state = ActuatorState()
    for k in range(1, 81):
        a, state = idm_pid_accel(spec, 1e4, 0.0, 0.0, state, dt=0.1)
        assert abs(state.integral) <= spec["i_max"]
        if k >= 20:
            assert abs(a - command) <= 0.05 * abs(command), k


def test_idm_pid_presets():
    assert idm_pid_preset("aggressive")["T"] < idm_pid_preset("conservative")["T"]
    assert idm_pid_preset("conservative", kp=3.0)["kp"] == 3.0
    with pytest.raises(InvalidParameterError):
        idm_pid_preset("sporty")


# --- string stability of linear feedback -------------------------------------------

STABLE_GAINS = [
    (0.1, 0.8, 1.4, 0.15, 0.05),
    (0.1, 0.8, 1.4, 0.0, 0.0),
    (0.3, 1.0, 1.6, 0.1, 0.05),
    (0.15, 0.9, 1.5, 0.1, 0.0),
    (0.12, 0.7, 1.8, 0.2, 0.05),
    (0.2, 1.2, 1.4, 0.15, 0.05),
]
UNSTABLE_GAINS = [
    (0.5, 0.2, 0.8, 0.0, 0.0),
    (0.6, 0.2, 0.8, 0.0, 0.0),
    (0.3, 0.2, 0.8, 0.0, 0.0),
    (1.0, 0.1, 0.5, 0.0, 0.0),
]


def max_transfer_gain(k_s, k_v, h, c1, c2, dt=0.1, n=20000):
    """max |G(e^jw)| of the sampled spacing-error loop, predecessor speed to own speed."""
    w = np.pi * np.arange(1, n + 1) / n
    z = np.exp(1j * w)
    filt = 1.0 - c1 / z - c2 / z**2
    num = k_s * dt + k_v * (z - 1.0)
    den = (z - 1.0) ** 2 * filt / dt + k_s * dt + (k_s * h + k_v) * (z - 1.0)
    return float(np.max(np.abs(num / den)))


def _linear_platoon_ratios(gains, hdv_posterior):
    spec = hl(*gains)
    cfg = PlatoonConfig(
        leader=pulse_profile(depth=2.0, start=20.0, duration=10.0, horizon=120.0),
        av_controller=spec,
        hdv_posterior=hdv_posterior,
        n_followers=2,
        follower_specs=(spec, spec),
        suppress_takeover=True,
    )
    rollout = run(cfg, None, RngStream(5))
    assert rollout.collisions == 0
    return disturbance_profile(rollout, 26.2).ratios()


@pytest.mark.parametrize("gains", STABLE_GAINS + UNSTABLE_GAINS)
def test_linear_string_stability_matches_frequency_response(gains, hdv_posterior):
    stable = max_transfer_gain(*gains) <= 1.0 + 1e-6
    assert stable == (gains in STABLE_GAINS)

    ratios = _linear_platoon_ratios(gains, hdv_posterior)
    if stable:
        assert np.all(ratios <= 1.02), ratios
    else:
        assert np.all(ratios > 1.02), ratios
