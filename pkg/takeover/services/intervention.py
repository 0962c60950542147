# takeover/services/intervention.py
"""
Evidence-accumulation takeover engine.

A driver in an automated vehicle compares what the automation does with what
they would have done themselves (a shadow human-driven vehicle following the
same leader). The normalized dissimilarity U drives a drift-diffusion
evidence process; crossing the threshold E_T switches the vehicle to manual
mode for the rest of the trip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from takeover.core.kinematics import DT, VEHICLE_LENGTH, Role, VehicleState, euler_step
from takeover.core.rng import RngStream, gaussian_draw
from takeover.domain.cf_models import CfSpec, cf_accel
from takeover.domain.particles import Posterior
from takeover.errors import InvalidParameterError

MIN_TTA_SPEED = 0.1  # m/s; below this remaining travel time is saturated
SHADOW_MIN_GAP = 0.1  # m


@dataclass(frozen=True)
class EaParams:
    E0: float
    d: float
    E_T: float
    w1: float
    w2: float
    w3: float
    sigma: float = 1.0
    alpha: float = 0.1
    phi_x: Tuple[float, float] = (0.0, 20.0)
    phi_v: Tuple[float, float] = (0.0, 5.0)
    phi_tta: Tuple[float, float] = (0.0, 30.0)
    D_T: float = 1350.0
    TTT_A: float = 68.0

    def __post_init__(self) -> None:
        weights = (self.w1, self.w2, self.w3)
        if any(not 0.0 <= w <= 1.0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise InvalidParameterError(f"EA weights must lie on the simplex, got {weights}")
        if self.E0 < 0 or self.d < 0:
            raise InvalidParameterError(f"E0 and d must be >= 0, got E0={self.E0} d={self.d}")
        if math.isnan(self.E_T) or math.isnan(self.E0) or math.isnan(self.d):
            raise InvalidParameterError("EA parameters must not be NaN")
        if self.sigma < 0 or self.alpha < 0:
            raise InvalidParameterError("sigma and alpha must be >= 0")
        for name in ("phi_x", "phi_v", "phi_tta"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise InvalidParameterError(f"{name}: phi_max must exceed phi_min, got ({lo}, {hi})")
        if self.D_T <= 0 or self.TTT_A < 0:
            raise InvalidParameterError("D_T must be > 0 and TTT_A >= 0")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3], dtype=float)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.E0, self.d, self.E_T, self.w1, self.w2, self.w3], dtype=float)

    def with_theta(self, theta) -> "EaParams":
        E0, d, E_T, w1, w2, w3 = (float(x) for x in theta)
        return replace(self, E0=E0, d=d, E_T=E_T, w1=w1, w2=w2, w3=w3)


@dataclass(frozen=True)
class Dissimilarity:
    U: float
    phi_x: float
    phi_v: float
    phi_tta: float

    @property
    def channels(self) -> Tuple[float, float, float]:
        return (self.phi_x, self.phi_v, self.phi_tta)


@dataclass(frozen=True)
class EaState:
    E: float
    eta: int
    U: float
    phi: Tuple[float, float, float]
    shadow: VehicleState
    shadow_spec: CfSpec
    takeover_time: Optional[float] = None
    takeover_tick: Optional[int] = None
    tick: int = 0
    dt: float = DT
    shadow_clamps: int = 0

    @property
    def automated(self) -> bool:
        return self.eta == 1

    @property
    def shadow_clamped(self) -> bool:
        return self.shadow_clamps > 0


def _unit(value: float, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


def remaining_travel_time(y_av: float, v_av: float, p: EaParams, tta_a: float) -> float:
    if v_av <= MIN_TTA_SPEED:
        return p.phi_tta[1] + tta_a
    return (p.D_T - y_av) / v_av


def dissimilarity(
    av: VehicleState, shadow: VehicleState, leader: VehicleState, t: float, p: EaParams
) -> Dissimilarity:
    """
    Weighted min-max normalized deviation between the automation and the
    driver's own counterfactual driving, plus the time-pressure channel.
    """
    # relative spacing/speed w.r.t. the leader, automated vs. human
    dx_av, dx_hdv = leader.y - av.y, leader.y - shadow.y
    dv_av, dv_hdv = leader.v - av.v, leader.v - shadow.v

    tta_a = max(0.0, p.TTT_A - t)
    tta_r = remaining_travel_time(av.y, av.v, p, tta_a)

    phi_x = _unit(abs(dx_av - dx_hdv), p.phi_x)
    phi_v = _unit(abs(dv_av - dv_hdv), p.phi_v)
    phi_tta = _unit(max(0.0, tta_r - tta_a), p.phi_tta)
    u = p.w1 * phi_x + p.w2 * phi_v + p.w3 * phi_tta
    return Dissimilarity(min(1.0, max(0.0, u)), phi_x, phi_v, phi_tta)


def dissimilarity_channels(
    y_av: np.ndarray,
    v_av: np.ndarray,
    y_shadow: np.ndarray,
    v_shadow: np.ndarray,
    t: np.ndarray,
    p: EaParams,
) -> np.ndarray:
    """Vectorized Φ channels over a whole trace; returns shape (n_ticks, 3)."""
    tta_a = np.maximum(0.0, p.TTT_A - np.asarray(t, dtype=float))
    safe_v = np.where(v_av > MIN_TTA_SPEED, v_av, 1.0)
    tta_r = np.where(v_av > MIN_TTA_SPEED, (p.D_T - y_av) / safe_v, p.phi_tta[1] + tta_a)

    def unit(x, bounds):
        lo, hi = bounds
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)

    return np.column_stack(
        [
            unit(np.abs(y_shadow - y_av), p.phi_x),
            unit(np.abs(v_shadow - v_av), p.phi_v),
            unit(np.maximum(0.0, tta_r - tta_a), p.phi_tta),
        ]
    )


def init_ea_state(p: EaParams, av: VehicleState, shadow_spec: CfSpec, dt: float = DT) -> EaState:
    """Shadow starts as an exact copy of the AV; E0 above E_T means takeover at t=0."""
    shadow = replace(av, role=Role.SHADOW)
    eta = 1 if p.E0 <= p.E_T else 0
    return EaState(
        E=p.E0,
        eta=eta,
        U=0.0,
        phi=(0.0, 0.0, 0.0),
        shadow=shadow,
        shadow_spec=shadow_spec,
        takeover_time=None if eta else 0.0,
        takeover_tick=None if eta else 0,
        dt=dt,
    )


def ea_step(
    state: EaState,
    U: float,
    p: EaParams,
    rng: RngStream,
    phi: Tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> EaState:
    """
    E' = max(0, E + d U eta_prev + alpha eps), eps ~ N(0, sigma^2); the mode
    bit is re-evaluated on E' with an inclusive threshold. Evidence is frozen
    once the driver has taken over.
    """
    tick = state.tick + 1
    if not state.automated:
        return replace(state, U=U, phi=phi, tick=tick)

    eps = gaussian_draw(rng, 0.0, p.sigma)
    E = max(0.0, state.E + p.d * U * state.eta + p.alpha * eps)
    if E <= p.E_T:
        return replace(state, E=E, U=U, phi=phi, tick=tick)
    return replace(
        state, E=E, eta=0, U=U, phi=phi, tick=tick,
        takeover_time=tick * state.dt, takeover_tick=tick,
    )


def force_takeover(state: EaState, t: Optional[float] = None) -> EaState:
    if not state.automated:
        return state
    tick = state.tick if t is None else int(round(t / state.dt))
    return replace(state, eta=0, takeover_time=tick * state.dt, takeover_tick=tick)


def step_shadow(state: EaState, leader: VehicleState, dt: float = DT) -> EaState:
    """Advance the counterfactual human-driven vehicle behind the same leader."""
    shadow = state.shadow
    clamps = state.shadow_clamps
    gap = leader.y - shadow.y - VEHICLE_LENGTH
    if gap <= 0:
        shadow = replace(shadow, y=leader.y - VEHICLE_LENGTH - SHADOW_MIN_GAP, v=min(shadow.v, leader.v))
        gap = SHADOW_MIN_GAP
        clamps += 1
    accel = cf_accel(state.shadow_spec, gap, shadow.v, leader.v - shadow.v, leader.v)
    return replace(state, shadow=euler_step(shadow, accel, dt), shadow_clamps=clamps)


def generalized_cf_accel(eta: int, a_hdv: float, a_av: float) -> float:
    if eta not in (0, 1):
        raise InvalidParameterError(f"mode bit must be 0 or 1, got {eta}")
    return (1 - eta) * a_hdv + eta * a_av


def sample_ea_params(rng: RngStream, posterior: Posterior, template: EaParams) -> EaParams:
    """Weight-proportional particle draw merged with the fixed scales of `template`."""
    if posterior is None or len(posterior) == 0:
        raise InvalidParameterError("cannot sample EA parameters from an empty posterior")
    return template.with_theta(posterior.thetas[posterior.sample_index(rng)])


def default_ea_template() -> EaParams:
    """Scales and noise defaults with a placeholder threshold set (E0=0, d=0, E_T=inf)."""
    return EaParams(E0=0.0, d=0.0, E_T=math.inf, w1=1 / 3, w2=1 / 3, w3=1 - 2 / 3)


def shadow_trajectory(
    leader_y: np.ndarray,
    leader_v: np.ndarray,
    start: VehicleState,
    spec: CfSpec,
    dt: float = DT,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Integrate the counterfactual human driver behind a recorded leader.
    Returns shadow positions, speeds and the number of gap clamps.
    """
    n = len(leader_y)
    leader = VehicleState(0, Role.LEADER, float(leader_y[0]), float(leader_v[0]))
    state = EaState(
        E=0.0, eta=1, U=0.0, phi=(0.0, 0.0, 0.0),
        shadow=replace(start, role=Role.SHADOW), shadow_spec=spec, dt=dt,
    )
    ys, vs = np.empty(n), np.empty(n)
    ys[0], vs[0] = state.shadow.y, state.shadow.v
    for k in range(1, n):
        state = step_shadow(state, leader, dt)
        leader = VehicleState(0, Role.LEADER, float(leader_y[k]), float(leader_v[k]))
        ys[k], vs[k] = state.shadow.y, state.shadow.v
    return ys, vs, state.shadow_clamps
