# takeover/domain/cf_models.py
"""
Car-following laws: the four human-driver models (IDM, FVDM, GFM, OVM), the
two automation baselines (higher-order linear feedback, IDM tracked by a PID
actuator loop) and the equilibrium solver shared by all of them.

Every law consumes the bumper-to-bumper gap and returns an acceleration
clamped to its CfSpec bounds [a_min, a_max].
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from takeover._compat import StrEnum
from types import MappingProxyType
from typing import Deque, Dict, Mapping, Optional, Sequence, Tuple

from scipy.optimize import bisect

from takeover.errors import CollisionStateError, EquilibriumError, InvalidParameterError

A_MIN = -8.0
A_MAX = 4.0
GAP_BRACKET = (0.1, 1000.0)


class CfKind(StrEnum):
    IDM = "IDM"
    FVDM = "FVDM"
    GFM = "GFM"
    OVM = "OVM"
    HL = "HL"
    IDM_PID = "IDM_PID"


HDV_KINDS: Tuple[CfKind, ...] = (CfKind.IDM, CfKind.FVDM, CfKind.GFM, CfKind.OVM)

_IDM_PARAMS = ("v0", "T", "s0", "a", "b", "delta")
_OV_PARAMS = ("V1", "V2", "C1", "C2")

PARAM_SCHEMA: Mapping[CfKind, Tuple[str, ...]] = MappingProxyType(
    {
        CfKind.IDM: _IDM_PARAMS,
        CfKind.FVDM: ("kappa", "lam", *_OV_PARAMS),
        CfKind.GFM: ("kappa", "lam", *_OV_PARAMS),
        CfKind.OVM: ("kappa", *_OV_PARAMS),
        CfKind.HL: ("s0", "h", "k_s", "k_v"),
        CfKind.IDM_PID: (*_IDM_PARAMS, "kp", "ki", "kd", "tau", "i_max"),
    }
)

# length/time scales and rates that must be strictly positive
_POSITIVE = frozenset({"v0", "T", "s0", "a", "b", "delta", "kappa", "V2", "C1", "h", "tau", "i_max"})
_NON_NEGATIVE = frozenset({"lam", "k_s", "k_v", "kp", "ki", "kd"})


@dataclass(frozen=True)
class CfSpec:
    kind: CfKind
    params: Mapping[str, float]
    coeffs: Tuple[float, ...] = ()  # HL output-filter coefficients c_1..c_m
    a_min: float = A_MIN
    a_max: float = A_MAX

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CfKind(self.kind))
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        self.validate()

    def validate(self) -> None:
        schema = PARAM_SCHEMA[self.kind]
        missing = [k for k in schema if k not in self.params]
        extra = [k for k in self.params if k not in schema and k != "order"]
        if missing or extra:
            raise InvalidParameterError(
                f"{self.kind} expects parameters {list(schema)}; missing={missing} extra={extra}"
            )
        for key, value in self.params.items():
            if not math.isfinite(value):
                raise InvalidParameterError(f"{self.kind}.{key} is not finite: {value}")
            if key in _POSITIVE and value <= 0:
                raise InvalidParameterError(f"{self.kind}.{key} must be > 0, got {value}")
            if key in _NON_NEGATIVE and value < 0:
                raise InvalidParameterError(f"{self.kind}.{key} must be >= 0, got {value}")
        if self.kind == CfKind.HL:
            order = int(self.params.get("order", len(self.coeffs)))
            if order != len(self.coeffs):
                raise InvalidParameterError(
                    f"HL declares order {order} but carries {len(self.coeffs)} coefficients"
                )
        elif self.coeffs:
            raise InvalidParameterError(f"{self.kind} takes no filter coefficients")
        if not self.a_min < 0 < self.a_max:
            raise InvalidParameterError(f"acceleration bounds must bracket 0: [{self.a_min}, {self.a_max}]")

    def __getitem__(self, key: str) -> float:
        return float(self.params[key])

    @property
    def order(self) -> int:
        return len(self.coeffs)

    @property
    def free_flow_speed(self) -> float:
        if self.kind in (CfKind.IDM, CfKind.IDM_PID):
            return self["v0"]
        if self.kind in (CfKind.FVDM, CfKind.GFM, CfKind.OVM):
            return self["V1"] + self["V2"]
        return math.inf

    def as_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {"model": self.kind.value, **dict(self.params)}
        for j, c in enumerate(self.coeffs, start=1):
            row[f"c{j}"] = c
        return row


def _clamp(spec: CfSpec, accel: float) -> float:
    return min(spec.a_max, max(spec.a_min, accel))


def optimal_velocity(spec: CfSpec, gap: float) -> float:
    """Hyperbolic-tangent optimal velocity V(s) = V1 + V2 tanh(C1 s - C2)."""
    return spec["V1"] + spec["V2"] * math.tanh(spec["C1"] * gap - spec["C2"])


def optimal_velocity_inverse(spec: CfSpec, v: float) -> float:
    ratio = (v - spec["V1"]) / spec["V2"]
    if not -1.0 < ratio < 1.0:
        raise EquilibriumError(f"{spec.kind}: speed {v} outside the optimal-velocity range")
    return (math.atanh(ratio) + spec["C2"]) / spec["C1"]


def _idm(params: Mapping[str, float], gap: float, v: float, v_lead: float) -> float:
    a, b = params["a"], params["b"]
    s_star = params["s0"] + max(0.0, v * params["T"] + v * (v - v_lead) / (2.0 * math.sqrt(a * b)))
    return a * (1.0 - (v / params["v0"]) ** params["delta"] - (s_star / gap) ** 2)


def _raw_accel(spec: CfSpec, gap: float, v: float, dv: float, v_lead: float) -> float:
    kind = spec.kind
    if kind in (CfKind.IDM, CfKind.IDM_PID):
        return _idm(spec.params, gap, v, v_lead)
    if kind == CfKind.OVM:
        return spec["kappa"] * (optimal_velocity(spec, gap) - v)
    if kind == CfKind.FVDM:
        return spec["kappa"] * (optimal_velocity(spec, gap) - v) + spec["lam"] * dv
    if kind == CfKind.GFM:
        # braking-only velocity-difference term: reacts when closing in
        return spec["kappa"] * (optimal_velocity(spec, gap) - v) + spec["lam"] * min(0.0, dv)
    if kind == CfKind.HL:
        return spec["k_s"] * (gap - spec["s0"] - spec["h"] * v) + spec["k_v"] * dv
    raise InvalidParameterError(f"unsupported car-following kind {kind}")


def _check_inputs(gap: float, v: float, dv: float) -> None:
    if not (math.isfinite(gap) and math.isfinite(v) and math.isfinite(dv)):
        raise InvalidParameterError(f"non-finite CF inputs gap={gap} v={v} dv={dv}")
    if gap <= 0:
        raise CollisionStateError(f"gap must be positive, got {gap}")
    if v < 0:
        raise InvalidParameterError(f"speed must be >= 0, got {v}")


def cf_accel(
    spec: CfSpec, gap: float, v: float, dv: float, v_lead: Optional[float] = None
) -> float:
    """
    Commanded acceleration of `spec` for bumper gap `gap`, own speed `v` and
    relative speed `dv` (leader minus own). HL is evaluated with an empty
    history; IDM_PID returns its IDM reference command.
    """
    _check_inputs(gap, v, dv)
    if v_lead is None:
        v_lead = v + dv
    return _clamp(spec, _raw_accel(spec, gap, v, dv, v_lead))


def hl_accel(
    spec: CfSpec, gap: float, v: float, dv: float, history: Sequence[float] = ()
) -> float:
    """
    Constant-time-headway linear feedback with m-order output filtering:
    k_s (gap - s0 - h v) + k_v dv + sum_j c_j a(t - j dt).
    `history[0]` is the most recent realized acceleration; missing entries are zero.
    """
    if spec.kind != CfKind.HL:
        raise InvalidParameterError(f"hl_accel needs an HL spec, got {spec.kind}")
    _check_inputs(gap, v, dv)
    accel = _raw_accel(spec, gap, v, dv, v + dv)
    for c_j, a_past in zip(spec.coeffs, history):
        accel += c_j * a_past
    if not math.isfinite(accel):
        raise InvalidParameterError(f"HL produced a non-finite command from history {list(history)}")
    return _clamp(spec, accel)


@dataclass(frozen=True)
class ActuatorState:
    """PID/actuator memory of one IDM_PID vehicle."""

    a_real: float = 0.0
    integral: float = 0.0
    a_prev: float = 0.0
    v_ref: Optional[float] = None  # reference speed implied by the IDM commands


def idm_pid_accel(
    spec: CfSpec,
    gap: float,
    v: float,
    dv: float,
    state: ActuatorState,
    dt: float = 0.1,
) -> Tuple[float, ActuatorState]:
    """
    IDM reference tracked through a PID loop and a first-order actuator.

    The IDM command is the slope of the target speed trajectory; the PID acts
    on the acceleration tracking error e = a_idm - a_real (derivative on the
    measurement, integral clamped to +/- i_max) and drives the actuator with
    lag `tau`: a_real' = a_real + dt/tau * u.
    """
    if spec.kind != CfKind.IDM_PID:
        raise InvalidParameterError(f"idm_pid_accel needs an IDM_PID spec, got {spec.kind}")
    a_cmd = cf_accel(spec, gap, v, dv)
    error = a_cmd - state.a_real

    i_max = spec["i_max"]
    integral = min(i_max, max(-i_max, state.integral + error * dt))
    derivative = -(state.a_real - state.a_prev) / dt
    u = spec["kp"] * error + spec["ki"] * integral + spec["kd"] * derivative

    a_next = _clamp(spec, state.a_real + dt / spec["tau"] * u)
    if not math.isfinite(a_next):
        raise InvalidParameterError("IDM_PID produced a non-finite acceleration")
    v_ref = (v if state.v_ref is None else state.v_ref) + a_cmd * dt
    return a_next, ActuatorState(a_real=a_next, integral=integral, a_prev=state.a_real, v_ref=v_ref)


def equilibrium_gap(spec: CfSpec, v_e: float) -> float:
    """Bumper gap at which `spec` commands zero acceleration at speed v_e (bisection)."""
    if v_e < 0:
        raise EquilibriumError(f"equilibrium speed must be >= 0, got {v_e}")
    if v_e >= spec.free_flow_speed:
        raise EquilibriumError(
            f"{spec.kind}: v_E={v_e} is not below the free-flow speed {spec.free_flow_speed}"
        )

    def residual(gap: float) -> float:
        return _raw_accel(spec, gap, v_e, 0.0, v_e)

    lo, hi = GAP_BRACKET
    f_lo, f_hi = residual(lo), residual(hi)
    if f_lo == 0.0:
        return lo
    if f_lo * f_hi > 0:
        raise EquilibriumError(
            f"{spec.kind}: no equilibrium gap in [{lo}, {hi}] m for v_E={v_e} "
            f"(residuals {f_lo:.3g}, {f_hi:.3g})"
        )
    return float(bisect(residual, lo, hi, xtol=1e-12, maxiter=500))


class CfController:
    """
    Per-vehicle wrapper holding the memory a law needs between ticks
    (HL acceleration history, IDM_PID actuator state).
    """

    def __init__(self, spec: CfSpec, dt: float = 0.1):
        self.spec = spec
        self.dt = dt
        self._history: Deque[float] = deque(maxlen=max(spec.order, 1))
        self._actuator = ActuatorState()

    @property
    def reference_spec(self) -> CfSpec:
        return self.spec

    def command(self, gap: float, v: float, dv: float, v_lead: Optional[float] = None) -> float:
        kind = self.spec.kind
        if kind == CfKind.HL:
            return hl_accel(self.spec, gap, v, dv, self._history)
        if kind == CfKind.IDM_PID:
            accel, self._actuator = idm_pid_accel(self.spec, gap, v, dv, self._actuator, self.dt)
            return accel
        return cf_accel(self.spec, gap, v, dv, v_lead)

    def observe(self, realized: float) -> None:
        """Feed back the realized (possibly speed-clamped) acceleration."""
        if self.spec.order:
            self._history.appendleft(realized)
        if self.spec.kind == CfKind.IDM_PID and realized != self._actuator.a_real:
            self._actuator = replace(self._actuator, a_real=realized)


# --- named configurations -------------------------------------------------

def default_hl_spec() -> CfSpec:
    return CfSpec(
        CfKind.HL,
        {"s0": 2.0, "h": 1.4, "k_s": 0.1, "k_v": 0.8, "order": 2},
        coeffs=(0.15, 0.05),
    )


IDM_PID_PRESETS: Mapping[str, Mapping[str, float]] = MappingProxyType(
    {
        "conservative": {
            "v0": 30.0, "T": 1.8, "s0": 3.0, "a": 1.0, "b": 1.5, "delta": 4.0,
            "kp": 2.0, "ki": 0.5, "kd": 0.1, "tau": 0.3, "i_max": 2.0,
        },
        "aggressive": {
            "v0": 33.5, "T": 1.0, "s0": 2.0, "a": 2.0, "b": 3.0, "delta": 4.0,
            "kp": 2.0, "ki": 0.5, "kd": 0.1, "tau": 0.3, "i_max": 2.0,
        },
    }
)


def idm_pid_preset(name: str = "conservative", **overrides: float) -> CfSpec:
    try:
        params = dict(IDM_PID_PRESETS[name])
    except KeyError:
        raise InvalidParameterError(
            f"Unknown IDM-PID preset '{name}'. Known: {sorted(IDM_PID_PRESETS)}"
        )
    params.update(overrides)
    return CfSpec(CfKind.IDM_PID, params)
