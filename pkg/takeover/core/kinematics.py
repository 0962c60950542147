# takeover/core/kinematics.py
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from takeover._compat import StrEnum
from typing import Iterable, List, Sequence

import numpy as np

from takeover.errors import InvalidParameterError, NonFiniteStateError

DT = 0.1  # model step, s
SPEED_LIMIT = 26.8224  # 60 mph in m/s
VEHICLE_LENGTH = 5.0  # m


class Role(StrEnum):
    LEADER = "leader"
    AV = "av"
    HDV_FOLLOWER = "hdv_follower"
    SHADOW = "shadow"


@dataclass(frozen=True, slots=True)
class VehicleState:
    id: int
    role: Role
    y: float  # position, m
    v: float  # speed, m/s
    a: float = 0.0  # acceleration, m/s^2


def euler_step(state: VehicleState, a_cmd: float, dt: float = DT) -> VehicleState:
    """
    Explicit forward Euler: position advances with the pre-step speed.

    A command that would drive the speed negative is clamped so the vehicle
    stops exactly; the recorded acceleration is then -v/dt.
    """
    if not (math.isfinite(a_cmd) and math.isfinite(dt)):
        raise NonFiniteStateError(f"non-finite command a_cmd={a_cmd} dt={dt}")
    if not (math.isfinite(state.y) and math.isfinite(state.v)):
        raise NonFiniteStateError(f"non-finite state for vehicle {state.id}: {state}")
    if dt <= 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")

    v_next = state.v + a_cmd * dt
    a_rec = a_cmd
    if v_next < 0.0:
        a_rec = -state.v / dt
        v_next = 0.0
    return replace(state, y=state.y + state.v * dt, v=v_next, a=a_rec)


@dataclass
class Trajectory:
    """Uniformly sampled states of one vehicle."""

    dt: float
    samples: List[VehicleState] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise InvalidParameterError(f"Trajectory dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.samples)

    def append(self, state: VehicleState) -> None:
        self.samples.append(state)

    @property
    def duration(self) -> float:
        return (len(self.samples) - 1) * self.dt

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.dt

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=float)

    @property
    def v(self) -> np.ndarray:
        return np.array([s.v for s in self.samples], dtype=float)

    @property
    def a(self) -> np.ndarray:
        return np.array([s.a for s in self.samples], dtype=float)

    def validate(self) -> None:
        if not self.samples:
            raise InvalidParameterError("Trajectory must not be empty")

    @classmethod
    def from_arrays(
        cls,
        y: Sequence[float],
        v: Sequence[float],
        a: Sequence[float] | None = None,
        *,
        dt: float = DT,
        vehicle_id: int = 0,
        role: Role = Role.LEADER,
    ) -> "Trajectory":
        y_arr = np.asarray(y, dtype=float)
        v_arr = np.asarray(v, dtype=float)
        a_arr = np.zeros_like(v_arr) if a is None else np.asarray(a, dtype=float)
        if not (len(y_arr) == len(v_arr) == len(a_arr)):
            raise InvalidParameterError("trajectory arrays must have equal length")
        samples = [
            VehicleState(vehicle_id, role, float(yy), float(vv), float(aa))
            for yy, vv, aa in zip(y_arr, v_arr, a_arr)
        ]
        traj = cls(dt=dt, samples=samples)
        traj.validate()
        return traj


def stack_speeds(trajectories: Iterable[Trajectory]) -> np.ndarray:
    """(n_vehicles, n_ticks) speed matrix; trajectories must share the tick grid."""
    rows = [traj.v for traj in trajectories]
    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        raise InvalidParameterError(f"trajectories do not share a tick grid: {sorted(lengths)}")
    return np.vstack(rows) if rows else np.zeros((0, 0))
