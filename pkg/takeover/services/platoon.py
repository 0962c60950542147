# takeover/services/platoon.py
"""
Leader profiles, platoon initialization at equilibrium, and the synchronous
tick loop of the HDV-AV-HDV control unit (optionally extended with more
human-driven followers).

Vehicle order is front to back: index 0 leader, 1 AV, 2.. followers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from takeover.core.kinematics import (
    DT,
    SPEED_LIMIT,
    VEHICLE_LENGTH,
    Role,
    Trajectory,
    VehicleState,
    euler_step,
)
from takeover.core.rng import (
    STREAM_AV_SPEC,
    STREAM_EA_NOISE,
    STREAM_EA_PARAMS,
    STREAM_HDV_SPECS,
    RngStream,
)
from takeover.domain.cf_models import CfController, CfSpec, equilibrium_gap
from takeover.domain.particles import Posterior
from takeover.domain.posteriors import AvPosterior, HdvPosterior, sample_av, sample_hybrid
from takeover.errors import EquilibriumError, InvalidParameterError, ProfileLoadError
from takeover.logging_config import get_logger
from takeover.services.intervention import (
    Dissimilarity,
    EaParams,
    EaState,
    default_ea_template,
    dissimilarity,
    ea_step,
    force_takeover,
    generalized_cf_accel,
    init_ea_state,
    sample_ea_params,
    step_shadow,
)

log = get_logger("platoon")

PROFILE_COLUMNS = ("t", "x", "v", "a")
MIN_GAP = 0.1  # m, position clamp after a recorded collision


# --- leader profiles ----------------------------------------------------------

def load_leader_profile(path: Path | str, dt: float = DT) -> Trajectory:
    """Read a `t,x,v,a` profile and resample it to `dt` by linear interpolation."""
    path = Path(path)
    if not path.exists():
        raise ProfileLoadError(f"leader profile not found: {path}", path=str(path))
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ProfileLoadError(f"cannot parse leader profile {path}: {exc}", path=str(path))

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in PROFILE_COLUMNS if c not in frame.columns]
    if missing:
        raise ProfileLoadError(f"{path}: missing columns {missing}", path=str(path))
    if len(frame) < 2:
        raise ProfileLoadError(f"{path}: need at least two samples", path=str(path))

    values = {}
    for col in PROFILE_COLUMNS:
        series = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(~np.isfinite(series.to_numpy(dtype=float)))
        if bad.size:
            raise ProfileLoadError(
                f"{path}: non-numeric value in column '{col}' at row {int(bad[0])}",
                path=str(path), row=int(bad[0]),
            )
        values[col] = series.to_numpy(dtype=float)

    t = values["t"]
    steps = np.diff(t)
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise ProfileLoadError(f"{path}: time is not strictly increasing at row {row}", path=str(path), row=row)
    if np.any(values["v"] < 0):
        row = int(np.flatnonzero(values["v"] < 0)[0])
        raise ProfileLoadError(f"{path}: negative speed at row {row}", path=str(path), row=row)

    if np.allclose(steps, dt, rtol=0.0, atol=1e-9):
        x, v, a = values["x"], values["v"], values["a"]
    else:
        n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
        grid = t[0] + np.arange(n) * dt
        x = np.interp(grid, t, values["x"])
        v = np.interp(grid, t, values["v"])
        a = np.interp(grid, t, values["a"])
        log.debug("resampled leader profile {} from {} to {} samples", path.name, len(t), n)

    return Trajectory.from_arrays(x, np.maximum(v, 0.0), a, dt=dt, vehicle_id=0, role=Role.LEADER)


def constant_profile(v: float, horizon: float, dt: float = DT) -> Trajectory:
    n = int(round(horizon / dt)) + 1
    speeds = np.full(n, float(v))
    return Trajectory.from_arrays(np.arange(n) * dt * v, speeds, dt=dt)


def pulse_profile(
    v_e: float = 26.2,
    depth: float = 10.0,
    start: float = 20.0,
    duration: float = 10.0,
    horizon: float = 120.0,
    dt: float = DT,
) -> Trajectory:
    """
    Leader cruising at `v_e` with a smooth raised-cosine speed dip of `depth`
    m/s starting at `start` and lasting `duration` seconds.
    """
    if depth < 0 or depth > v_e:
        raise InvalidParameterError(f"pulse depth must lie in [0, v_e], got {depth}")
    n = int(round(horizon / dt)) + 1
    t = np.arange(n) * dt
    phase = np.clip((t - start) / duration, 0.0, 1.0)
    v = v_e - depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * phase))
    a = np.append(np.diff(v) / dt, 0.0)
    x = np.concatenate(([0.0], np.cumsum(v[:-1] * dt)))
    return Trajectory.from_arrays(x, v, a, dt=dt)


# --- configuration and results ------------------------------------------------

class PolicyLike(Protocol):
    """Anything that maps the 7-entry control-unit observation to an acceleration."""

    def act(self, observation: np.ndarray) -> float: ...


AvController = Union[CfSpec, AvPosterior, PolicyLike]


@dataclass(frozen=True)
class PlatoonConfig:
    leader: Trajectory
    av_controller: AvController
    hdv_posterior: HdvPosterior
    ea_posterior: Optional[Posterior] = None
    ea_template: EaParams = field(default_factory=default_ea_template)
    ea_params: Optional[EaParams] = None  # fixed parameters bypass posterior sampling
    v_e: float = 26.2
    n_followers: int = 1
    shadow_spec: Optional[CfSpec] = None
    follower_specs: Optional[Tuple[CfSpec, ...]] = None
    force_takeover_at: Optional[float] = None
    suppress_takeover: bool = False
    vehicle_length: float = VEHICLE_LENGTH

    def __post_init__(self) -> None:
        if self.n_followers < 1:
            raise InvalidParameterError(f"n_followers must be >= 1, got {self.n_followers}")
        if self.v_e <= 0:
            raise InvalidParameterError(f"v_E must be > 0, got {self.v_e}")
        if self.follower_specs is not None and len(self.follower_specs) != self.n_followers:
            raise InvalidParameterError("follower_specs must list one spec per follower")

    @property
    def dt(self) -> float:
        return self.leader.dt


@dataclass(frozen=True)
class SafetyViolation:
    tick: int
    time: float
    vehicle_id: int
    kind: str  # "collision" | "speed"
    value: float


@dataclass(frozen=True)
class TakeoverEvent:
    time: float
    tick: int
    vehicle_id: int = 1


@dataclass(frozen=True)
class EaTrace:
    """Per-tick evidence record while the AV is automated (takeover tick included)."""

    E: np.ndarray
    eta: np.ndarray
    U: np.ndarray
    phi: np.ndarray  # (n, 3): x, v, TTA channels

    def __len__(self) -> int:
        return int(self.E.shape[0])


@dataclass(frozen=True)
class Rollout:
    seed: int
    trajectories: Tuple[Trajectory, ...]
    specs: Tuple[Optional[CfSpec], ...]  # per vehicle; leader and policy AV are None
    shadow_spec: CfSpec
    ea_params: EaParams
    ea_trace: EaTrace
    modes: np.ndarray  # AV mode bit per recorded tick
    takeover: Optional[TakeoverEvent]
    violations: Tuple[SafetyViolation, ...]
    shadow_clamps: int = 0

    @property
    def n_vehicles(self) -> int:
        return len(self.trajectories)

    @property
    def n_ticks(self) -> int:
        return len(self.trajectories[0])

    @property
    def takeover_time(self) -> Optional[float]:
        return None if self.takeover is None else self.takeover.time

    @property
    def collisions(self) -> int:
        return sum(1 for v in self.violations if v.kind == "collision")

    @property
    def speedings(self) -> int:
        return sum(1 for v in self.violations if v.kind == "speed")


# --- simulation state ---------------------------------------------------------

class PlatoonSim:
    """Mutable single-owner state of one rollout."""

    def __init__(
        self,
        cfg: PlatoonConfig,
        vehicles: List[VehicleState],
        specs: List[Optional[CfSpec]],
        policy: Optional[PolicyLike],
        ea_params: EaParams,
        ea_state: EaState,
        noise: RngStream,
        seed: int,
    ):
        self.cfg = cfg
        self.dt = cfg.dt
        self.vehicles = vehicles
        self.specs = specs
        self.policy = policy
        self.ea_params = ea_params
        self.ea = ea_state
        self.noise = noise
        self.seed = seed
        self.tick = 0
        self.leader_offset = vehicles[0].y - cfg.leader.samples[0].y

        self.controllers: List[Optional[CfController]] = [
            None if spec is None else CfController(spec, self.dt) for spec in specs
        ]
        self.manual = CfController(ea_state.shadow_spec, self.dt)

        self.history: List[List[VehicleState]] = [[veh] for veh in vehicles]
        self.ea_rows: List[Tuple[float, int, float, float, float, float]] = []
        self.modes: List[int] = [ea_state.eta]
        self.violations: List[SafetyViolation] = []
        self.done = False

    @property
    def t(self) -> float:
        return self.tick * self.dt

    @property
    def max_ticks(self) -> int:
        return len(self.cfg.leader) - 1

    @property
    def leader(self) -> VehicleState:
        return self.vehicles[0]

    @property
    def av(self) -> VehicleState:
        return self.vehicles[1]

    def gap(self, k: int) -> float:
        """Bumper gap between vehicle k and its predecessor."""
        return self.vehicles[k - 1].y - self.vehicles[k].y - self.cfg.vehicle_length

    def current_dissimilarity(self) -> Dissimilarity:
        return dissimilarity(self.av, self.ea.shadow, self.leader, self.t, self.ea_params)

    def observation(self) -> np.ndarray:
        """[gap_front, gap_rear, dv_front, dv_rear, w1 Φx, w2 Φv, w3 ΦTTA]."""
        diss = self.current_dissimilarity()
        p = self.ea_params
        follower = self.vehicles[2]
        return np.array(
            [
                self.gap(1),
                self.gap(2),
                self.leader.v - self.av.v,
                self.av.v - follower.v,
                p.w1 * diss.phi_x,
                p.w2 * diss.phi_v,
                p.w3 * diss.phi_tta,
            ],
            dtype=float,
        )

    def _leader_state(self, tick: int) -> VehicleState:
        sample = self.cfg.leader.samples[tick]
        return VehicleState(0, Role.LEADER, sample.y + self.leader_offset, sample.v, sample.a)


def _sample_specs(cfg: PlatoonConfig, rng: RngStream) -> Tuple[CfSpec, List[CfSpec]]:
    hdv_rng = rng.child(STREAM_HDV_SPECS)
    shadow = cfg.shadow_spec or sample_hybrid(hdv_rng, cfg.hdv_posterior)
    if cfg.follower_specs is not None:
        return shadow, list(cfg.follower_specs)
    return shadow, [sample_hybrid(hdv_rng, cfg.hdv_posterior) for _ in range(cfg.n_followers)]


def _resolve_ea_params(cfg: PlatoonConfig, rng: RngStream) -> EaParams:
    if cfg.ea_params is not None:
        params = cfg.ea_params
    elif cfg.ea_posterior is not None:
        params = sample_ea_params(rng.child(STREAM_EA_PARAMS), cfg.ea_posterior, cfg.ea_template)
    else:
        params = cfg.ea_template
    if cfg.suppress_takeover or cfg.force_takeover_at is not None:
        params = replace(params, E_T=math.inf)
    return params


def _placement_gap(spec: CfSpec, v_e: float, vehicle_id: int) -> float:
    try:
        return equilibrium_gap(spec, v_e)
    except EquilibriumError as exc:
        raise EquilibriumError(f"vehicle {vehicle_id} ({spec.kind}): {exc}") from exc


def init_platoon(cfg: PlatoonConfig, rng: RngStream) -> PlatoonSim:
    """Place every vehicle at its equilibrium gap behind its predecessor, all at v_E."""
    leader0 = cfg.leader.samples[0]
    if abs(leader0.v - cfg.v_e) > 0.5:
        log.warning(
            "leader starts at {:.2f} m/s, more than 0.5 m/s away from v_E={:.2f}", leader0.v, cfg.v_e
        )

    shadow_spec, follower_specs = _sample_specs(cfg, rng)
    ea_params = _resolve_ea_params(cfg, rng)

    policy: Optional[PolicyLike] = None
    if isinstance(cfg.av_controller, CfSpec):
        av_spec: Optional[CfSpec] = cfg.av_controller
    elif isinstance(cfg.av_controller, AvPosterior):
        av_spec = sample_av(rng.child(STREAM_AV_SPEC), cfg.av_controller)
    else:
        av_spec, policy = None, cfg.av_controller

    length = cfg.vehicle_length
    av_gap = _placement_gap(av_spec or shadow_spec, cfg.v_e, 1)
    leader = VehicleState(0, Role.LEADER, av_gap + length, leader0.v, leader0.a)
    av = VehicleState(1, Role.AV, 0.0, cfg.v_e, 0.0)
    vehicles = [leader, av]
    for k, spec in enumerate(follower_specs, start=2):
        gap = _placement_gap(spec, cfg.v_e, k)
        vehicles.append(VehicleState(k, Role.HDV_FOLLOWER, vehicles[-1].y - gap - length, cfg.v_e, 0.0))

    ea_state = init_ea_state(ea_params, av, shadow_spec, cfg.dt)
    specs: List[Optional[CfSpec]] = [None, av_spec, *follower_specs]
    return PlatoonSim(
        cfg, vehicles, specs, policy, ea_params, ea_state, rng.child(STREAM_EA_NOISE), rng.seed
    )


def _av_command(sim: PlatoonSim, av_action: Optional[float]) -> float:
    leader, av = sim.leader, sim.av
    gap, dv = sim.gap(1), leader.v - av.v
    if sim.ea.automated:
        if av_action is not None:
            a_av = float(av_action)
        elif sim.policy is not None:
            a_av = float(sim.policy.act(sim.observation()))
        else:
            a_av = sim.controllers[1].command(gap, av.v, dv, leader.v)
        return generalized_cf_accel(1, 0.0, a_av)
    return generalized_cf_accel(0, sim.manual.command(gap, av.v, dv, leader.v), 0.0)


def step(sim: PlatoonSim, av_action: Optional[float] = None) -> PlatoonSim:
    """
    Advance one tick. The evidence update runs first on the start-of-tick
    states, then every vehicle's command is computed from those same states
    and all vehicles are integrated together.
    """
    if sim.tick >= sim.max_ticks:
        raise InvalidParameterError("leader profile exhausted")
    cfg, dt, t = sim.cfg, sim.dt, sim.t

    if sim.ea.automated:
        diss = sim.current_dissimilarity()
        ea = ea_step(sim.ea, diss.U, sim.ea_params, sim.noise, diss.channels)
        if cfg.force_takeover_at is not None and t >= cfg.force_takeover_at - 1e-9:
            ea = force_takeover(ea, t)
        sim.ea_rows.append((ea.E, ea.eta, diss.U, *diss.channels))
        # shadow only matters while the automation is still being judged
        sim.ea = step_shadow(ea, sim.leader, dt) if ea.automated else ea
    else:
        sim.ea = replace(sim.ea, tick=sim.ea.tick + 1)

    commands = [0.0, _av_command(sim, av_action)]
    for k in range(2, len(sim.vehicles)):
        pred, veh = sim.vehicles[k - 1], sim.vehicles[k]
        commands.append(sim.controllers[k].command(sim.gap(k), veh.v, pred.v - veh.v, pred.v))

    nxt = [sim._leader_state(sim.tick + 1)]
    nxt += [euler_step(veh, commands[k], dt) for k, veh in enumerate(sim.vehicles) if k > 0]
    sim.tick += 1

    for k in range(1, len(nxt)):
        gap = nxt[k - 1].y - nxt[k].y - cfg.vehicle_length
        if gap <= 0:
            sim.violations.append(SafetyViolation(sim.tick, sim.t, k, "collision", gap))
            log.debug("collision vehicle={} tick={} gap={:.3f}", k, sim.tick, gap)
            nxt[k] = replace(nxt[k], y=nxt[k - 1].y - cfg.vehicle_length - MIN_GAP)
        if nxt[k].v >= SPEED_LIMIT:
            sim.violations.append(SafetyViolation(sim.tick, sim.t, k, "speed", nxt[k].v))

    for k in range(1, len(nxt)):
        controller = sim.manual if (k == 1 and not sim.ea.automated) else sim.controllers[k]
        if controller is not None:
            controller.observe(nxt[k].a)

    sim.vehicles = nxt
    for k, veh in enumerate(nxt):
        sim.history[k].append(veh)
    sim.modes.append(sim.ea.eta)
    sim.done = sim.tick >= sim.max_ticks
    return sim


def finish(sim: PlatoonSim) -> Rollout:
    rows = np.asarray(sim.ea_rows, dtype=float).reshape(-1, 6)
    trace = EaTrace(E=rows[:, 0], eta=rows[:, 1].astype(int), U=rows[:, 2], phi=rows[:, 3:6])
    takeover = None
    if sim.ea.takeover_tick is not None:
        takeover = TakeoverEvent(time=sim.ea.takeover_tick * sim.dt, tick=sim.ea.takeover_tick)
    trajectories = tuple(Trajectory(dt=sim.dt, samples=hist) for hist in sim.history)
    return Rollout(
        seed=sim.seed,
        trajectories=trajectories,
        specs=tuple(sim.specs),
        shadow_spec=sim.ea.shadow_spec,
        ea_params=sim.ea_params,
        ea_trace=trace,
        modes=np.asarray(sim.modes, dtype=int),
        takeover=takeover,
        violations=tuple(sim.violations),
        shadow_clamps=sim.ea.shadow_clamps,
    )


def n_ticks_for(cfg: PlatoonConfig, horizon_s: Optional[float]) -> int:
    available = len(cfg.leader) - 1
    if horizon_s is None:
        return available
    ticks = int(round(horizon_s / cfg.dt))
    if ticks > available:
        raise InvalidParameterError(
            f"horizon {horizon_s} s exceeds the leader profile ({available * cfg.dt:.1f} s)"
        )
    return ticks


def run(cfg: PlatoonConfig, horizon_s: Optional[float], rng: RngStream) -> Rollout:
    ticks = n_ticks_for(cfg, horizon_s)
    sim = init_platoon(cfg, rng)
    for _ in range(ticks):
        step(sim)
    return finish(sim)


def run_batch(
    cfg: PlatoonConfig,
    horizon_s: Optional[float],
    seeds: Sequence[int],
    threads: int = 1,
    configure: Optional[Callable[[PlatoonConfig, int], PlatoonConfig]] = None,
) -> List[Rollout]:
    """
    One rollout per seed, each on its own RngStream. Results keep seed order
    regardless of the thread count.
    """

    def one(seed: int) -> Rollout:
        run_cfg = configure(cfg, seed) if configure else cfg
        return run(run_cfg, horizon_s, RngStream(seed))

    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
