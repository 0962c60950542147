# takeover/rl/env.py
"""
Reinforcement-learning view of the HDV-AV-HDV control unit: observation,
reward and an episodic environment whose action is the AV's acceleration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from takeover.core.kinematics import SPEED_LIMIT, Trajectory
from takeover.core.rng import STREAM_LEADER, RngStream
from takeover.domain.cf_models import A_MAX, A_MIN, CfKind, CfSpec
from takeover.domain.particles import Posterior
from takeover.domain.posteriors import HdvPosterior
from takeover.errors import InvalidParameterError
from takeover.services.intervention import EaParams, default_ea_template
from takeover.services.platoon import PlatoonConfig, PlatoonSim, init_platoon, pulse_profile, step

OBS_DIM = 7
ACTION_DIM = 1


@dataclass(frozen=True)
class RewardParams:
    wR1: float = 1.0
    wR2: float = 0.5
    wR3: float = 0.5
    rho1: float = 1.5
    rho2: float = 1.0
    rho3: float = 5.0
    rho4: float = 5.0
    v_e: float = 26.2
    speed_limit: float = SPEED_LIMIT
    window: int = 50
    eps_n: float = 1e-3
    ratio_cap: float = 100.0

    def __post_init__(self) -> None:
        weights = (self.wR1, self.wR2, self.wR3, self.rho1, self.rho2, self.rho3, self.rho4)
        if any(w < 0 for w in weights):
            raise InvalidParameterError("reward weights and penalties must be >= 0")
        if self.window < 1:
            raise InvalidParameterError("reward window must be >= 1 tick")

    @property
    def lower_bound(self) -> float:
        return -(
            self.wR1
            + self.wR2 * self.rho1 * self.ratio_cap
            + self.wR3 * self.rho2 * self.ratio_cap
            + self.rho3
            + self.rho4
        )


def windowed_norm(speeds: np.ndarray, rp: RewardParams, dt: float) -> float:
    """sqrt(dt * sum (v - v_E)^2) over the trailing window, plus the floor."""
    tail = np.asarray(speeds, dtype=float)[-rp.window :]
    return float(np.sqrt(dt * np.sum((tail - rp.v_e) ** 2))) + rp.eps_n


def reward_terms(
    leader_v: np.ndarray,
    av_v: np.ndarray,
    follower_v: np.ndarray,
    U: float,
    collided: bool,
    speeding: bool,
    rp: RewardParams,
    dt: float,
) -> Dict[str, float]:
    n_lead = windowed_norm(leader_v, rp, dt)
    n_av = windowed_norm(av_v, rp, dt)
    n_fol = windowed_norm(follower_v, rp, dt)
    front = min(rp.ratio_cap, n_av / n_lead)
    rear = min(rp.ratio_cap, n_fol / n_av)
    terms = {
        "dissimilarity": rp.wR1 * U,
        "front_ratio": rp.wR2 * rp.rho1 * front,
        "rear_ratio": rp.wR3 * rp.rho2 * rear,
        "collision": rp.rho3 * float(collided),
        "speeding": rp.rho4 * float(speeding),
    }
    terms["reward"] = -sum(terms.values())
    return terms


def _collided_this_tick(sim: PlatoonSim) -> bool:
    return any(v.tick == sim.tick and v.kind == "collision" and v.vehicle_id in (1, 2) for v in sim.violations)


def build_state(sim: PlatoonSim) -> np.ndarray:
    """[gap_front, gap_rear, dv_front, dv_rear, w1 Φx, w2 Φv, w3 ΦTTA]."""
    return sim.observation()


def reward(sim: PlatoonSim, rp: RewardParams) -> float:
    w = rp.window
    speeds = [np.fromiter((s.v for s in sim.history[k][-w:]), dtype=float) for k in range(3)]
    terms = reward_terms(
        *speeds,
        U=sim.ea.U,
        collided=_collided_this_tick(sim),
        speeding=sim.av.v >= rp.speed_limit,
        rp=rp,
        dt=sim.dt,
    )
    return terms["reward"]


class ExternalControl:
    """AV slot driven by actions passed to `step`."""

    def act(self, observation: np.ndarray) -> float:
        raise InvalidParameterError("the environment AV needs an explicit action")


@dataclass(frozen=True)
class Scenario:
    """Everything an episode draws from: leader profiles and the parameter posteriors."""

    leaders: Tuple[Trajectory, ...]
    hdv_posterior: HdvPosterior
    ea_posterior: Optional[Posterior] = None
    ea_template: EaParams = field(default_factory=default_ea_template)
    reward: RewardParams = field(default_factory=RewardParams)
    v_e: float = 26.2
    horizon: Optional[float] = None
    n_followers: int = 1
    a_min: float = A_MIN
    a_max: float = A_MAX
    fixed_ea: Optional[EaParams] = None
    fixed_specs: Optional[Tuple[CfSpec, ...]] = None  # (shadow, follower...)

    def __post_init__(self) -> None:
        if not self.leaders:
            raise InvalidParameterError("scenario needs at least one leader profile")

    def leader_for(self, seed: int) -> Trajectory:
        if len(self.leaders) == 1:
            return self.leaders[0]
        return self.leaders[int(RngStream(seed, STREAM_LEADER).integers(0, len(self.leaders)))]

    def platoon_config(self, seed: int, av_controller, **overrides) -> PlatoonConfig:
        shadow, followers = None, None
        if self.fixed_specs:
            shadow, followers = self.fixed_specs[0], tuple(self.fixed_specs[1:]) or None
        cfg = PlatoonConfig(
            leader=self.leader_for(seed),
            av_controller=av_controller,
            hdv_posterior=self.hdv_posterior,
            ea_posterior=self.ea_posterior,
            ea_template=self.ea_template,
            ea_params=self.fixed_ea,
            v_e=self.v_e,
            n_followers=self.n_followers if followers is None else len(followers),
            shadow_spec=shadow,
            follower_specs=followers,
        )
        return replace(cfg, **overrides) if overrides else cfg


class ControlUnitEnv:
    """
    Episodic environment. Episodes end at the leader profile's end (or the
    scenario horizon), at a collision of the AV or its follower, or at takeover.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.sim: Optional[PlatoonSim] = None
        self._limit = 0

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.scenario.platoon_config(seed, ExternalControl())
        self.sim = init_platoon(cfg, RngStream(seed))
        available = len(cfg.leader) - 1
        horizon = self.scenario.horizon
        self._limit = available if horizon is None else min(available, int(round(horizon / cfg.dt)))
        return build_state(self.sim)

    def step(self, action: float) -> Tuple[np.ndarray, float, bool, Dict[str, object]]:
        sim = self.sim
        if sim is None:
            raise InvalidParameterError("call reset() before step()")
        a = float(np.clip(action, self.scenario.a_min, self.scenario.a_max))
        step(sim, av_action=a)
        r = reward(sim, self.scenario.reward)
        collided = _collided_this_tick(sim)
        took_over = not sim.ea.automated
        done = collided or took_over or sim.tick >= self._limit
        info = {"tick": sim.tick, "collision": collided, "takeover": took_over}
        if not math.isfinite(r):
            info["non_finite_reward"] = True
        return build_state(sim), r, done, info


def smoke_scenario(hdv_posterior: HdvPosterior, horizon: float = 60.0) -> Scenario:
    """
    Simplified deterministic environment: one pulse leader, fixed GFM human
    drivers, noise-free evidence with a reachable threshold.
    """
    gfm = hdv_posterior.particles.get(CfKind.GFM)
    if not gfm:
        raise InvalidParameterError("smoke scenario needs at least one GFM particle")
    template = default_ea_template()
    ea = replace(template, E0=0.0, d=1.0, E_T=60.0, w1=0.4, w2=0.4, w3=0.2, sigma=0.0)
    return Scenario(
        leaders=(pulse_profile(depth=8.0, start=10.0, duration=8.0, horizon=horizon),),
        hdv_posterior=hdv_posterior,
        ea_template=template,
        fixed_ea=ea,
        fixed_specs=(gfm[0], gfm[0]),
        horizon=horizon,
    )
