# takeover/rl/trainer.py
"""Training loop, train/test splits and matched-seed controller evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd

from takeover.core.rng import STREAM_POLICY, STREAM_SPLIT, RngStream
from takeover.domain.cf_models import HDV_KINDS
from takeover.errors import InvalidParameterError, TrainingDivergenceError
from takeover.logging_config import get_logger
from takeover.rl.env import ControlUnitEnv, Scenario
from takeover.rl.networks import PolicyFunction, policy_act, save_checkpoint
from takeover.rl.sac import ReplayBuffer, SacAgent, SacHyper
from takeover.services import metrics
from takeover.services.platoon import AvController, Rollout, run_batch

log = get_logger("trainer")

T = TypeVar("T")
CURVE_WINDOW = 20


# --- splits -------------------------------------------------------------------

def split_train_test(items: Sequence[T], rng: RngStream, fraction: float = 0.8) -> Tuple[List[T], List[T]]:
    """Random split; both sides nonempty whenever there are at least two items."""
    if not 0.0 < fraction < 1.0:
        raise InvalidParameterError(f"train fraction must lie in (0, 1), got {fraction}")
    n = len(items)
    if n < 2:
        return list(items), list(items)
    order = rng.generator.permutation(n)
    cut = min(n - 1, max(1, int(round(fraction * n))))
    return [items[i] for i in order[:cut]], [items[i] for i in order[cut:]]


def split_scenarios(base: Scenario, rng: RngStream, fraction: float = 0.8) -> Tuple[Scenario, Scenario]:
    """80/20 split of leader profiles, EA particles and per-model HDV particles."""
    split_rng = rng.child(STREAM_SPLIT)
    train_leaders, test_leaders = split_train_test(list(base.leaders), split_rng.child(0), fraction)

    train_ea = test_ea = base.ea_posterior
    if base.ea_posterior is not None and len(base.ea_posterior) >= 2:
        tr, te = split_train_test(list(range(len(base.ea_posterior))), split_rng.child(1), fraction)
        train_ea, test_ea = base.ea_posterior.subset(tr), base.ea_posterior.subset(te)

    train_idx, test_idx = {}, {}
    for j, kind in enumerate(HDV_KINDS):
        count = len(base.hdv_posterior.particles.get(kind, ()))
        tr, te = split_train_test(list(range(count)), split_rng.child(2 + j), fraction)
        train_idx[kind], test_idx[kind] = tr, te

    train = replace(
        base, leaders=tuple(train_leaders), ea_posterior=train_ea,
        hdv_posterior=base.hdv_posterior.restricted(train_idx),
    )
    test = replace(
        base, leaders=tuple(test_leaders), ea_posterior=test_ea,
        hdv_posterior=base.hdv_posterior.restricted(test_idx),
    )
    return train, test


# --- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: PolicyFunction
    curve: pd.DataFrame  # episode, return, moving_avg
    checkpoints: List[Path] = field(default_factory=list)
    losses: List[Dict[str, float]] = field(default_factory=list)


def learning_curve(returns: Sequence[float], window: int = CURVE_WINDOW) -> pd.DataFrame:
    series = pd.Series(list(returns), dtype=float)
    return pd.DataFrame(
        {
            "episode": np.arange(1, len(series) + 1),
            "return": series.to_numpy(),
            "moving_avg": series.rolling(window, min_periods=1).mean().to_numpy(),
        }
    )


def train(
    scenario: Scenario,
    hyper: SacHyper,
    episodes: int,
    rng: RngStream,
    checkpoint_dir: Optional[Path | str] = None,
    checkpoint_every: int = 100,
) -> TrainResult:
    """
    Each episode draws a fresh seed (new EA parameters, human drivers and
    leader), rolls out the stochastic policy, stores scaled transitions and
    runs `update_cycles` gradient steps every `update_interval` env steps.
    """
    if episodes < 1:
        raise InvalidParameterError("episodes must be >= 1")
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    policy_rng = rng.child(STREAM_POLICY)
    agent = SacAgent(hyper, policy_rng.child(0).torch_seed(), scenario.a_min, scenario.a_max)
    buffer = ReplayBuffer(hyper.replay_capacity)
    env = ControlUnitEnv(scenario)
    action_rng, batch_rng, seed_rng = policy_rng.child(1), policy_rng.child(2), rng.child(0)

    returns: List[float] = []
    losses: List[Dict[str, float]] = []
    checkpoints: List[Path] = []
    total_steps = 0

    for episode in range(1, episodes + 1):
        obs = env.reset(int(seed_rng.integers(0, 2**31 - 1)))
        ep_return, done = 0.0, False
        while not done:
            if total_steps < hyper.warmup_steps:
                action = float(action_rng.uniform(scenario.a_min, scenario.a_max))
            else:
                action = policy_act(agent.policy, obs, action_rng, deterministic=False)
            next_obs, r, done, info = env.step(action)
            buffer.add(obs, action, hyper.reward_scale * r, next_obs, done)
            ep_return += r
            obs = next_obs
            total_steps += 1

            if total_steps % hyper.update_interval == 0 and len(buffer) >= hyper.batch_size:
                try:
                    for _ in range(hyper.update_cycles):
                        report = agent.update(buffer.sample(hyper.batch_size, batch_rng))
                except TrainingDivergenceError:
                    if ckpt_dir:
                        checkpoints.append(save_checkpoint(agent.policy, ckpt_dir / f"diverged_ep{episode:05d}.bin"))
                    raise
                losses.append({"episode": episode, "step": total_steps, **report.as_dict()})

        if not math.isfinite(ep_return):
            if ckpt_dir:
                checkpoints.append(save_checkpoint(agent.policy, ckpt_dir / f"diverged_ep{episode:05d}.bin"))
            raise TrainingDivergenceError(f"episode {episode} returned {ep_return}", episode=episode)
        returns.append(ep_return)

        if ckpt_dir and episode % checkpoint_every == 0:
            checkpoints.append(save_checkpoint(agent.policy, ckpt_dir / f"policy_ep{episode:05d}.bin"))
        if episode % max(1, episodes // 10) == 0:
            log.info(
                "episode {}/{} return {:.2f} moving avg {:.2f}",
                episode, episodes, ep_return, float(np.mean(returns[-CURVE_WINDOW:])),
            )

    if ckpt_dir:
        checkpoints.append(save_checkpoint(agent.policy, ckpt_dir / "policy_final.bin"))
    agent.actor.eval()
    return TrainResult(agent.policy, learning_curve(returns), checkpoints, losses)


# --- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    controller: str
    seeds: Tuple[int, ...]
    takeover_times: Tuple[Optional[float], ...]
    stats: metrics.TakeoverStats
    norms: np.ndarray  # (n_runs, n_vehicles) squared L2 norms
    aggregate: Optional[metrics.AggregateNorms]
    evidence_curve: np.ndarray
    collisions: Tuple[int, ...]
    speedings: Tuple[int, ...]

    @property
    def takeover_indicator(self) -> np.ndarray:
        return np.array([t is not None for t in self.takeover_times], dtype=float)

    def run_records(self) -> List[Dict[str, object]]:
        return [
            {
                "controller": self.controller,
                "seed": seed,
                "takeover_time": t,
                "censored": t is None,
                "sq_l2": [float(x) for x in norms],
                "root_l2": [float(x) for x in np.sqrt(norms)],
                "collisions": c,
                "speedings": s,
            }
            for seed, t, norms, c, s in zip(
                self.seeds, self.takeover_times, self.norms, self.collisions, self.speedings
            )
        ]


def summarize(controller: str, rollouts: Sequence[Rollout], v_e: float, horizon: float) -> EvaluationReport:
    times = tuple(r.takeover_time for r in rollouts)
    norms = np.vstack([metrics.disturbance_profile(r, v_e).norms for r in rollouts])
    return EvaluationReport(
        controller=controller,
        seeds=tuple(r.seed for r in rollouts),
        takeover_times=times,
        stats=metrics.takeover_cdf(times, horizon),
        norms=norms,
        aggregate=metrics.aggregate_norms(norms) if len(rollouts) >= 2 else None,
        evidence_curve=metrics.expected_evidence_curve(rollouts),
        collisions=tuple(r.collisions for r in rollouts),
        speedings=tuple(r.speedings for r in rollouts),
    )


def evaluate(
    controller: AvController,
    scenario: Scenario,
    seeds: Sequence[int],
    name: str = "controller",
    threads: int = 1,
    **overrides,
) -> EvaluationReport:
    """
    Roll out a frozen controller on the given seeds. The same seed gives every
    controller the same leader, human drivers, EA parameters and noise stream.
    """
    if not seeds:
        raise InvalidParameterError("evaluation needs at least one seed")
    if isinstance(controller, PolicyFunction):
        controller.actor.eval()
    rollouts = run_batch(
        scenario.platoon_config(seeds[0], controller, **overrides),
        scenario.horizon,
        seeds,
        threads=threads,
        configure=lambda cfg, seed: scenario.platoon_config(seed, controller, **overrides),
    )
    horizon = scenario.horizon or max(leader.duration for leader in scenario.leaders)
    return summarize(name, rollouts, scenario.v_e, horizon)


@dataclass(frozen=True)
class Comparison:
    baseline: str
    candidate: str
    rate_baseline: float
    rate_candidate: float
    delta: metrics.PairedDelta

    @property
    def relative_reduction(self) -> float:
        if self.rate_baseline == 0:
            return 0.0
        return (self.rate_baseline - self.rate_candidate) / self.rate_baseline


def compare(baseline: EvaluationReport, candidate: EvaluationReport, rng: RngStream, n_boot: int = 2000) -> Comparison:
    """Paired bootstrap of candidate minus baseline takeover indicators over matched seeds."""
    if baseline.seeds != candidate.seeds:
        raise InvalidParameterError("paired comparison needs identical seed lists")
    delta = metrics.paired_bootstrap_delta(
        candidate.takeover_indicator, baseline.takeover_indicator, rng, n_boot=n_boot
    )
    return Comparison(baseline.controller, candidate.controller, baseline.stats.rate, candidate.stats.rate, delta)
