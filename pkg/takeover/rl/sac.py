# takeover/rl/sac.py
"""Soft actor-critic with twin critics, target networks and a learned temperature."""
from __future__ import annotations

import copy
import math
import threading
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from takeover.core.rng import RngStream
from takeover.domain.cf_models import A_MAX, A_MIN
from takeover.errors import InvalidParameterError, TrainingDivergenceError
from takeover.logging_config import get_logger
from takeover.rl.env import ACTION_DIM, OBS_DIM
from takeover.rl.networks import LOG_STD_BOUNDS, Actor, PolicyFunction, TwinCritic

log = get_logger("sac")


@dataclass(frozen=True)
class SacHyper:
    actor_lr: float = 1e-5
    critic_lr: float = 1e-5
    temperature_lr: float = 3e-4
    discount: float = 0.90
    hidden_size: int = 256
    hidden_layers: int = 2
    reward_scale: float = 0.75
    update_cycles: int = 25
    update_interval: int = 10
    batch_size: int = 8196
    log_std_min: float = LOG_STD_BOUNDS[0]
    log_std_max: float = LOG_STD_BOUNDS[1]
    replay_capacity: int = 1_000_000
    tau: float = 5e-3
    target_entropy: float = -float(ACTION_DIM)
    initial_temperature: float = 1.0
    warmup_steps: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise InvalidParameterError(f"discount must lie in [0, 1], got {self.discount}")
        if not self.log_std_min < self.log_std_max:
            raise InvalidParameterError("log-std bounds must be ordered")
        if min(self.batch_size, self.update_cycles, self.update_interval, self.replay_capacity) < 1:
            raise InvalidParameterError("batch size, cycles, interval and capacity must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidParameterError("tau must lie in (0, 1]")

    @property
    def hidden(self) -> Tuple[int, ...]:
        return (self.hidden_size,) * self.hidden_layers


class ReplayBuffer:
    """Ring buffer of (s, a, r, s', done); appends are serialized by a lock."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, action_dim: int = ACTION_DIM):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros((self.capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros((self.capacity, 1), dtype=np.float32)
        self.next_obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.dones = np.zeros((self.capacity, 1), dtype=np.float32)
        self._cursor = 0
        self._size = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._size

    def add(self, s: np.ndarray, a: float, r: float, s_next: np.ndarray, done: bool) -> None:
        with self._lock:
            i = self._cursor
            self.obs[i] = s
            self.actions[i] = a
            self.rewards[i] = r
            self.next_obs[i] = s_next
            self.dones[i] = float(done)
            self._cursor = (i + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: RngStream) -> Dict[str, torch.Tensor]:
        if self._size < batch_size:
            raise InvalidParameterError(f"replay holds {self._size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": torch.from_numpy(self.obs[idx]),
            "actions": torch.from_numpy(self.actions[idx]),
            "rewards": torch.from_numpy(self.rewards[idx]),
            "next_obs": torch.from_numpy(self.next_obs[idx]),
            "dones": torch.from_numpy(self.dones[idx]),
        }


@dataclass(frozen=True)
class LossReport:
    critic_loss: float
    actor_loss: float
    temperature_loss: float
    temperature: float
    entropy: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _batch_stats(batch: Dict[str, torch.Tensor]) -> Dict[str, Dict[str, float]]:
    stats = {}
    for name, tensor in batch.items():
        t = tensor.detach().double()
        finite = torch.isfinite(t)
        stats[name] = {
            "mean": float(t[finite].mean()) if finite.any() else math.nan,
            "std": float(t[finite].std()) if finite.sum() > 1 else math.nan,
            "min": float(t[finite].min()) if finite.any() else math.nan,
            "max": float(t[finite].max()) if finite.any() else math.nan,
            "non_finite": int((~finite).sum()),
        }
    return stats


class SacAgent:
    def __init__(self, hyper: SacHyper, torch_seed: int, a_min: float = A_MIN, a_max: float = A_MAX):
        self.hyper = hyper
        torch.manual_seed(torch_seed)
        self.generator = torch.Generator().manual_seed(torch_seed)
        self.actor = Actor(OBS_DIM, hyper.hidden, ACTION_DIM, a_min, a_max, (hyper.log_std_min, hyper.log_std_max))
        self.critic = TwinCritic(OBS_DIM, hyper.hidden, ACTION_DIM)
        self.critic_target = copy.deepcopy(self.critic)
        for p in self.critic_target.parameters():
            p.requires_grad_(False)
        self.log_temperature = torch.tensor(math.log(hyper.initial_temperature), requires_grad=True)

        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=hyper.actor_lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=hyper.critic_lr)
        self.temperature_opt = torch.optim.Adam([self.log_temperature], lr=hyper.temperature_lr)
        self.updates = 0

    @property
    def temperature(self) -> float:
        return float(self.log_temperature.exp())

    @property
    def policy(self) -> PolicyFunction:
        return PolicyFunction(self.actor)

    def _noise(self, n: int) -> torch.Tensor:
        return torch.randn((n, ACTION_DIM), generator=self.generator)

    def critic_loss(self, batch: Dict[str, torch.Tensor]) -> torch.Tensor:
        h = self.hyper
        with torch.no_grad():
            next_a, next_logp, _ = self.actor.sample(batch["next_obs"], self._noise(batch["next_obs"].shape[0]))
            tq1, tq2 = self.critic_target(batch["next_obs"], next_a)
            soft_v = torch.min(tq1, tq2) - self.log_temperature.exp() * next_logp
            target = batch["rewards"] + h.discount * (1.0 - batch["dones"]) * soft_v
        q1, q2 = self.critic(batch["obs"], batch["actions"])
        return F.mse_loss(q1, target) + F.mse_loss(q2, target)

    def actor_loss(self, obs: torch.Tensor, noise: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        action, logp, _ = self.actor.sample(obs, noise)
        q1, q2 = self.critic(obs, action)
        loss = (self.log_temperature.exp().detach() * logp - torch.min(q1, q2)).mean()
        return loss, logp

    def temperature_loss(self, logp: torch.Tensor) -> torch.Tensor:
        return -(self.log_temperature * (logp.detach() + self.hyper.target_entropy)).mean()

    def update(self, batch: Dict[str, torch.Tensor]) -> LossReport:
        c_loss = self.critic_loss(batch)
        self._check(c_loss, "critic", batch)
        self.critic_opt.zero_grad()
        c_loss.backward()
        self.critic_opt.step()

        for p in self.critic.parameters():
            p.requires_grad_(False)
        a_loss, logp = self.actor_loss(batch["obs"], self._noise(batch["obs"].shape[0]))
        self._check(a_loss, "actor", batch)
        self.actor_opt.zero_grad()
        a_loss.backward()
        self.actor_opt.step()
        for p in self.critic.parameters():
            p.requires_grad_(True)

        t_loss = self.temperature_loss(logp)
        self._check(t_loss, "temperature", batch)
        self.temperature_opt.zero_grad()
        t_loss.backward()
        self.temperature_opt.step()

        self.soft_update()
        self.updates += 1
        return LossReport(
            critic_loss=float(c_loss),
            actor_loss=float(a_loss),
            temperature_loss=float(t_loss),
            temperature=self.temperature,
            entropy=float(-logp.mean()),
        )

    @torch.no_grad()
    def soft_update(self) -> None:
        tau = self.hyper.tau
        for target, source in zip(self.critic_target.parameters(), self.critic.parameters()):
            target.mul_(1.0 - tau).add_(source, alpha=tau)

    def _check(self, loss: torch.Tensor, which: str, batch: Dict[str, torch.Tensor]) -> None:
        if torch.isfinite(loss):
            return
        stats = _batch_stats(batch)
        log.error("non-finite {} loss after {} updates; batch stats {}", which, self.updates, stats)
        raise TrainingDivergenceError(
            f"non-finite {which} loss after {self.updates} updates",
            update=self.updates,
            batch_stats=stats,
        )


def sac_update(batch: Dict[str, torch.Tensor], agent: SacAgent, hyper: Optional[SacHyper] = None) -> LossReport:
    """One gradient step on critics, actor and temperature, then Polyak averaging."""
    if hyper is not None and hyper is not agent.hyper:
        raise InvalidParameterError("agent was built with different hyperparameters")
    return agent.update(batch)
