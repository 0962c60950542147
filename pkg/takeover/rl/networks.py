# takeover/rl/networks.py
"""
Squashed-Gaussian actor, twin Q critics and the portable policy checkpoint.

Checkpoint layout (little-endian):
    magic       6 bytes  b"TKPOL\\0"
    version     uint16
    activation  uint8    (0 tanh, 1 relu)
    n_sizes     uint16
    sizes       uint32 * n_sizes   (obs_dim, hidden..., action_dim)
    a_min,a_max float32 * 2
    log-std     float32 * 2
    n_params    uint32
    params      float32 * n_params (actor parameters in state_dict order)
"""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from takeover.core.rng import RngStream
from takeover.domain.cf_models import A_MAX, A_MIN
from takeover.errors import CheckpointError

MAGIC = b"TKPOL\x00"
VERSION = 1
ACTIVATIONS = {"tanh": (0, nn.Tanh), "relu": (1, nn.ReLU)}
LOG_STD_BOUNDS = (-20.0, 2.5)

# fixed input scaling: gaps ~ tens of metres, speed differences ~ m/s
OBS_SCALE = (50.0, 50.0, 5.0, 5.0, 1.0, 1.0, 1.0)


def _mlp(sizes: Sequence[int], activation: str) -> nn.Sequential:
    act = ACTIVATIONS[activation][1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        layers += [nn.Linear(fan_in, fan_out), act()]
    return nn.Sequential(*layers)


class Actor(nn.Module):
    """state -> (mean, log-std) of a Gaussian squashed by tanh into [a_min, a_max]."""

    def __init__(
        self,
        obs_dim: int = 7,
        hidden: Sequence[int] = (256, 256),
        action_dim: int = 1,
        a_min: float = A_MIN,
        a_max: float = A_MAX,
        log_std_bounds: Tuple[float, float] = LOG_STD_BOUNDS,
        activation: str = "tanh",
    ):
        super().__init__()
        if not log_std_bounds[0] < log_std_bounds[1]:
            raise ValueError(f"log-std bounds must be ordered, got {log_std_bounds}")
        self.obs_dim = obs_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.action_dim = action_dim
        self.a_min, self.a_max = float(a_min), float(a_max)
        self.log_std_bounds = (float(log_std_bounds[0]), float(log_std_bounds[1]))
        self.activation = activation

        self.body = _mlp((obs_dim, *self.hidden), activation)
        self.mean = nn.Linear(self.hidden[-1], action_dim)
        self.log_std = nn.Linear(self.hidden[-1], action_dim)
        self.register_buffer("obs_scale", torch.tensor(OBS_SCALE[:obs_dim], dtype=torch.float32))
        self.register_buffer("a_mid", torch.tensor((a_max + a_min) / 2.0))
        self.register_buffer("a_half", torch.tensor((a_max - a_min) / 2.0))

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.obs_dim, *self.hidden, self.action_dim)

    def forward(self, obs: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.body(obs / self.obs_scale.to(obs.dtype))
        log_std = self.log_std(h).clamp(*self.log_std_bounds)
        return self.mean(h), log_std

    def squash(self, u: torch.Tensor) -> torch.Tensor:
        return self.a_mid.to(u.dtype) + self.a_half.to(u.dtype) * torch.tanh(u)

    def sample(
        self, obs: torch.Tensor, noise: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """
        Reparameterized draw with externally supplied standard-normal noise.
        Returns (action, log-prob of the action, deterministic action).
        """
        mean, log_std = self(obs)
        std = log_std.exp()
        u = mean + std * noise
        action = self.squash(u)
        base = -0.5 * noise.pow(2) - log_std - 0.5 * math.log(2.0 * math.pi)
        # change of variables through tanh and the affine scaling
        correction = torch.log(self.a_half.to(u.dtype) * (1.0 - torch.tanh(u).pow(2)) + 1e-6)
        log_prob = (base - correction).sum(dim=-1, keepdim=True)
        return action, log_prob, self.squash(mean)


class Critic(nn.Module):
    def __init__(self, obs_dim: int = 7, hidden: Sequence[int] = (256, 256), action_dim: int = 1, activation: str = "tanh"):
        super().__init__()
        self.body = _mlp((obs_dim + action_dim, *hidden), activation)
        self.head = nn.Linear(hidden[-1], 1)
        self.register_buffer("obs_scale", torch.tensor(OBS_SCALE[:obs_dim], dtype=torch.float32))

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        x = torch.cat([obs / self.obs_scale.to(obs.dtype), action / A_MAX], dim=-1)
        return self.head(self.body(x))


class TwinCritic(nn.Module):
    def __init__(self, obs_dim: int = 7, hidden: Sequence[int] = (256, 256), action_dim: int = 1, activation: str = "tanh"):
        super().__init__()
        self.q1 = Critic(obs_dim, hidden, action_dim, activation)
        self.q2 = Critic(obs_dim, hidden, action_dim, activation)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.q1(obs, action), self.q2(obs, action)


class PolicyFunction:
    """Frozen-or-live actor exposed as an acceleration policy."""

    def __init__(self, actor: Actor):
        self.actor = actor

    @property
    def a_min(self) -> float:
        return self.actor.a_min

    @property
    def a_max(self) -> float:
        return self.actor.a_max

    def act(self, observation: np.ndarray) -> float:
        return policy_act(self, observation, None, deterministic=True)


def policy_act(
    pf: PolicyFunction, s: np.ndarray, rng: Optional[RngStream], deterministic: bool = False
) -> float:
    """Stochastic: squashed Gaussian sample; deterministic: squashed mean."""
    obs = torch.as_tensor(np.asarray(s, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        if deterministic or rng is None:
            mean, _ = pf.actor(obs)
            action = pf.actor.squash(mean)
        else:
            noise = torch.as_tensor(rng.standard_normal((1, pf.actor.action_dim)), dtype=torch.float32)
            action, _, _ = pf.actor.sample(obs, noise)
    return float(np.clip(action.item(), pf.a_min, pf.a_max))


# --- checkpoint -----------------------------------------------------------------

def _flat_params(actor: Actor) -> np.ndarray:
    chunks = [
        t.detach().cpu().numpy().astype("<f4").ravel()
        for name, t in actor.state_dict().items()
        if not name.endswith(("obs_scale", "a_mid", "a_half"))
    ]
    return np.concatenate(chunks)


def save_checkpoint(pf: PolicyFunction, path: Path | str) -> Path:
    actor = pf.actor
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sizes = actor.sizes
    params = _flat_params(actor)
    header = MAGIC + struct.pack(
        f"<HBH{len(sizes)}I4fI",
        VERSION,
        ACTIVATIONS[actor.activation][0],
        len(sizes),
        *sizes,
        actor.a_min,
        actor.a_max,
        *actor.log_std_bounds,
        params.size,
    )
    path.write_bytes(header + params.tobytes())
    return path


def load_checkpoint(path: Path | str, expected_sizes: Optional[Sequence[int]] = None) -> PolicyFunction:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}", path=str(path))
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a policy checkpoint (bad magic)", path=str(path))
    try:
        offset = len(MAGIC)
        version, act_tag, n_sizes = struct.unpack_from("<HBH", blob, offset)
        offset += struct.calcsize("<HBH")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}", path=str(path))
        sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
        offset += 4 * n_sizes
        a_min, a_max, ls_lo, ls_hi = struct.unpack_from("<4f", blob, offset)
        offset += 16
        (n_params,) = struct.unpack_from("<I", blob, offset)
        offset += 4
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header ({exc})", path=str(path))

    activation = next((name for name, (tag, _) in ACTIVATIONS.items() if tag == act_tag), None)
    if activation is None:
        raise CheckpointError(f"{path}: unknown activation tag {act_tag}", path=str(path))
    if expected_sizes is not None and tuple(expected_sizes) != tuple(sizes):
        raise CheckpointError(
            f"{path}: layer sizes {list(sizes)} do not match expected {list(expected_sizes)}", path=str(path)
        )

    params = np.frombuffer(blob, dtype="<f4", offset=offset)
    actor = Actor(sizes[0], sizes[1:-1], sizes[-1], a_min, a_max, (ls_lo, ls_hi), activation)
    expected = _flat_params(actor).size
    if params.size != n_params or n_params != expected:
        raise CheckpointError(
            f"{path}: parameter count {params.size} (header {n_params}) does not match {expected}",
            path=str(path),
        )

    state: Dict[str, torch.Tensor] = actor.state_dict()
    cursor = 0
    for name, tensor in state.items():
        if name.endswith(("obs_scale", "a_mid", "a_half")):
            continue
        count = tensor.numel()
        state[name] = torch.from_numpy(params[cursor : cursor + count].astype(np.float32)).view_as(tensor)
        cursor += count
    actor.load_state_dict(state)
    actor.eval()
    return PolicyFunction(actor)
