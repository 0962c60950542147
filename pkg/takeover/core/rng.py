# takeover/core/rng.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from takeover.errors import InvalidParameterError

# stream ids used by the platoon and the training loop; fixed so that
# switching the AV controller never shifts another consumer's draws
STREAM_HDV_SPECS = 1
STREAM_EA_PARAMS = 2
STREAM_EA_NOISE = 3
STREAM_POLICY = 4
STREAM_AV_SPEC = 5
STREAM_LEADER = 6
STREAM_SPLIT = 7


@dataclass
class RngStream:
    """
    Seeded random stream. Identical (seed, stream_id) pairs replay identical
    draws; distinct stream ids are independent (numpy SeedSequence spawn keys).
    A stream must have a single consumer.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        seq = np.random.SeedSequence(
            entropy=int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(*self.path, int(self.stream_id)),
        )
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream_id: int) -> "RngStream":
        """Independent sub-stream keyed by this stream's identity plus `stream_id`."""
        return RngStream(self.seed, stream_id, path=(*self.path, int(self.stream_id)))

    def normal(self, mean: float = 0.0, sd: float = 1.0, size=None):
        return self._gen.normal(mean, sd, size=size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size=None, p: Sequence[float] | None = None):
        return self._gen.choice(n, size=size, p=p)

    def torch_seed(self) -> int:
        return int(self._gen.integers(0, 2**63 - 1))


def gaussian_draw(rng: RngStream, mean: float, sd: float) -> float:
    """One draw from N(mean, sd^2); sd == 0 returns `mean` exactly."""
    if sd < 0:
        raise InvalidParameterError(f"standard deviation must be >= 0, got {sd}")
    if sd == 0:
        return float(mean)
    return float(rng.normal(mean, sd))


def derive_seeds(seed: int, n: int) -> list[int]:
    """n per-run seeds derived from a batch seed; stable for a given (seed, index)."""
    state = np.random.SeedSequence(int(seed)).generate_state(max(n, 1), dtype=np.uint32)
    return [int(s) for s in state[:n]]
