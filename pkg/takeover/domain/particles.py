# takeover/domain/particles.py
"""Weighted particle sets over the evidence-accumulation parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from takeover.core.rng import RngStream
from takeover.errors import InvalidParameterError, PosteriorFormatError

THETA_NAMES: Tuple[str, ...] = ("E0", "d", "E_T", "w1", "w2", "w3")
WEIGHT_TOL = 1e-9
# text round trips lose a few ulps; loaded rows are re-normalized within this
LOAD_WEIGHT_TOL = 1e-6


@dataclass(frozen=True)
class Particle:
    E0: float
    d: float
    E_T: float
    w1: float
    w2: float
    w3: float
    weight: float = 1.0
    distance: float = float("nan")

    @property
    def theta(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in THETA_NAMES], dtype=float)


def check_theta(theta: np.ndarray, *, strict_threshold: bool = True) -> None:
    """Raise unless (E0, d, E_T, w1, w2, w3) satisfies the EA parameter invariants."""
    E0, d, E_T, w1, w2, w3 = (float(x) for x in theta)
    if not np.all(np.isfinite(theta)):
        raise InvalidParameterError(f"non-finite EA parameters {theta.tolist()}")
    weights = (w1, w2, w3)
    if any(w < 0 or w > 1 for w in weights) or abs(sum(weights) - 1.0) > WEIGHT_TOL:
        raise InvalidParameterError(f"EA weights must lie on the simplex, got {weights}")
    if E0 < 0 or d < 0:
        raise InvalidParameterError(f"E0 and d must be >= 0, got E0={E0} d={d}")
    if strict_threshold and not E_T > E0:
        raise InvalidParameterError(f"threshold E_T={E_T} must exceed E0={E0}")


@dataclass
class Posterior:
    """
    Weighted EA particle set. `thetas` has one row per particle in
    THETA_NAMES order; weights are normalized on construction.
    """

    thetas: np.ndarray
    weights: np.ndarray
    generation: int = 0
    tolerance: float = float("inf")
    distances: Optional[np.ndarray] = None
    instance_id: Optional[str] = None
    log: List[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.thetas.shape[0] == 0:
            raise InvalidParameterError("posterior must not be empty")
        if self.thetas.shape[1] != len(THETA_NAMES):
            raise InvalidParameterError(f"theta rows need {len(THETA_NAMES)} columns")
        if self.weights.shape[0] != self.thetas.shape[0]:
            raise InvalidParameterError("one weight per particle required")
        if np.any(self.weights < 0) or not np.isfinite(self.weights).all():
            raise InvalidParameterError("particle weights must be finite and >= 0")
        total = self.weights.sum()
        if total <= 0:
            raise InvalidParameterError("particle weights sum to zero")
        self.weights = self.weights / total

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def particles(self) -> List[Particle]:
        dist = self.distances if self.distances is not None else np.full(len(self), np.nan)
        return [
            Particle(*(float(x) for x in row), weight=float(w), distance=float(dd))
            for row, w, dd in zip(self.thetas, self.weights, dist)
        ]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def column(self, name: str) -> np.ndarray:
        return self.thetas[:, THETA_NAMES.index(name)]

    def sample_index(self, rng: RngStream) -> int:
        return int(rng.choice(len(self), p=self.weights))

    def subset(self, indices: Sequence[int]) -> "Posterior":
        idx = np.asarray(indices, dtype=int)
        return Posterior(
            self.thetas[idx],
            self.weights[idx],
            generation=self.generation,
            tolerance=self.tolerance,
            distances=None if self.distances is None else self.distances[idx],
            instance_id=self.instance_id,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.thetas, columns=list(THETA_NAMES))
        frame["weight"] = self.weights
        if self.distances is not None:
            frame["distance"] = self.distances
        if self.instance_id is not None:
            frame.insert(0, "instance_id", self.instance_id)
        return frame

    @classmethod
    def single(cls, theta: Sequence[float]) -> "Posterior":
        return cls(np.asarray([theta], dtype=float), np.ones(1))


def frame_to_posterior(frame: pd.DataFrame, source: str = "<frame>") -> Posterior:
    missing = [c for c in (*THETA_NAMES, "weight") if c not in frame.columns]
    if missing:
        raise PosteriorFormatError(f"{source}: missing columns {missing}", path=source)
    if frame.empty:
        raise PosteriorFormatError(f"{source}: EA posterior is empty", path=source)
    thetas = frame[list(THETA_NAMES)].to_numpy(dtype=float)
    for row, theta in enumerate(thetas):
        weight_sum = theta[3:].sum()
        if abs(weight_sum - 1.0) > LOAD_WEIGHT_TOL:
            raise PosteriorFormatError(
                f"{source}: row {row} weights sum to {weight_sum}", path=source, row=row
            )
        theta[5] = 1.0 - theta[3] - theta[4]
        try:
            check_theta(theta)
        except InvalidParameterError as exc:
            raise PosteriorFormatError(f"{source}: row {row}: {exc}", path=source, row=row)
    distances = frame["distance"].to_numpy(dtype=float) if "distance" in frame.columns else None
    instance = str(frame["instance_id"].iloc[0]) if "instance_id" in frame.columns else None
    try:
        return Posterior(thetas, frame["weight"].to_numpy(dtype=float), distances=distances, instance_id=instance)
    except InvalidParameterError as exc:
        raise PosteriorFormatError(f"{source}: {exc}", path=source)


def load_ea_posteriors(path: Path | str) -> List[Posterior]:
    """One posterior per `instance_id` when the column is present, else a single one."""
    path = Path(path)
    if not path.exists():
        raise PosteriorFormatError(f"EA posterior file not found: {path}", path=str(path))
    frame = pd.read_csv(path, encoding="utf-8")
    if "instance_id" not in frame.columns:
        return [frame_to_posterior(frame, str(path))]
    return [
        frame_to_posterior(group.reset_index(drop=True), f"{path}[{key}]")
        for key, group in frame.groupby("instance_id", sort=False)
    ]


def load_ea_posterior(path: Path | str) -> Posterior:
    """Load an EA particle file, pooling per-instance posteriors into one set."""
    posteriors = load_ea_posteriors(path)
    if len(posteriors) == 1:
        return posteriors[0]
    thetas = np.vstack([p.thetas for p in posteriors])
    weights = np.concatenate([p.weights / len(posteriors) for p in posteriors])
    return Posterior(thetas, weights)


def save_ea_posteriors(posteriors: Sequence[Posterior], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.concat([p.to_frame() for p in posteriors], ignore_index=True)
    frame.to_csv(path, index=False, encoding="utf-8", float_format="%.17g")
    return path


def default_ea_posterior() -> Posterior:
    from takeover.core.settings import get_settings

    return load_ea_posterior(get_settings().data_dir / "ea_posterior.csv")
