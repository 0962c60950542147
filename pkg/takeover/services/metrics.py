# takeover/services/metrics.py
"""Disturbance norms, amplification ratios and takeover statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from takeover.core.kinematics import Trajectory
from takeover.core.rng import RngStream
from takeover.errors import InvalidParameterError
from takeover.services.platoon import Rollout

RATIO_FLOOR = 1e-3
RATIO_CAP = 100.0


def l2_speed_error(traj: Trajectory, v_e: float) -> Tuple[float, np.ndarray]:
    """Squared L2 norm of v - v_E (dt-weighted) and its running prefix sum."""
    if len(traj) == 0:
        raise InvalidParameterError("cannot compute a norm over an empty trajectory")
    running = np.cumsum(traj.dt * (traj.v - v_e) ** 2)
    return float(running[-1]), running


def amplification_ratio(
    follower_norm: float, leader_norm: float, floor: float = RATIO_FLOOR
) -> float:
    """sqrt(follower) / max(sqrt(leader), floor), clamped to [0, 100]."""
    if follower_norm < 0 or leader_norm < 0:
        raise InvalidParameterError("squared norms must be >= 0")
    ratio = np.sqrt(follower_norm) / max(np.sqrt(leader_norm), floor)
    return float(min(RATIO_CAP, max(0.0, ratio)))


@dataclass(frozen=True)
class DisturbanceProfile:
    norms: np.ndarray  # (n_vehicles,) squared norms, front to back
    running: np.ndarray  # (n_vehicles, n_ticks)

    @property
    def root_norms(self) -> np.ndarray:
        return np.sqrt(self.norms)

    def ratios(self, floor: float = RATIO_FLOOR) -> np.ndarray:
        """Consecutive amplification ratios vehicle k vs. k-1."""
        return np.array(
            [amplification_ratio(self.norms[k], self.norms[k - 1], floor) for k in range(1, len(self.norms))]
        )


def disturbance_profile(rollout: Rollout, v_e: float) -> DisturbanceProfile:
    pairs = [l2_speed_error(traj, v_e) for traj in rollout.trajectories]
    return DisturbanceProfile(
        norms=np.array([p[0] for p in pairs]),
        running=np.vstack([p[1] for p in pairs]),
    )


@dataclass(frozen=True)
class AggregateNorms:
    n: int
    mean: np.ndarray
    sd: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    root_mean: np.ndarray

    def as_records(self, roles: Optional[Sequence[str]] = None) -> List[Dict[str, float]]:
        return [
            {
                "position": k,
                "role": roles[k] if roles else None,
                "n": self.n,
                "mean_sq_l2": float(self.mean[k]),
                "sd_sq_l2": float(self.sd[k]),
                "ci95_low": float(self.ci_low[k]),
                "ci95_high": float(self.ci_high[k]),
                "mean_root_l2": float(self.root_mean[k]),
            }
            for k in range(len(self.mean))
        ]


def aggregate_norms(norms: np.ndarray, confidence: float = 0.95) -> AggregateNorms:
    norms = np.asarray(norms, dtype=float)
    if norms.ndim != 2 or norms.shape[0] < 2:
        raise InvalidParameterError("aggregation needs at least two rollouts")
    n = norms.shape[0]
    mean = norms.mean(axis=0)
    sd = norms.std(axis=0, ddof=1)
    half = stats.norm.ppf(0.5 + confidence / 2.0) * sd / np.sqrt(n)
    return AggregateNorms(n, mean, sd, mean - half, mean + half, np.sqrt(norms).mean(axis=0))


def aggregate_expectation(rollouts: Sequence[Rollout], v_e: float) -> AggregateNorms:
    """Per-position mean, sd and 95% normal CI of full-horizon squared norms."""
    if len(rollouts) < 2:
        raise InvalidParameterError("aggregation needs at least two rollouts")
    sizes = {r.n_vehicles for r in rollouts}
    if len(sizes) > 1:
        raise InvalidParameterError(f"mixed platoon sizes in batch: {sorted(sizes)}")
    norms = np.vstack([disturbance_profile(r, v_e).norms for r in rollouts])
    return aggregate_norms(norms)


@dataclass(frozen=True)
class TakeoverStats:
    times: np.ndarray  # sorted uncensored takeover times
    n_total: int
    horizon: float

    @property
    def n_takeovers(self) -> int:
        return int(self.times.size)

    @property
    def rate(self) -> float:
        return self.n_takeovers / self.n_total if self.n_total else 0.0

    def cdf_at(self, t) -> np.ndarray:
        """Sub-distribution CDF: censored runs never count."""
        counts = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return counts / max(self.n_total, 1)

    def curve(self, dt: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
        grid = np.arange(0.0, self.horizon + dt / 2, dt)
        return grid, self.cdf_at(grid)


def takeover_cdf(times: Sequence[Optional[float]], horizon: float) -> TakeoverStats:
    observed = []
    for t in times:
        if t is None or (isinstance(t, float) and np.isnan(t)):
            continue
        if t < 0 or t > horizon + 1e-9:
            raise InvalidParameterError(f"takeover time {t} outside [0, {horizon}]")
        observed.append(float(t))
    return TakeoverStats(times=np.sort(np.asarray(observed, dtype=float)), n_total=len(times), horizon=horizon)


def expected_evidence_curve(rollouts: Sequence[Rollout]) -> np.ndarray:
    """Mean evidence per tick; each run's evidence is held at its last value after takeover."""
    if not rollouts:
        raise InvalidParameterError("no rollouts to aggregate")
    n = max(r.n_ticks - 1 for r in rollouts)
    curves = np.empty((len(rollouts), n))
    for i, r in enumerate(rollouts):
        e = r.ea_trace.E
        fill = e[-1] if e.size else r.ea_params.E0
        curves[i, : e.size] = e
        curves[i, e.size :] = fill
    return curves.mean(axis=0)


@dataclass(frozen=True)
class PairedDelta:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0


def paired_bootstrap_delta(
    a: Sequence[float], b: Sequence[float], rng: RngStream, n_boot: int = 2000, confidence: float = 0.95
) -> PairedDelta:
    """Bootstrap CI of mean(a - b) over matched pairs."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if diff.ndim != 1 or diff.size == 0:
        raise InvalidParameterError("paired samples must be equally long and nonempty")
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    tail = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return PairedDelta(float(diff.mean()), float(lo), float(hi), int(diff.size))


def paired_one_sided_pvalue(greater: Sequence[float], lesser: Sequence[float]) -> float:
    """p-value of a paired t-test for mean(greater - lesser) > 0."""
    a, b = np.asarray(greater, dtype=float), np.asarray(lesser, dtype=float)
    if np.allclose(a, b):
        return 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


def rollout_record(rollout: Rollout, v_e: float) -> Dict[str, object]:
    """One structured metric record per rollout."""
    profile = disturbance_profile(rollout, v_e)
    return {
        "seed": rollout.seed,
        "takeover_time": rollout.takeover_time,
        "censored": rollout.takeover is None,
        "sq_l2": [float(x) for x in profile.norms],
        "root_l2": [float(x) for x in profile.root_norms],
        "amplification": [float(x) for x in profile.ratios()],
        "collisions": rollout.collisions,
        "speedings": rollout.speedings,
        "shadow_clamps": rollout.shadow_clamps,
    }
