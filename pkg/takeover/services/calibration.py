# takeover/services/calibration.py
"""
Likelihood-free calibration of the evidence-accumulation parameters from
observed takeover times: approximate Bayesian computation driven by an
adaptive sequential Monte Carlo sampler.

Free dimensions are (E0, d, E_T, w1, w2); w3 = 1 - w1 - w2.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from takeover.core.kinematics import DT, Role, Trajectory, VehicleState
from takeover.core.rng import RngStream
from takeover.domain.cf_models import CfKind, CfSpec, idm_pid_preset
from takeover.domain.particles import THETA_NAMES, Posterior
from takeover.domain.posteriors import HdvPosterior, row_to_spec
from takeover.errors import CalibrationError, InputError, InvalidParameterError
from takeover.logging_config import get_logger
from takeover.services.intervention import EaParams, dissimilarity_channels, shadow_trajectory
from takeover.services.platoon import PlatoonConfig, pulse_profile, run

log = get_logger("calibration")

FREE_NAMES: Tuple[str, ...] = ("E0", "d", "E_T", "w1", "w2")
PRIOR_BOUNDS: Mapping[str, Tuple[float, float]] = MappingProxyType(
    {"E0": (0.0, 10.0), "d": (0.0, 2.0), "E_T": (10.0, 100.0), "w1": (0.0, 1.0), "w2": (0.0, 1.0)}
)
_LO = np.array([PRIOR_BOUNDS[n][0] for n in FREE_NAMES])
_HI = np.array([PRIOR_BOUNDS[n][1] for n in FREE_NAMES])


@dataclass(frozen=True)
class AbcSettings:
    replicates: int = 5
    quantile: float = 0.5
    min_acceptance: float = 0.01
    kernel_scale: float = 2.0
    pooled: bool = False

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise InvalidParameterError("replicates must be >= 1")
        if not 0.0 < self.quantile < 1.0:
            raise InvalidParameterError("tolerance quantile must lie in (0, 1)")
        if not 0.0 < self.min_acceptance <= 1.0:
            raise InvalidParameterError("min_acceptance must lie in (0, 1]")


# --- prior ------------------------------------------------------------------

def sample_prior_batch(rng: RngStream, n: int) -> np.ndarray:
    """n prior draws as rows of (E0, d, E_T, w1, w2, w3)."""
    out = np.empty((n, len(THETA_NAMES)))
    for j, name in enumerate(("E0", "d", "E_T")):
        lo, hi = PRIOR_BOUNDS[name]
        out[:, j] = rng.uniform(lo, hi, size=n)

    # (w1, w2) uniform on the triangle w1 + w2 <= 1
    kept = np.empty((0, 2))
    while kept.shape[0] < n:
        need = n - kept.shape[0]
        cand = rng.uniform(0.0, 1.0, size=(2 * need + 8, 2))
        kept = np.vstack([kept, cand[cand.sum(axis=1) <= 1.0]])
    out[:, 3:5] = kept[:n]
    out[:, 5] = 1.0 - out[:, 3] - out[:, 4]

    ties = out[:, 0] >= out[:, 2]
    while ties.any():
        out[ties, 0] = rng.uniform(*PRIOR_BOUNDS["E0"], size=int(ties.sum()))
        ties = out[:, 0] >= out[:, 2]
    return out


def sample_prior(rng: RngStream) -> np.ndarray:
    return sample_prior_batch(rng, 1)[0]


def in_support(thetas: np.ndarray) -> np.ndarray:
    free = thetas[:, :5]
    inside = np.all((free >= _LO) & (free <= _HI), axis=1)
    return inside & (thetas[:, 3] + thetas[:, 4] <= 1.0 + 1e-12) & (thetas[:, 0] < thetas[:, 2])


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    width = hi - lo
    y = np.mod(x - lo, 2.0 * width)
    return lo + np.where(y > width, 2.0 * width - y, y)


def perturb(free: np.ndarray, sd: np.ndarray, rng: RngStream) -> np.ndarray:
    """Gaussian kernel step reflected into the prior box and the weight simplex."""
    moved = _reflect(free + rng.standard_normal(free.shape) * sd, _LO, _HI)
    over = moved[:, 3] + moved[:, 4] > 1.0
    w1, w2 = moved[over, 3].copy(), moved[over, 4].copy()
    moved[over, 3], moved[over, 4] = 1.0 - w2, 1.0 - w1
    return moved


def complete_theta(free: np.ndarray) -> np.ndarray:
    return np.column_stack([free, 1.0 - free[:, 3] - free[:, 4]])


# --- observations -------------------------------------------------------------

@dataclass(frozen=True)
class ObservedInstance:
    """One recorded drive: leader and AV traces plus the takeover time (None if censored)."""

    instance_id: str
    leader: Trajectory
    av: Trajectory
    takeover_time: Optional[float]
    shadow_spec: CfSpec
    D_T: float = 1350.0
    TTT_A: float = 68.0

    def __post_init__(self) -> None:
        if len(self.leader) != len(self.av) or self.leader.dt != self.av.dt:
            raise InvalidParameterError(f"instance {self.instance_id}: leader and AV traces are not aligned")
        if len(self.av) < 2:
            raise InvalidParameterError(f"instance {self.instance_id}: trace too short")
        if self.takeover_time is not None and not 0.0 <= self.takeover_time <= self.horizon + 1e-9:
            raise InvalidParameterError(
                f"instance {self.instance_id}: takeover {self.takeover_time} outside [0, {self.horizon}]"
            )

    @property
    def dt(self) -> float:
        return self.av.dt

    @property
    def horizon(self) -> float:
        return self.av.duration


def instance_channels(instance: ObservedInstance, template: EaParams) -> np.ndarray:
    """Φ channels per tick: observed AV vs. shadow driver integrated behind the observed leader."""
    params = EaParams(
        E0=0.0, d=0.0, E_T=math.inf, w1=1.0, w2=0.0, w3=0.0,
        phi_x=template.phi_x, phi_v=template.phi_v, phi_tta=template.phi_tta,
        D_T=instance.D_T, TTT_A=instance.TTT_A,
    )
    av0 = instance.av.samples[0]
    start = VehicleState(1, Role.SHADOW, av0.y, av0.v, av0.a)
    y_sh, v_sh, clamps = shadow_trajectory(
        instance.leader.y, instance.leader.v, start, instance.shadow_spec, instance.dt
    )
    if clamps:
        log.debug("instance {}: shadow clamped {} times", instance.instance_id, clamps)
    return dissimilarity_channels(instance.av.y, instance.av.v, y_sh, v_sh, instance.av.t, params)


def simulate_takeover_batch(
    thetas: np.ndarray,
    channels: np.ndarray,
    template: EaParams,
    rng: RngStream,
    k: int,
    dt: float = DT,
) -> np.ndarray:
    """
    k evidence rollouts per particle against fixed Φ channels.
    Returns takeover times of shape (n_particles, k); NaN marks censored runs.
    """
    if k < 1:
        raise InvalidParameterError("replicate count must be >= 1")
    thetas = np.atleast_2d(thetas)
    n_part = thetas.shape[0]
    n_steps = channels.shape[0] - 1
    E0, d, E_T = thetas[:, 0], thetas[:, 1], thetas[:, 2]

    U = np.clip(channels[:n_steps] @ thetas[:, 3:6].T, 0.0, 1.0)  # (n_steps, P)
    drift = (d[None, :] * U).T  # (P, n_steps)
    noise_sd = template.alpha * template.sigma

    E = np.repeat(E0[:, None], k, axis=1)
    threshold = E_T[:, None]
    times = np.full((n_part, k), np.nan)
    active = E <= threshold
    times[~active] = 0.0
    for j in range(n_steps):
        if not active.any():
            break
        step_e = E + drift[:, j : j + 1]
        if noise_sd > 0:
            step_e = step_e + noise_sd * rng.standard_normal((n_part, k))
        E = np.where(active, np.maximum(0.0, step_e), E)
        crossed = active & (E > threshold)
        times[crossed] = (j + 1) * dt
        active &= ~crossed
    return times


def simulate_takeover(
    theta: Sequence[float], instance: ObservedInstance, rng: RngStream, k: int, template: EaParams
) -> np.ndarray:
    channels = instance_channels(instance, template)
    return simulate_takeover_batch(np.asarray([theta], dtype=float), channels, template, rng, k, instance.dt)[0]


def distance(t_sim: Optional[float], t_obs: Optional[float], horizon_s: float) -> float:
    """|t_sim - t_obs|; both censored scores 0, exactly one censored scores the horizon."""
    sim_c = t_sim is None or math.isnan(t_sim)
    obs_c = t_obs is None or math.isnan(t_obs)
    if sim_c and obs_c:
        return 0.0
    if sim_c or obs_c:
        return float(horizon_s)
    return abs(float(t_sim) - float(t_obs))


def distances_to(times: np.ndarray, t_obs: Optional[float], horizon_s: float) -> np.ndarray:
    censored = np.isnan(times)
    if t_obs is None:
        return np.where(censored, 0.0, horizon_s)
    return np.where(censored, horizon_s, np.abs(times - t_obs))


# --- sampler ------------------------------------------------------------------

@dataclass
class _Prepared:
    channels: np.ndarray
    t_obs: Optional[float]
    horizon: float
    dt: float


def _prepare(observed: Sequence[ObservedInstance], template: EaParams) -> List[_Prepared]:
    return [
        _Prepared(instance_channels(inst, template), inst.takeover_time, inst.horizon, inst.dt)
        for inst in observed
    ]


def _evaluate(
    thetas: np.ndarray,
    prepared: Sequence[_Prepared],
    template: EaParams,
    rng: RngStream,
    settings: AbcSettings,
    threads: int,
) -> np.ndarray:
    """Mean over instances of the median-over-replicates distance, per particle."""
    if thetas.shape[0] == 0:
        return np.empty(0)

    def one(i: int) -> np.ndarray:
        inst = prepared[i]
        times = simulate_takeover_batch(
            thetas, inst.channels, template, rng.child(i), settings.replicates, inst.dt
        )
        return np.median(distances_to(times, inst.t_obs, inst.horizon), axis=1)

    if threads > 1 and len(prepared) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_instance = list(pool.map(one, range(len(prepared))))
    else:
        per_instance = [one(i) for i in range(len(prepared))]
    return np.mean(np.vstack(per_instance), axis=0)


def _kernel_sd(post: Posterior, scale: float) -> np.ndarray:
    free = post.thetas[:, :5]
    mean = post.weights @ free
    sd = np.sqrt(post.weights @ (free - mean) ** 2)
    return np.maximum(scale * sd, 1e-6 * (_HI - _LO))


def _importance_weights(new_free: np.ndarray, prev: Posterior, sd: np.ndarray) -> np.ndarray:
    """Uniform prior over the support divided by the kernel mixture density."""
    z = (new_free[:, None, :] - prev.thetas[None, :, :5]) / sd
    log_k = -0.5 * np.sum(z**2, axis=2)
    log_mix = logsumexp(log_k + np.log(prev.weights)[None, :], axis=1)
    log_w = -log_mix
    return np.exp(log_w - log_w.max())


def abc_asmc(
    observed: Sequence[ObservedInstance],
    n_particles: int,
    generations: int,
    rng: RngStream,
    settings: AbcSettings = AbcSettings(),
    template: Optional[EaParams] = None,
    threads: int = 1,
) -> Posterior:
    """
    Generation 0 draws from the prior with an infinite tolerance. Each later
    generation resamples ancestors by weight, perturbs them, and keeps
    proposals whose distance is within the current tolerance; the next
    tolerance is the `quantile` of the accepted distances.

    Stops at the generation limit, after a complete generation whose
    acceptance rate fell below `min_acceptance`, or when the proposal cap
    (n / min_acceptance) is hit with only part of a generation filled; in
    the last case the previous complete generation is returned.
    """
    if not observed:
        raise InvalidParameterError("calibration needs at least one observed instance")
    if n_particles < 1 or generations < 1:
        raise InvalidParameterError("n_particles and generations must be >= 1")
    if template is None:
        from takeover.services.intervention import default_ea_template

        template = default_ea_template()

    prepared = _prepare(observed, template)
    n = n_particles
    gen_rng = rng.child(0)
    thetas = sample_prior_batch(gen_rng.child(0), n)
    dists = _evaluate(thetas, prepared, template, gen_rng.child(1), settings, threads)
    post = Posterior(thetas, np.ones(n), generation=0, tolerance=math.inf, distances=dists)
    post.log.append(
        {"generation": 0, "tolerance": math.inf, "accepted": n, "proposed": n,
         "acceptance_rate": 1.0, "ess": float(n), "resampled": False}
    )
    log.info("generation 0: {} prior particles, median distance {:.3f}", n, float(np.median(dists)))

    next_tol = float(np.quantile(dists, settings.quantile))
    cap = int(math.ceil(n / settings.min_acceptance))

    for g in range(1, generations):
        tol = min(post.tolerance, next_tol)
        sd = _kernel_sd(post, settings.kernel_scale)
        gen_rng = rng.child(g)
        acc_free: List[np.ndarray] = []
        acc_dist: List[np.ndarray] = []
        n_acc = proposed = batch = 0

        while n_acc < n and proposed < cap:
            size = min(n, cap - proposed)
            batch_rng = gen_rng.child(batch)
            kernel_rng = batch_rng.child(0)
            ancestors = kernel_rng.choice(n, size=size, p=post.weights)
            free = perturb(post.thetas[ancestors, :5], sd, kernel_rng)
            valid = free[:, 0] < free[:, 2]
            cand = complete_theta(free[valid])
            cand_dist = _evaluate(cand, prepared, template, batch_rng.child(1), settings, threads)
            keep = cand_dist <= tol
            acc_free.append(free[valid][keep])
            acc_dist.append(cand_dist[keep])
            n_acc += int(keep.sum())
            proposed += size
            batch += 1

        rate = n_acc / max(proposed, 1)
        if n_acc == 0:
            raise CalibrationError(
                f"generation {g}: no proposal accepted at tolerance {tol:.4g} after {proposed} proposals",
                hint="loosen abc.quantile or raise abc.min_acceptance",
                generation=g,
                tolerance=tol,
            )
        if n_acc < n:
            log.warning(
                "generation {}: only {}/{} accepted before the proposal cap; keeping generation {}",
                g, n_acc, n, post.generation,
            )
            post.log.append(
                {"generation": g, "tolerance": tol, "accepted": n_acc, "proposed": proposed,
                 "acceptance_rate": rate, "ess": float("nan"), "resampled": False, "stopped": "proposal_cap"}
            )
            break

        new_free = np.vstack(acc_free)[:n]
        new_dist = np.concatenate(acc_dist)[:n]
        weights = _importance_weights(new_free, post, sd)
        weights = weights / weights.sum()
        ess = float(1.0 / np.sum(weights**2))
        new_thetas = complete_theta(new_free)

        resampled = ess < n / 2
        if resampled:
            idx = gen_rng.child(10_000).choice(n, size=n, p=weights)
            new_thetas, new_dist, weights = new_thetas[idx], new_dist[idx], np.ones(n)

        history = post.log
        post = Posterior(new_thetas, weights, generation=g, tolerance=tol, distances=new_dist)
        post.log = history + [
            {"generation": g, "tolerance": tol, "accepted": n_acc, "proposed": proposed,
             "acceptance_rate": rate, "ess": ess, "resampled": resampled}
        ]
        log.info(
            "generation {}: tolerance {:.3f} acceptance {:.3f} ess {:.1f}{}",
            g, tol, rate, ess, " (resampled)" if resampled else "",
        )
        next_tol = float(np.quantile(new_dist, settings.quantile))
        if rate < settings.min_acceptance:
            log.info("acceptance {:.4f} below floor; stopping after generation {}", rate, g)
            break

    return post


def calibrate(
    observed: Sequence[ObservedInstance],
    n_particles: int,
    generations: int,
    rng: RngStream,
    settings: AbcSettings = AbcSettings(),
    template: Optional[EaParams] = None,
    threads: int = 1,
) -> List[Posterior]:
    """Pooled: one posterior over all instances. Otherwise one posterior per instance."""
    if settings.pooled:
        return [abc_asmc(observed, n_particles, generations, rng, settings, template, threads)]
    posteriors = []
    for i, inst in enumerate(observed):
        post = abc_asmc([inst], n_particles, generations, rng.child(i), settings, template, threads)
        post.instance_id = inst.instance_id
        posteriors.append(post)
    return posteriors


# --- summaries ----------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSummary:
    names: Tuple[str, ...]
    marginals: Dict[str, Tuple[np.ndarray, np.ndarray]]  # name -> (bin edges, density)
    means: Dict[str, float]
    medians: Dict[str, float]
    correlation: np.ndarray
    degenerate: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def has_degenerate(self) -> bool:
        return bool(self.degenerate)


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values)
    cum = np.cumsum(weights[order])
    cum = cum / cum[-1]
    return float(values[order][min(np.searchsorted(cum, q), len(values) - 1)])


def posterior_summary(post: Posterior, bins: int = 20) -> PosteriorSummary:
    """Weighted marginal histograms (densities) and weighted Pearson correlations."""
    w = post.weights
    x = post.thetas
    mean = w @ x
    centered = x - mean
    cov = (centered * w[:, None]).T @ centered
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    degenerate = tuple(name for name, s in zip(THETA_NAMES, sd) if s <= 1e-12)

    corr = np.zeros_like(cov)
    ok = sd > 1e-12
    corr[np.ix_(ok, ok)] = cov[np.ix_(ok, ok)] / np.outer(sd[ok], sd[ok])
    np.clip(corr, -1.0, 1.0, out=corr)

    marginals = {}
    for j, name in enumerate(THETA_NAMES):
        density, edges = np.histogram(x[:, j], bins=bins, weights=w, density=True)
        marginals[name] = (edges, density)
    return PosteriorSummary(
        names=THETA_NAMES,
        marginals=marginals,
        means={n: float(m) for n, m in zip(THETA_NAMES, mean)},
        medians={n: weighted_quantile(x[:, j], w, 0.5) for j, n in enumerate(THETA_NAMES)},
        correlation=corr,
        degenerate=degenerate,
    )


def summary_frames(summary: PosteriorSummary) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """(marginals in long form, correlation matrix) for export."""
    rows = []
    for name, (edges, density) in summary.marginals.items():
        for lo, hi, dens in zip(edges[:-1], edges[1:], density):
            rows.append({"parameter": name, "bin_low": lo, "bin_high": hi, "density": dens})
    corr = pd.DataFrame(summary.correlation, index=list(summary.names), columns=list(summary.names))
    return pd.DataFrame(rows), corr


# --- synthetic bundles and bundle IO ------------------------------------------

def synthesize_instances(
    theta: Sequence[float],
    n: int,
    rng: RngStream,
    hdv_posterior: HdvPosterior,
    template: Optional[EaParams] = None,
    horizon: float = 120.0,
    av_specs: Optional[Sequence[CfSpec]] = None,
    v_e: float = 26.2,
) -> List[ObservedInstance]:
    """
    Drive the control unit with known EA parameters and record what an
    experimenter would observe: leader and AV traces and the takeover time.
    Leader events are random raised-cosine dips; automation styles alternate.
    """
    if template is None:
        from takeover.services.intervention import default_ea_template

        template = default_ea_template()
    params = template.with_theta(theta)
    styles = list(av_specs) if av_specs else [idm_pid_preset("conservative"), idm_pid_preset("aggressive")]

    instances = []
    for i in range(n):
        inst_rng = rng.child(i)
        event = inst_rng.child(0)
        leader = pulse_profile(
            v_e=v_e,
            depth=float(event.uniform(4.0, 12.0)),
            start=float(event.uniform(10.0, 40.0)),
            duration=float(event.uniform(6.0, 14.0)),
            horizon=horizon,
        )
        cfg = PlatoonConfig(
            leader=leader,
            av_controller=styles[i % len(styles)],
            hdv_posterior=hdv_posterior,
            ea_params=params,
            v_e=v_e,
        )
        rollout = run(cfg, horizon, inst_rng.child(1))
        instances.append(
            ObservedInstance(
                instance_id=f"syn{i:03d}",
                leader=rollout.trajectories[0],
                av=rollout.trajectories[1],
                takeover_time=rollout.takeover_time,
                shadow_spec=rollout.shadow_spec,
                D_T=params.D_T,
                TTT_A=params.TTT_A,
            )
        )
    n_to = sum(inst.takeover_time is not None for inst in instances)
    log.info("synthesized {} instances, {} with takeover", n, n_to)
    return instances


def write_bundle(instances: Sequence[ObservedInstance], directory: Path | str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for inst in instances:
        file_name = f"{inst.instance_id}.csv"
        pd.DataFrame(
            {
                "t": inst.av.t,
                "leader_x": inst.leader.y, "leader_v": inst.leader.v, "leader_a": inst.leader.a,
                "av_x": inst.av.y, "av_v": inst.av.v, "av_a": inst.av.a,
            }
        ).to_csv(directory / file_name, index=False, float_format="%.17g")
        rows.append(
            {
                "instance_id": inst.instance_id,
                "takeover_time": "censored" if inst.takeover_time is None else repr(inst.takeover_time),
                "D_T": inst.D_T,
                "TTT_A": inst.TTT_A,
                "file": file_name,
                **inst.shadow_spec.as_row(),
            }
        )
    manifest = directory / "manifest.csv"
    pd.DataFrame(rows).to_csv(manifest, index=False)
    return manifest


def _parse_takeover(raw, manifest: Path, row: int) -> Optional[float]:
    text = "" if pd.isna(raw) else str(raw).strip().lower()
    if text in ("", "censored"):
        return None
    try:
        return float(text)
    except ValueError:
        raise InputError(f"{manifest}: row {row}: bad takeover_time '{raw}'", path=str(manifest), row=row)


def load_bundle(directory: Path | str) -> List[ObservedInstance]:
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise InputError(f"observed bundle manifest not found: {manifest}", path=str(manifest))
    frame = pd.read_csv(manifest, dtype={"instance_id": str, "takeover_time": str})
    missing = [c for c in ("instance_id", "takeover_time", "D_T", "TTT_A", "file", "model") if c not in frame.columns]
    if missing:
        raise InputError(f"{manifest}: missing columns {missing}", path=str(manifest))

    instances = []
    for row, rec in frame.iterrows():
        traj_path = directory / str(rec["file"])
        if not traj_path.exists():
            raise InputError(f"{manifest}: row {row}: trajectory file not found: {traj_path}", path=str(traj_path))
        traces = pd.read_csv(traj_path)
        kind = CfKind(str(rec["model"]).strip().upper())
        t = traces["t"].to_numpy(dtype=float)
        dt = float(np.round(t[1] - t[0], 9)) if t.size > 1 else DT
        instances.append(
            ObservedInstance(
                instance_id=str(rec["instance_id"]),
                leader=Trajectory.from_arrays(
                    traces["leader_x"], traces["leader_v"], traces.get("leader_a"), dt=dt, role=Role.LEADER
                ),
                av=Trajectory.from_arrays(
                    traces["av_x"], traces["av_v"], traces.get("av_a"), dt=dt, vehicle_id=1, role=Role.AV
                ),
                takeover_time=_parse_takeover(rec["takeover_time"], manifest, int(row)),
                shadow_spec=row_to_spec(kind, rec, manifest, int(row)),
                D_T=float(rec["D_T"]),
                TTT_A=float(rec["TTT_A"]),
            )
        )
    if not instances:
        raise InputError(f"{manifest}: bundle is empty", path=str(manifest))
    return instances


def write_generation_log(posteriors: Sequence[Posterior], path: Path | str) -> Path:
    rows = []
    for post in posteriors:
        for rec in post.log:
            rows.append({"instance_id": post.instance_id or "pooled", **rec})
    path = Path(path)
    pd.DataFrame(rows).to_csv(path, index=False)
    return path
