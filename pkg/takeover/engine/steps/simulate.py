# takeover/engine/steps/simulate.py
from __future__ import annotations

import numpy as np
import pandas as pd

from takeover.core.rng import derive_seeds
from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.engine.steps.common import horizon_of
from takeover.logging_config import get_logger
from takeover.services import metrics
from takeover.services.exports import write_batch_index, write_jsonl, write_rollout, write_table
from takeover.services.platoon import run_batch

logger = get_logger("steps.simulate")


def step_simulate_batch_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    run = assets.run
    scenario = assets.scenario()
    overrides = {
        "force_takeover_at": run.platoon.force_takeover_at,
        "suppress_takeover": run.platoon.suppress_takeover,
        "vehicle_length": run.platoon.vehicle_length,
    }
    controller = assets.av_controller
    seeds = derive_seeds(run.seed, run.runs)
    rollouts = run_batch(
        scenario.platoon_config(seeds[0], controller, **overrides),
        run.platoon.horizon,
        seeds,
        threads=run.threads,
        configure=lambda cfg, seed: scenario.platoon_config(seed, controller, **overrides),
    )
    state.data["rollouts"] = rollouts
    takeovers = sum(r.takeover is not None for r in rollouts)
    logger.info("simulated {} rollouts, {} with takeover", len(rollouts), takeovers)
    return StepResult(status="OK", meta={"runs": len(rollouts), "takeovers": takeovers})


def step_simulate_export_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    rollouts = state.data["rollouts"]
    out = state.context.output_dir
    v_e = assets.run.platoon.v_e

    entries = []
    if step.with_.get("write_rollouts", True):
        for i, rollout in enumerate(rollouts):
            path = state.record_file(write_rollout(rollout, out / "rollouts" / f"run_{i:05d}.csv"))
            entries.append({"index": i, "seed": rollout.seed, "file": path.relative_to(out).as_posix()})
    else:
        entries = [{"index": i, "seed": r.seed, "file": None} for i, r in enumerate(rollouts)]
    state.record_file(write_batch_index(entries, out / "rollout_index.json"))

    state.record_file(write_jsonl((metrics.rollout_record(r, v_e) for r in rollouts), out / "metrics.jsonl"))

    if len(rollouts) >= 2:
        agg = metrics.aggregate_expectation(rollouts, v_e)
        roles = [t.samples[0].role.value for t in rollouts[0].trajectories]
        state.record_file(write_table(pd.DataFrame(agg.as_records(roles)), out / "aggregate.csv"))

    stats = metrics.takeover_cdf([r.takeover_time for r in rollouts], horizon_of(assets))
    grid, cdf = stats.curve(dt=1.0)
    state.record_file(write_table(pd.DataFrame({"t": grid, "cdf": cdf}), out / "takeover_cdf.csv"))

    curve = metrics.expected_evidence_curve(rollouts)
    dt = rollouts[0].trajectories[0].dt
    state.record_file(
        write_table(
            pd.DataFrame({"tick": np.arange(1, curve.size + 1), "t": np.arange(1, curve.size + 1) * dt, "mean_E": curve}),
            out / "evidence_curve.csv",
        )
    )
    return StepResult(
        status="OK",
        data={"takeover_rate": stats.rate},
        meta={"takeover_rate": stats.rate, "files": len(entries)},
    )
