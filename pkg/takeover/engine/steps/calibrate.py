# takeover/engine/steps/calibrate.py
from __future__ import annotations

import pandas as pd

from takeover.core.rng import RngStream
from takeover.domain.particles import save_ea_posteriors
from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.logging_config import get_logger
from takeover.services.calibration import (
    AbcSettings,
    calibrate,
    load_bundle,
    posterior_summary,
    summary_frames,
    synthesize_instances,
    write_bundle,
    write_generation_log,
)
from takeover.services.exports import write_table

logger = get_logger("steps.calibrate")

STREAM_SYNTHESIS = 0
STREAM_SAMPLER = 1


def step_calibrate_bundle_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    run = assets.run
    abc = run.abc
    if abc.synthetic > 0:
        instances = synthesize_instances(
            abc.synthetic_theta,
            abc.synthetic,
            RngStream(run.seed, STREAM_SYNTHESIS),
            assets.hdv_posterior,
            template=assets.ea_template,
            horizon=abc.synthetic_horizon,
            v_e=run.platoon.v_e,
        )
        manifest = write_bundle(instances, state.context.output_dir / "bundle")
        state.record_file(manifest)
        for inst in instances:
            state.record_file(manifest.parent / f"{inst.instance_id}.csv")
        source = "synthetic"
    else:
        instances = load_bundle(run.paths.observed_bundle)
        source = run.paths.observed_bundle
    state.data["instances"] = instances
    n_to = sum(inst.takeover_time is not None for inst in instances)
    return StepResult(status="OK", meta={"instances": len(instances), "takeovers": n_to, "source": source})


def step_calibrate_abc_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    run = assets.run
    abc = run.abc
    settings = AbcSettings(
        replicates=abc.replicates,
        quantile=abc.quantile,
        min_acceptance=abc.min_acceptance,
        pooled=abc.pooled,
    )
    posteriors = calibrate(
        state.data["instances"],
        abc.particles,
        abc.generations,
        RngStream(run.seed, STREAM_SAMPLER),
        settings,
        template=assets.ea_template,
        threads=run.threads,
    )
    state.data["posteriors"] = posteriors
    return StepResult(
        status="OK",
        meta={
            "posteriors": len(posteriors),
            "generations": [p.generation for p in posteriors],
            "final_tolerance": [p.tolerance for p in posteriors],
        },
    )


def step_calibrate_export_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    out = state.context.output_dir
    posteriors = state.data["posteriors"]
    state.record_file(save_ea_posteriors(posteriors, out / "posterior.csv"))
    state.record_file(write_generation_log(posteriors, out / "generation_log.csv"))

    marginals, correlations = [], []
    for post in posteriors:
        summary = posterior_summary(post, bins=int(step.with_.get("bins", 20)))
        marg, corr = summary_frames(summary)
        label = post.instance_id or "pooled"
        marg.insert(0, "instance_id", label)
        corr = corr.reset_index().rename(columns={"index": "parameter"})
        corr.insert(0, "instance_id", label)
        corr["degenerate"] = ",".join(summary.degenerate)
        marginals.append(marg)
        correlations.append(corr)
    state.record_file(write_table(pd.concat(marginals, ignore_index=True), out / "marginals.csv"))
    state.record_file(write_table(pd.concat(correlations, ignore_index=True), out / "correlation.csv"))
    return StepResult(status="OK", meta={"particles": int(sum(len(p) for p in posteriors))})
