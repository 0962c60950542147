# takeover/engine/steps/evaluate.py
from __future__ import annotations

from itertools import combinations

import numpy as np
import pandas as pd

from takeover.core.rng import RngStream, derive_seeds
from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.logging_config import get_logger
from takeover.rl.env import ACTION_DIM, OBS_DIM
from takeover.rl.networks import load_checkpoint
from takeover.rl.trainer import compare, evaluate, split_scenarios
from takeover.services import metrics
from takeover.services.exports import write_jsonl, write_table

logger = get_logger("steps.evaluate")

STREAM_BOOTSTRAP = 99


def step_evaluate_controllers_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    """
    Matched-seed rollouts per controller on the held-out split. Training with
    the same seed produces the complementary split.
    """
    run = assets.run
    scenario = assets.scenario()
    if not run.sac.smoke:
        _, scenario = split_scenarios(scenario, RngStream(run.seed), run.sac.train_fraction)

    overrides = {
        "force_takeover_at": run.platoon.force_takeover_at,
        "suppress_takeover": run.platoon.suppress_takeover,
        "vehicle_length": run.platoon.vehicle_length,
    }
    seeds = derive_seeds(run.seed, run.runs)
    policy_sizes = (OBS_DIM, *assets.sac_hyper.hidden, ACTION_DIM)
    reports = {}
    for name in run.controllers:
        # a controller listed twice is evaluated twice under its own label
        label = name if name not in reports else f"{name}.{sum(k.split('.')[0] == name for k in reports) + 1}"
        if name == "policy":
            controller = load_checkpoint(run.paths.checkpoint, policy_sizes)
        else:
            controller = assets.baseline(name)
        reports[label] = evaluate(controller, scenario, seeds, name=label, threads=run.threads, **overrides)
        logger.info("{}: takeover rate {:.3f} over {} runs", label, reports[label].stats.rate, len(seeds))
    state.data["reports"] = reports
    return StepResult(status="OK", meta={name: rep.stats.rate for name, rep in reports.items()})


def step_evaluate_export_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    out = state.context.output_dir
    reports = state.data["reports"]
    n_boot = int(step.with_.get("n_boot", 2000))

    records = [rec for rep in reports.values() for rec in rep.run_records()]
    state.record_file(write_jsonl(records, out / "evaluation.jsonl"))

    rates, cdfs, curves, l2 = [], [], [], []
    for name, rep in reports.items():
        rates.append(
            {
                "controller": name,
                "runs": rep.stats.n_total,
                "takeovers": rep.stats.n_takeovers,
                "rate": rep.stats.rate,
                "collisions": int(sum(rep.collisions)),
                "speedings": int(sum(rep.speedings)),
            }
        )
        grid, cdf = rep.stats.curve(dt=1.0)
        cdfs.append(pd.DataFrame({"controller": name, "t": grid, "cdf": cdf}))
        ticks = np.arange(1, rep.evidence_curve.size + 1)
        curves.append(pd.DataFrame({"controller": name, "tick": ticks, "mean_E": rep.evidence_curve}))
        if rep.aggregate is not None:
            for rec in rep.aggregate.as_records():
                l2.append({"controller": name, **rec})

    state.record_file(write_table(pd.DataFrame(rates), out / "rates.csv"))
    state.record_file(write_table(pd.concat(cdfs, ignore_index=True), out / "takeover_cdf.csv"))
    state.record_file(write_table(pd.concat(curves, ignore_index=True), out / "evidence_curve.csv"))
    if l2:
        state.record_file(write_table(pd.DataFrame(l2), out / "l2_by_position.csv"))

    rows = []
    boot = RngStream(state.context.seed, STREAM_BOOTSTRAP)
    for i, (a, b) in enumerate(combinations(reports, 2)):
        cmp = compare(reports[a], reports[b], boot.child(i), n_boot=n_boot)
        pvalue = metrics.paired_one_sided_pvalue(
            reports[a].takeover_indicator, reports[b].takeover_indicator
        )
        rows.append(
            {
                "baseline": cmp.baseline,
                "candidate": cmp.candidate,
                "rate_baseline": cmp.rate_baseline,
                "rate_candidate": cmp.rate_candidate,
                "delta_mean": cmp.delta.mean,
                "delta_ci_low": cmp.delta.ci_low,
                "delta_ci_high": cmp.delta.ci_high,
                "excludes_zero": cmp.delta.excludes_zero,
                "relative_reduction": cmp.relative_reduction,
                "p_baseline_greater": pvalue,
            }
        )
    if rows:
        state.record_file(write_table(pd.DataFrame(rows), out / "comparisons.csv"))
    return StepResult(status="OK", data={"rates": rates}, meta={"comparisons": len(rows)})
