# takeover/engine/steps/train.py
from __future__ import annotations

import pandas as pd
import torch

from takeover.core.rng import RngStream
from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.logging_config import get_logger
from takeover.rl.networks import save_checkpoint
from takeover.rl.trainer import split_scenarios, train
from takeover.services.exports import write_table

logger = get_logger("steps.train")


def step_train_sac_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    run = assets.run
    out = state.context.output_dir
    torch.set_num_threads(max(1, run.threads))

    rng = RngStream(run.seed)
    scenario = assets.scenario()
    if not run.sac.smoke:
        scenario, _ = split_scenarios(scenario, rng, run.sac.train_fraction)

    ckpt_dir = out / "checkpoints"
    try:
        result = train(
            scenario,
            assets.sac_hyper,
            run.sac.episodes,
            rng,
            checkpoint_dir=ckpt_dir,
            checkpoint_every=run.sac.checkpoint_every,
        )
    finally:
        # divergence checkpoints are part of the output even on failure
        if ckpt_dir.exists():
            for path in sorted(ckpt_dir.glob("*.bin")):
                state.record_file(path)

    state.record_file(save_checkpoint(result.policy, out / "policy.bin"))
    state.record_file(write_table(result.curve, out / "learning_curve.csv"))
    state.record_file(write_table(pd.DataFrame(result.losses), out / "losses.csv"))
    state.data["policy"] = result.policy

    tail = result.curve["moving_avg"].iloc[-1]
    logger.info("training finished after {} episodes, final moving avg {:.3f}", len(result.curve), tail)
    return StepResult(
        status="OK",
        data={"final_moving_avg": float(tail)},
        meta={"episodes": len(result.curve), "checkpoints": len(result.checkpoints)},
    )
