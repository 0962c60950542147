# takeover/engine/steps/common.py
from __future__ import annotations

from typing import List

from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.services.exports import write_json


def horizon_of(assets: RunAssets) -> float:
    """Takeover-CDF horizon: configured horizon or the longest leader profile."""
    if assets.run.platoon.horizon:
        return assets.run.platoon.horizon
    return max(traj.duration for traj in assets.leaders)


def step_manifest_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    """Config snapshot, seed and artifact version: enough to re-run the output bit-identically."""
    name = step.with_.get("file", "manifest.json")
    log_name = step.with_.get("pipeline_log", "pipeline_log.jsonl")
    files: List[str] = sorted(set(state.files) | {log_name})
    path = write_json(
        {
            "workflow": state.context.workflow,
            "run_id": state.context.run_id,
            "seed": state.context.seed,
            "artifact_version": assets.settings.ARTIFACT_VERSION,
            "config": assets.run.snapshot(),
            "files": files,
        },
        state.context.output_dir / name,
    )
    return StepResult(status="OK", data={"manifest": path.name}, meta={"files": len(files)})
