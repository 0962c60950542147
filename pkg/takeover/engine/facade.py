# takeover/engine/facade.py
from __future__ import annotations

from typing import Any, Dict, List

from takeover.core.settings import get_settings
from takeover.engine.assets import load_assets
from takeover.engine.config import load_engine_config_file
from takeover.engine.context import EngineContext, PipelineState
from takeover.engine.runner import StepRegistry, run_pipeline
from takeover.engine.steps import register_all
from takeover.logging_config import LoggingContext, get_logger
from takeover.schemas.run_config import RunConfig
from takeover.services.exports import write_jsonl

logger = get_logger("engine.facade")

PIPELINE_LOG = "pipeline_log.jsonl"  # engine config defaults.pipeline_log overrides


def _tail(items: List[Any], n: int) -> List[Any]:
    return items[-n:] if len(items) > n else items


def failure_summary(state: PipelineState) -> Dict[str, Any]:
    """Error of the failing step plus the last log events, for stderr."""
    error = None
    for entry in reversed(state.logs):
        if entry.get("message") == "step_end" and entry.get("step_id") == state.failure_step:
            error = entry.get("error")
            break
    return {
        "status": state.status,
        "failure_step": state.failure_step,
        "error": error,
        "logs_tail": _tail(state.logs, 5),
    }


def run_workflow(run: RunConfig) -> PipelineState:
    """
    Load the workflow pipeline from engine_config/<workflow>.json, run it and
    write the pipeline log next to the other outputs (also on failure).
    """
    settings = get_settings()
    workflow = str(run.workflow)

    # 1) engine config
    cfg = load_engine_config_file(settings.engine_config_dir / f"{workflow}.json")

    # 2) registry
    registry = StepRegistry()
    register_all(registry)

    # 3) context
    output_dir = run.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    ctx = EngineContext(workflow=workflow, run_id=run.run_id(), seed=run.seed, output_dir=output_dir)

    # 4) assets
    assets = load_assets(run, template_path=cfg.template_path)

    # 5) run pipeline
    with LoggingContext(workflow=workflow, run_id=ctx.run_id, seed=run.seed):
        state = run_pipeline(context=ctx, config=cfg, registry=registry, assets=assets, initial_data={})
        log_name = (cfg.defaults or {}).get("pipeline_log", PIPELINE_LOG)
        write_jsonl(state.logs, output_dir / log_name)
        if state.status == "FAILED":
            logger.error("workflow {} failed at step {}", workflow, state.failure_step)
        else:
            logger.info("workflow {} finished, outputs in {}", workflow, output_dir)
    return state
