# takeover/engine/steps/report.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from takeover.domain.particles import THETA_NAMES, load_ea_posteriors
from takeover.engine.assets import RunAssets
from takeover.engine.config import StepConfig
from takeover.engine.context import PipelineState, StepResult
from takeover.errors import InputError
from takeover.logging_config import get_logger
from takeover.services.exports import read_jsonl

logger = get_logger("steps.report")


def _records(path: Path) -> Optional[List[Dict[str, Any]]]:
    if not path.exists():
        return None
    frame = pd.read_csv(path)
    return frame.replace({np.nan: None}).to_dict(orient="records")


def _simulation_summary(source: Path) -> Optional[Dict[str, Any]]:
    path = source / "metrics.jsonl"
    if not path.exists():
        return None
    records = read_jsonl(path)
    times = [r["takeover_time"] for r in records if r.get("takeover_time") is not None]
    return {
        "runs": len(records),
        "takeovers": len(times),
        "rate": len(times) / len(records) if records else 0.0,
        "median_takeover_time": float(np.median(times)) if times else None,
        "collisions": int(sum(r.get("collisions", 0) for r in records)),
        "speedings": int(sum(r.get("speedings", 0) for r in records)),
    }


def _posterior_summary(source: Path) -> Optional[List[Dict[str, Any]]]:
    path = source / "posterior.csv"
    if not path.exists():
        return None
    rows = []
    for post in load_ea_posteriors(path):
        row: Dict[str, Any] = {"instance_id": post.instance_id or "pooled", "particles": len(post), "ess": post.ess}
        for name in THETA_NAMES:
            row[name] = float(post.weights @ post.column(name))
        rows.append(row)
    return rows


def _learning_summary(source: Path) -> Optional[Dict[str, Any]]:
    path = source / "learning_curve.csv"
    if not path.exists():
        return None
    curve = pd.read_csv(path)
    if curve.empty:
        return None
    return {
        "episodes": int(curve["episode"].iloc[-1]),
        "first_moving_avg": float(curve["moving_avg"].iloc[0]),
        "final_moving_avg": float(curve["moving_avg"].iloc[-1]),
        "best_return": float(curve["return"].max()),
    }


def step_report_collect_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    run = assets.run
    source = Path(run.paths.source or run.paths.output)
    manifest_path = source / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"no manifest.json in {source}; not a workflow output directory", path=str(source))
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    context = {
        "source": source.as_posix(),
        "manifest": manifest,
        "simulation": _simulation_summary(source),
        "aggregate": _records(source / "aggregate.csv"),
        "rates": _records(source / "rates.csv"),
        "comparisons": _records(source / "comparisons.csv"),
        "l2_by_position": _records(source / "l2_by_position.csv"),
        "posteriors": _posterior_summary(source),
        "generations": _records(source / "generation_log.csv"),
        "learning": _learning_summary(source),
    }
    state.data["report_context"] = context
    found = sorted(k for k, v in context.items() if v is not None and k not in ("source", "manifest"))
    logger.info("report sources in {}: {}", source, ", ".join(found) or "none")
    return StepResult(status="OK", meta={"sections": found, "source_workflow": manifest.get("workflow")})


def step_report_render_v1(state: PipelineState, step: StepConfig, assets: RunAssets) -> StepResult:
    template_name = assets.template_path or step.with_.get("template", "report.md.j2")
    template = assets.jinja_env.get_template(template_name)
    text = template.render(**state.data["report_context"])
    out = state.context.output_dir / step.with_.get("file", "report.md")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    state.record_file(out)
    return StepResult(status="OK", data={"report": out.name}, meta={"chars": len(text)})
