# takeover/engine/config.py
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from takeover.errors import ConfigError


@dataclass
class StepConfig:
    id: str
    use: str
    with_: Dict[str, Any]
    on_fail: str = "STOP"  # STOP | CONTINUE


@dataclass
class EngineConfig:
    workflow: str
    steps: List[StepConfig]
    version: str = "1.0"
    template_path: Optional[str] = None
    defaults: Optional[Dict[str, Any]] = None


def load_engine_config(raw: Dict[str, Any]) -> EngineConfig:
    steps = []
    for s in raw["pipeline"]["steps"]:
        steps.append(
            StepConfig(
                id=s["id"],
                use=s["use"],
                with_=s.get("with", {}),
                on_fail=s.get("on_fail", "STOP"),
            )
        )

    return EngineConfig(
        workflow=raw["workflow"],
        steps=steps,
        version=raw.get("version", "1.0"),
        template_path=raw.get("assets", {}).get("template"),
        defaults=raw.get("defaults"),
    )


def load_engine_config_file(path: Path) -> EngineConfig:
    if not path.exists():
        raise ConfigError(f"workflow pipeline not found: {path}", key_path="workflow")
    try:
        return load_engine_config(json.loads(path.read_text(encoding="utf-8")))
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed workflow pipeline {path}: {exc}", key_path="workflow")
