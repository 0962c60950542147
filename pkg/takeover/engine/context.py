# takeover/engine/context.py
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional


@dataclass(frozen=True)
class EngineContext:
    workflow: str
    run_id: str  # hash of the config snapshot, never wall-clock derived
    seed: int
    output_dir: Path


@dataclass
class StepResult:
    status: str  # "OK" | "FAILED"
    data: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PipelineState:
    """
    Mutable state bag during one run. `logs` stays JSON-serializable;
    `data` may hold in-memory objects handed from step to step.
    """

    context: EngineContext
    data: Dict[str, Any] = field(default_factory=dict)
    logs: list[dict] = field(default_factory=list)
    status: str = "RUNNING"  # RUNNING | SUCCEEDED | FAILED
    failure_step: Optional[str] = None
    exception: Optional[BaseException] = None
    files: list[str] = field(default_factory=list)

    def record_file(self, path: Path) -> Path:
        rel = Path(path).resolve().relative_to(self.context.output_dir.resolve())
        self.files.append(rel.as_posix())
        return path
