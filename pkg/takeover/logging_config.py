# takeover/logging_config.py
import sys
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, Optional

from loguru import logger

from takeover.core.settings import get_settings

# context for every log line of a run
workflow_var: ContextVar[Optional[str]] = ContextVar("workflow", default=None)
run_id_var: ContextVar[Optional[str]] = ContextVar("run_id", default=None)
seed_var: ContextVar[Optional[int]] = ContextVar("seed", default=None)

_CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<blue>workflow={extra[workflow]}</blue> | <yellow>run_id={extra[run_id]}</yellow> | "
    "<magenta>seed={extra[seed]}</magenta> | <level>{message}</level>"
)
_FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} | "
    "workflow={extra[workflow]} | run_id={extra[run_id]} | seed={extra[seed]} | {message}"
)


def get_context_info() -> Dict[str, Any]:
    """Context fields currently bound for logging."""
    return {
        "workflow": workflow_var.get(),
        "run_id": run_id_var.get(),
        "seed": seed_var.get(),
    }


def _patch_context(record: Dict[str, Any]) -> None:
    for key, value in get_context_info().items():
        record["extra"].setdefault(key, value)


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    """Configure loguru sinks: colored console plus rotating file and error logs."""
    settings = get_settings()
    level = (level or settings.LOG_LEVEL).upper()

    logger.remove()
    logger.configure(
        extra={"workflow": None, "run_id": None, "seed": None}, patcher=_patch_context
    )

    logger.add(
        sys.stderr,
        format=_CONSOLE_FORMAT,
        level=level,
        colorize=True,
        backtrace=False,
        diagnose=False,
    )

    if not settings.LOG_TO_FILE:
        return

    directory = Path(log_dir or settings.LOG_DIR)
    directory.mkdir(parents=True, exist_ok=True)

    logger.add(
        directory / "takeover.log",
        format=_FILE_FORMAT,
        level="DEBUG",
        rotation=settings.LOG_ROTATION,
        retention=settings.LOG_RETENTION,
        compression="zip",
    )
    logger.add(
        directory / "errors.log",
        format=_FILE_FORMAT,
        level="ERROR",
        rotation=settings.LOG_ROTATION,
        retention=settings.LOG_RETENTION,
        compression="zip",
    )


def get_logger(name: Optional[str] = None):
    """Logger bound to the current run context."""
    if name:
        return logger.bind(component=name, **get_context_info())
    return logger


def set_context(
    workflow: Optional[str] = None, run_id: Optional[str] = None, seed: Optional[int] = None
) -> None:
    if workflow is not None:
        workflow_var.set(workflow)
    if run_id is not None:
        run_id_var.set(run_id)
    if seed is not None:
        seed_var.set(seed)


def clear_context() -> None:
    workflow_var.set(None)
    run_id_var.set(None)
    seed_var.set(None)


class LoggingContext:
    """Bind workflow/run_id/seed for the duration of a block."""

    def __init__(
        self,
        workflow: Optional[str] = None,
        run_id: Optional[str] = None,
        seed: Optional[int] = None,
    ):
        self.workflow = workflow
        self.run_id = run_id
        self.seed = seed
        self._tokens: list = []

    def __enter__(self):
        if self.workflow is not None:
            self._tokens.append((workflow_var, workflow_var.set(self.workflow)))
        if self.run_id is not None:
            self._tokens.append((run_id_var, run_id_var.set(self.run_id)))
        if self.seed is not None:
            self._tokens.append((seed_var, seed_var.set(self.seed)))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        for var, token in reversed(self._tokens):
            var.reset(token)
        self._tokens.clear()
