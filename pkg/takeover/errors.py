# takeover/errors.py
from __future__ import annotations

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base error for every failure the CLI knows how to report."""

    exit_code: int = 1

    def __init__(self, message: str, *, hint: Optional[str] = None, **details: Any):
        super().__init__(message)
        self.message = message
        self.hint = hint
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": False,
            "error": {
                "type": type(self).__name__,
                "message": self.message,
                "hint": self.hint,
                "exit_code": self.exit_code,
                **self.details,
            },
        }


class InputError(LabError):
    exit_code = 2


class ConfigError(InputError):
    """Bad run configuration; `key_path` names the offending dotted key."""

    def __init__(self, message: str, *, key_path: str = "", **details: Any):
        super().__init__(message, key_path=key_path, **details)
        self.key_path = key_path


class ProfileLoadError(InputError):
    def __init__(self, message: str, *, path: str = "", row: Optional[int] = None):
        super().__init__(message, path=path, row=row)
        self.row = row


class PosteriorFormatError(InputError):
    pass


class CalibrationError(LabError):
    exit_code = 3


class CheckpointError(LabError):
    exit_code = 4


class TrainingDivergenceError(LabError):
    exit_code = 5


# numerical precondition failures; ValueError so library callers can catch them generically
class InvalidParameterError(ValueError):
    exit_code = 2


class NonFiniteStateError(ValueError):
    exit_code = 2


class CollisionStateError(ValueError):
    exit_code = 2


class EquilibriumError(ValueError):
    exit_code = 2


def exit_code_for(exc: BaseException) -> int:
    return int(getattr(exc, "exit_code", 1))
