"""Backports for Python < 3.11."""

try:
    from enum import StrEnum
except ImportError:  # Python 3.10
    from enum import Enum

    class StrEnum(str, Enum):
        """Equivalent of enum.StrEnum (3.11+) for explicit string values."""

        __str__ = str.__str__
        __format__ = str.__format__


__all__ = ["StrEnum"]
