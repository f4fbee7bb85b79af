"""Exception hierarchy for dscg_localizer."""

from __future__ import annotations

from typing import Optional


class DscgError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DscgError, ValueError):
    pass


class ContractError(DscgError, ValueError):
    pass


class NonFiniteError(DscgError, ValueError):
    pass


class ConfigError(DscgError, ValueError):
    pass


class LayoutError(DscgError, ValueError):
    pass


class CheckpointError(DscgError, ValueError):
    pass


class ExtractionError(DscgError, RuntimeError):
    pass


class NumericalError(DscgError, RuntimeError):
    pass


class KnowledgeParseError(DscgError, ValueError):
    def __init__(self, message: str, *, line: int, path: Optional[str] = None) -> None:
        location = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{location}: {message}")
        self.line = line
        self.path = path


class SceneValidationError(DscgError, ValueError):
    def __init__(self, message: str, *, field: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


__all__ = [
    "DscgError",
    "DimensionError",
    "ContractError",
    "NonFiniteError",
    "ConfigError",
    "LayoutError",
    "CheckpointError",
    "ExtractionError",
    "NumericalError",
    "KnowledgeParseError",
    "SceneValidationError",
]
