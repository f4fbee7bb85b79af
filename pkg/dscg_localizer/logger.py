"""JSON line logging for the CLI and the training loop."""

from __future__ import annotations

import json
import logging
import os
import time
from typing import Any, Dict, Optional

LEVEL_ENV = "DSCG_LOG_LEVEL"
RECORD_FIELDS = ("step", "scene_id", "epoch", "counts", "duration_ms")


class JsonFormatter(logging.Formatter):
    """One JSON object per record; ``extra_fields`` are merged at the top level."""

    def format(self, record: logging.LogRecord) -> str:  # noqa: D401 - inherited docstring
        payload: Dict[str, Any] = {
            "level": record.levelname,
            "time": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(record.created)),
            "message": record.getMessage(),
        }
        for attr in RECORD_FIELDS:
            value = getattr(record, attr, None)
            if value is not None:
                payload[attr] = value
        payload.update(getattr(record, "extra_fields", None) or {})
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False, default=str)


def _level_from_env(default: int) -> int:
    name = os.environ.get(LEVEL_ENV, "").strip().upper()
    if not name:
        return default
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else default


def get_logger(name: str = "dscg_localizer", level: Optional[int] = None) -> logging.Logger:
    """Package logger writing JSON lines to stderr; ``DSCG_LOG_LEVEL`` sets the default level."""
    logger = logging.getLogger(name)
    if level is not None:
        logger.setLevel(level)
    if logger.handlers:
        return logger
    handler = logging.StreamHandler()
    handler.setFormatter(JsonFormatter())
    logger.addHandler(handler)
    logger.propagate = False
    if level is None:
        logger.setLevel(_level_from_env(logging.INFO))
    return logger


class LogTimer:
    """Logs ``message`` with the elapsed time when the block exits.

    The block may fill ``timer.counts``; it is emitted with the record.
    """

    def __init__(
        self,
        logger: logging.Logger,
        message: str,
        *,
        step: Optional[str] = None,
        scene_id: Optional[str] = None,
        extra: Optional[Dict[str, Any]] = None,
        level: int = logging.INFO,
    ) -> None:
        self.logger = logger
        self.message = message
        self.step = step
        self.scene_id = scene_id
        self.extra = extra or {}
        self.level = level
        self.counts: Dict[str, int] = {}
        self.start = 0.0

    def __enter__(self) -> "LogTimer":
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:  # noqa: D401 - standard context manager signature
        fields = {
            "step": self.step,
            "scene_id": self.scene_id,
            "counts": self.counts or None,
            "duration_ms": int((time.perf_counter() - self.start) * 1000),
        }
        if exc:
            self.logger.error(
                f"{self.message} failed: {exc}",
                extra={**fields, "extra_fields": {**self.extra, "error": str(exc), "error_type": type(exc).__name__}},
            )
        else:
            self.logger.log(self.level, self.message, extra={**fields, "extra_fields": self.extra})


__all__ = ["JsonFormatter", "LEVEL_ENV", "get_logger", "LogTimer"]
