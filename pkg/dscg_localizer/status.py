"""Idempotency markers for dataset generation and evaluation steps."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional

from .constants import DONE_DIRNAME
from .io import Filesystem, join_uri


def step_done_path(root: str | Path, step_name: str) -> str:
    return join_uri(root, DONE_DIRNAME, f"{step_name}.done")


def mark_done(fs: Filesystem, root: str | Path, step_name: str, summary: Optional[Dict[str, Any]] = None) -> None:
    payload = json.dumps(summary, ensure_ascii=False, sort_keys=True) if summary else "ok"
    fs.write_text(step_done_path(root, step_name), payload)


def is_done(fs: Filesystem, root: str | Path, step_name: str) -> bool:
    return fs.exists(step_done_path(root, step_name))


def read_done(fs: Filesystem, root: str | Path, step_name: str) -> Optional[Dict[str, Any]]:
    marker = step_done_path(root, step_name)
    if not fs.exists(marker):
        return None
    content = fs.read_text(marker).strip()
    if not content or content == "ok":
        return None
    try:
        return json.loads(content)
    except json.JSONDecodeError:
        return None


def clear_done(fs: Filesystem, root: str | Path, step_name: str) -> None:
    marker = step_done_path(root, step_name)
    if fs.exists(marker):
        fs.remove(marker)


__all__ = ["step_done_path", "mark_done", "is_done", "read_done", "clear_done"]
