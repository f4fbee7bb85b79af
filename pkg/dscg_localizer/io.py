"""Storage for scenes, checkpoints, logs and reports.

Local paths and URLs (``memory://``, ``s3://`` ...) resolve through
:func:`fsspec.core.url_to_fs`, so every operation accepts either.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path, PurePath
from typing import IO, Any, Dict, Tuple, Union

from fsspec.core import url_to_fs
from fsspec.spec import AbstractFileSystem

PathLike = Union[str, PurePath]
HASH_CHUNK = 1 << 20


def is_remote(path: PathLike) -> bool:
    protocol, sep, _ = str(path).partition("://")
    return bool(sep) and protocol not in ("", "file")


def join_uri(base: PathLike, *parts: PathLike) -> str:
    segments = [s for s in (str(part).strip("/") for part in parts) if s]
    if not is_remote(base):
        return str(Path(base).joinpath(*segments))
    return "/".join([str(base).rstrip("/"), *segments])


def parent_uri(path: PathLike) -> str:
    if not is_remote(path):
        return str(Path(path).parent)
    return str(path).rstrip("/").rsplit("/", 1)[0]


@dataclass(frozen=True, slots=True)
class FileInfo:
    path: str
    size: int
    checksum_sha256: str


class Filesystem:
    """Text, JSON and byte access on top of whichever fsspec backend a path names."""

    def resolve(self, path: PathLike) -> Tuple[AbstractFileSystem, str]:
        backend, location = url_to_fs(str(path))
        return backend, location

    def open(self, path: PathLike, mode: str = "rb") -> IO[Any]:
        backend, location = self.resolve(path)
        if "b" in mode:
            return backend.open(location, mode)
        # no newline translation: written files are identical on every platform
        return backend.open(location, mode, encoding="utf-8", newline="" if "w" in mode else None)

    def exists(self, path: PathLike) -> bool:
        backend, location = self.resolve(path)
        return bool(backend.exists(location))

    def makedirs(self, path: PathLike) -> None:
        backend, location = self.resolve(path)
        backend.makedirs(location, exist_ok=True)

    def remove(self, path: PathLike) -> None:
        backend, location = self.resolve(path)
        if backend.exists(location):
            backend.rm_file(location)

    def read_text(self, path: PathLike) -> str:
        with self.open(path, "rt") as handle:
            return handle.read()

    def write_text(self, path: PathLike, content: str) -> None:
        self._make_parent(path)
        with self.open(path, "wt") as handle:
            handle.write(content)

    def read_bytes(self, path: PathLike) -> bytes:
        with self.open(path, "rb") as handle:
            return handle.read()

    def write_bytes(self, path: PathLike, content: bytes) -> None:
        self._make_parent(path)
        with self.open(path, "wb") as handle:
            handle.write(content)

    def read_json(self, path: PathLike) -> Any:
        return json.loads(self.read_text(path))

    def write_json(self, path: PathLike, payload: Any) -> None:
        self.write_text(path, json.dumps(payload, indent=2, ensure_ascii=False, sort_keys=True) + "\n")

    def compute_checksums(self, path: PathLike) -> FileInfo:
        digest = hashlib.sha256()
        size = 0
        with self.open(path, "rb") as handle:
            while chunk := handle.read(HASH_CHUNK):
                digest.update(chunk)
                size += len(chunk)
        return FileInfo(path=str(path), size=size, checksum_sha256=digest.hexdigest())

    def _make_parent(self, path: PathLike) -> None:
        parent = parent_uri(path)
        if parent and not self.exists(parent):
            self.makedirs(parent)


__all__ = ["Filesystem", "FileInfo", "PathLike", "is_remote", "join_uri", "parent_uri"]
