"""Content-addressed storage: put(bytes) -> content id, get(id) -> bytes.

Backed by an in-memory dict or a local directory; the interface is the
extension point for remote backends. Content ids are SHA-256 hex.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

from .errors import UnknownContent


def content_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class MemoryStore:
    scheme = "mem"

    def __init__(self):
        self._objects: dict[str, bytes] = {}

    def put(self, data: bytes) -> str:
        cid = content_id(data)
        self._objects[cid] = data
        return cid

    def get(self, cid: str) -> bytes:
        try:
            return self._objects[cid]
        except KeyError:
            raise UnknownContent(cid) from None

    def delete(self, cid: str) -> None:
        self._objects.pop(cid, None)

    def __contains__(self, cid: str) -> bool:
        return cid in self._objects

    def ids(self) -> list[str]:
        return sorted(self._objects)


class DirectoryStore:
    scheme = "local"

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, cid: str) -> Path:
        if not all(c in "0123456789abcdef" for c in cid) or len(cid) != 64:
            raise UnknownContent(f"malformed content id {cid!r}")
        return self.root / cid

    def put(self, data: bytes) -> str:
        cid = content_id(data)
        path = self._path(cid)
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return cid

    def get(self, cid: str) -> bytes:
        path = self._path(cid)
        if not path.exists():
            raise UnknownContent(cid)
        return path.read_bytes()

    def delete(self, cid: str) -> None:
        path = self._path(cid)
        if path.exists():
            path.unlink()

    def __contains__(self, cid: str) -> bool:
        return self._path(cid).exists()

    def ids(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if len(p.name) == 64)


def parse_path_ref(ref: str) -> tuple[str, str]:
    """Split 'scheme://content-id' into its parts."""
    scheme, sep, cid = ref.partition("://")
    if not sep or not scheme or not cid:
        raise UnknownContent(f"bad path reference {ref!r}")
    return scheme, cid


def format_path_ref(scheme: str, cid: str) -> str:
    return f"{scheme}://{cid}"
