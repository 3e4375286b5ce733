from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path

from .types import ChatResponse


class MemoryCache:
    def __init__(self):
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> ChatResponse | None:
        with self._lock:
            data = self._data.get(key)
        return ChatResponse.from_json(data, cached=True) if data is not None else None

    def put(self, key: str, response: ChatResponse) -> None:
        with self._lock:
            self._data[key] = response.to_json()


class DiskCache:
    """Content-addressed cache: one JSON file per request digest."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, key: str) -> ChatResponse | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            return None
        return ChatResponse.from_json(data, cached=True)

    def put(self, key: str, response: ChatResponse) -> None:
        with self._lock_for(key):
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(response.to_json(), fh, sort_keys=True, ensure_ascii=False)
            os.replace(tmp, self._path(key))
