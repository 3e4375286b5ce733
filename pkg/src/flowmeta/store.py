"""Run directories: archive entries, cluster manifests, reports and phase markers.

Layout under a run directory::

    manifest.json        run id, config snapshot, corpus digests, phase markers
    clusters/*.json      cluster manifests
    archive/00001.json   one file per archive entry
    archive.index        entry ids, one per line, append-only
    reports/*.json       evaluation reports

All JSON is UTF-8 with sorted keys.  Every file is written to a temporary
name and renamed into place, so a killed process never leaves a torn file.
"""

from __future__ import annotations

import copy
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import CorruptRun, NoScoredEntry, StorageError

MANIFEST = "manifest.json"
INDEX = "archive.index"


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class ArchiveEntry:
    """One discovered workflow and its per-subtask fitness."""

    name: str
    thought: str
    code: str
    generation: tuple[int, int] = (0, 0)
    parent: int | None = None
    role: str = "inner"
    subtask: str | None = None
    status: str = "ok"
    error: str | None = None
    reflection: str | None = None
    fitness: dict[str, float] = field(default_factory=dict)
    scores: dict[str, dict] = field(default_factory=dict)
    id: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def program(self):
        from .workflow.validate import parse_program

        return parse_program(self.code)

    def mean_fitness(self, keys=None) -> float:
        keys = list(keys) if keys is not None else sorted(self.fitness)
        if not keys:
            return 0.0
        return sum(self.fitness.get(k, 0.0) for k in keys) / len(keys)

    def to_json(self) -> dict:
        data = asdict(self)
        data["generation"] = list(self.generation)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "ArchiveEntry":
        data = dict(data)
        data["generation"] = tuple(data.get("generation", (0, 0)))
        return cls(**data)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunStore:
    """Storage for one run.  ``root=None`` keeps everything in memory."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self.manifest: dict = {}
        self._entries: list[ArchiveEntry] = []
        self._files: dict[str, object] = {}

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, root, run_id: str, config: dict, corpus: dict | None = None) -> "RunStore":
        store = cls(root)
        if store.root is not None and (store.root / MANIFEST).exists():
            raise StorageError(f"run directory {store.root} already holds a run")
        stamp = _now()
        store.manifest = {
            "run_id": run_id,
            "config": copy.deepcopy(config),
            "corpus": dict(corpus or {}),
            "clusters": {},
            "phases": [],
            "finalized": False,
            "created": stamp,
            "updated": stamp,
        }
        if store.root is not None:
            (store.root / "archive").mkdir(parents=True, exist_ok=True)
            atomic_write(store.root / INDEX, "")
        store._save_manifest()
        return store

    @classmethod
    def open(cls, root) -> "RunStore":
        store = cls(root)
        path = store.root / MANIFEST
        if not path.exists():
            raise CorruptRun(f"{path} is missing")
        try:
            store.manifest = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise CorruptRun(f"{path}: {exc}") from exc
        index = store.root / INDEX
        ids = []
        if index.exists():
            ids = [int(x) for x in index.read_text(encoding="utf-8").split()]
        for eid in ids:
            fpath = store._entry_path(eid)
            if not fpath.exists():
                raise CorruptRun(f"archive entry {fpath.relative_to(store.root)} is missing")
            try:
                store._entries.append(ArchiveEntry.from_json(json.loads(fpath.read_text(encoding="utf-8"))))
            except (ValueError, TypeError) as exc:
                raise CorruptRun(f"archive entry {fpath.relative_to(store.root)}: {exc}") from exc
        for name in store.manifest.get("clusters", {}).values():
            if not (store.root / name).exists():
                raise CorruptRun(f"cluster manifest {name} is missing")
        return store

    @property
    def run_id(self) -> str:
        return self.manifest.get("run_id", "")

    @property
    def config(self) -> dict:
        return copy.deepcopy(self.manifest.get("config", {}))

    @property
    def finalized(self) -> bool:
        return bool(self.manifest.get("finalized"))

    def _save_manifest(self):
        self.manifest["updated"] = _now()
        if self.root is not None:
            atomic_write(self.root / MANIFEST, dumps(self.manifest))

    def _check_open(self):
        if self.finalized:
            raise StorageError("Finalized: run is read-only")

    def finalize(self):
        self.manifest["finalized"] = True
        self._save_manifest()

    # -- archive -------------------------------------------------------------

    def _entry_path(self, eid: int) -> Path:
        return self.root / "archive" / f"{eid:05d}.json"

    def _write_entry(self, entry: ArchiveEntry):
        if self.root is not None:
            atomic_write(self._entry_path(entry.id), dumps(entry.to_json()))

    def _write_index(self):
        if self.root is not None:
            atomic_write(self.root / INDEX, "".join(f"{e.id}\n" for e in self._entries))

    def append_entry(self, entry: ArchiveEntry) -> int:
        """Persist ``entry`` with the next id; names are made unique within the run."""
        self._check_open()
        entry.id = (self._entries[-1].id + 1) if self._entries else 1
        names = {e.name for e in self._entries}
        if entry.name in names or not entry.name:
            entry.name = f"{entry.name or 'unnamed'}#{entry.id}"
        self._write_entry(entry)
        self._entries.append(entry)
        self._write_index()
        return entry.id

    def update_entry(self, entry: ArchiveEntry) -> None:
        self._check_open()
        if entry.id is None or self.get(entry.id) is not entry:
            raise StorageError(f"entry {entry.id} is not in this archive")
        self._write_entry(entry)

    def get(self, eid: int) -> ArchiveEntry:
        for e in self._entries:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def entries(self) -> list[ArchiveEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def best_for_subtask(self, subtask: str) -> ArchiveEntry:
        """Highest-fitness valid entry on ``subtask``; ties go to the earliest generation."""
        scored = [e for e in self._entries if e.ok and subtask in e.fitness]
        if not scored:
            raise NoScoredEntry(f"no scored entry for subtask {subtask!r}")
        return min(scored, key=lambda e: (-e.fitness[subtask], tuple(e.generation), e.id))

    def truncate(self, length: int) -> None:
        """Drop entries past ``length`` (used when resuming from a phase marker)."""
        dropped = self._entries[length:]
        self._entries = self._entries[:length]
        self._write_index()
        if self.root is not None:
            for e in dropped:
                self._entry_path(e.id).unlink(missing_ok=True)

    # -- clusters, reports, phases -------------------------------------------

    def write_clusters(self, name: str, clusters) -> str:
        rel = f"clusters/{name}.json"
        payload = [c.to_json() for c in clusters]
        self._files[rel] = payload
        if self.root is not None:
            atomic_write(self.root / rel, dumps(payload))
        self.manifest.setdefault("clusters", {})[name] = rel
        self._save_manifest()
        return rel

    def read_clusters(self, name: str):
        from .tasks.clustering import SubtaskCluster

        rel = self.manifest.get("clusters", {}).get(name)
        if rel is None:
            return None
        if self.root is None:
            data = self._files[rel]
        else:
            try:
                data = json.loads((self.root / rel).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise CorruptRun(f"cluster manifest {rel}: {exc}") from exc
        return [SubtaskCluster.from_json(d) for d in data]

    def write_report(self, name: str, payload) -> str:
        rel = f"reports/{name}.json"
        self._files[rel] = payload
        if self.root is not None:
            atomic_write(self.root / rel, dumps(payload))
        return rel

    def write_text_report(self, name: str, text: str) -> str:
        rel = f"reports/{name}.txt"
        self._files[rel] = text
        if self.root is not None:
            atomic_write(self.root / rel, text)
        return rel

    def read_report(self, name: str):
        rel = f"reports/{name}.json"
        if self.root is None:
            return self._files.get(rel)
        path = self.root / rel
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    @property
    def phases(self) -> list[dict]:
        return list(self.manifest.get("phases", []))

    def last_phase(self) -> dict | None:
        phases = self.manifest.get("phases", [])
        return phases[-1] if phases else None

    def has_phase(self, name: str) -> bool:
        return any(p["name"] == name for p in self.manifest.get("phases", []))

    def mark_phase(self, name: str, state: dict | None = None) -> None:
        if self.has_phase(name):
            raise StorageError(f"phase {name!r} already recorded")
        self.manifest.setdefault("phases", []).append(
            {"name": name, "archive_len": len(self._entries), "state": copy.deepcopy(state or {})})
        self._save_manifest()

    def rewind_to_last_phase(self) -> dict | None:
        """Discard archive entries written after the last phase marker; return that marker."""
        last = self.last_phase()
        self.truncate(last["archive_len"] if last else 0)
        return last
