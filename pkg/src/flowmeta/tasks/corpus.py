from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DuplicateId, FormatError, TooFewTasks


@dataclass(frozen=True)
class TaskInstance:
    id: str
    question: str
    answer: str = ""
    metadata: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if not self.question:
            raise ValueError(f"task {self.id!r}: question must be non-empty")

    @property
    def label(self) -> str | None:
        return self.metadata.get("label")

    def to_json(self) -> dict:
        out = {"id": self.id, "question": self.question, "answer": self.answer}
        if self.metadata:
            out["metadata"] = self.metadata
        return out


def _task_from_obj(obj, lineno: int) -> TaskInstance:
    if not isinstance(obj, dict):
        raise FormatError(lineno, "expected a JSON object")
    for key in ("id", "question", "answer"):
        if key not in obj:
            raise FormatError(lineno, f"missing field {key!r}")
    if not isinstance(obj["question"], str) or not obj["question"].strip():
        raise FormatError(lineno, "field 'question' must be a non-empty string")
    meta = obj.get("metadata") or {}
    if not isinstance(meta, dict):
        raise FormatError(lineno, "field 'metadata' must be an object")
    return TaskInstance(id=str(obj["id"]), question=obj["question"], answer=str(obj["answer"]),
                        metadata=dict(meta))


def load_corpus(path) -> list[TaskInstance]:
    """Read a JSON-lines corpus (fields id/question/answer, optional metadata)."""
    tasks: list[TaskInstance] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(lineno, f"invalid JSON: {exc.msg}") from None
            task = _task_from_obj(obj, lineno)
            if task.id in seen:
                raise DuplicateId(task.id, lineno)
            seen[task.id] = lineno
            tasks.append(task)
    return tasks


def write_corpus(tasks, path) -> None:
    Path(path).write_text("".join(json.dumps(t.to_json(), ensure_ascii=False) + "\n" for t in tasks),
                          encoding="utf-8")


def corpus_digest(tasks) -> str:
    h = hashlib.sha256()
    for t in tasks:
        h.update(json.dumps(t.to_json(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def split_corpus(tasks, ratio=(1, 4), seed: int = 0):
    """Shuffle with ``seed`` and cut into (validation, test) at ``ratio``.

    The validation side gets ``floor(n * v / (v + t))`` tasks; any rounding
    remainder lands on the test side.
    """
    v, t = ratio
    if v <= 0 or t <= 0:
        raise ValueError("ratio parts must be positive integers")
    tasks = list(tasks)
    if len(tasks) < v + t:
        raise TooFewTasks(f"need at least {v + t} tasks for a {v}:{t} split, got {len(tasks)}")
    order = list(range(len(tasks)))
    random.Random(seed).shuffle(order)
    n_val = len(tasks) * v // (v + t)
    validation = [tasks[i] for i in order[:n_val]]
    test = [tasks[i] for i in order[n_val:]]
    return validation, test
