"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from collections.abc import Mapping

from .errors import ConfigError
from .tasks.corpus import TaskInstance


def check_tasks(X, require_answers: bool = False, min_count: int = 1) -> list[TaskInstance]:
    """Coerce ``X`` to a list of tasks; dicts with id/question/answer are accepted."""
    if isinstance(X, (str, bytes)) or X is None:
        raise TypeError("expected an iterable of tasks")
    tasks = []
    for i, item in enumerate(X):
        if isinstance(item, TaskInstance):
            tasks.append(item)
        elif isinstance(item, Mapping):
            try:
                tasks.append(TaskInstance(id=str(item["id"]), question=item["question"],
                                          answer=str(item.get("answer", "")),
                                          metadata=dict(item.get("metadata") or {})))
            except KeyError as exc:
                raise ValueError(f"task {i} is missing {exc.args[0]!r}") from None
        else:
            raise TypeError(f"task {i} has unsupported type {type(item).__name__}")
    if len(tasks) < min_count:
        raise ValueError(f"need at least {min_count} task(s), got {len(tasks)}")
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        dup = next(x for x in ids if ids.count(x) > 1)
        raise ValueError(f"duplicate task id {dup!r}")
    if require_answers:
        missing = [t.id for t in tasks if not t.answer]
        if missing:
            raise ValueError(f"tasks without a gold answer: {missing[:3]}")
    return tasks


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def check_fraction(value, name: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {value}")
    return value


def check_split_ratio(ratio) -> tuple[int, int]:
    try:
        v, t = (int(x) for x in ratio)
    except (TypeError, ValueError):
        raise ConfigError(f"split ratio must be two integers, got {ratio!r}") from None
    if v < 1 or t < 1:
        raise ConfigError("split ratio parts must be >= 1")
    return v, t
