from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ..llm.gateway import Gateway
from ..llm.types import ChatRequest
from .embedding import HashingEmbedder
from .kmeans import LloydKMeans

# subtask counts reported per benchmark (validation, test); used when m/n are not given
KNOWN_SUBTASK_COUNTS = {
    "hotpotqa": (6, 6),
    "drop": (6, 6),
    "humaneval": (3, 3),
    "mbpp": (4, 4),
    "gsm8k": (6, 6),
    "math": (4, 4),
    "aime": (6, 6),
    "olympiadbench": (4, 4),
}

DESCRIBE_SAMPLE_SIZE = 5


@dataclass
class SubtaskCluster:
    id: int
    members: list[str]
    centroid: list[float] = field(default_factory=list)
    label: str | None = None
    description: str | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"cluster {self.id} has no members")

    @property
    def key(self) -> str:
        """Stable string id used in fitness maps and file names."""
        return f"c{self.id}"

    def to_json(self) -> dict:
        return {"id": self.id, "label": self.label, "members": list(self.members),
                "centroid": [round(float(x), 12) for x in self.centroid],
                "description": self.description}

    @classmethod
    def from_json(cls, data: dict) -> "SubtaskCluster":
        return cls(id=int(data["id"]), members=list(data["members"]), centroid=list(data.get("centroid") or []),
                   label=data.get("label"), description=data.get("description"))


class TaskClusterer(BaseEstimator, ClusterMixin):
    """Group tasks into subtasks by embedding + k-means, or by their ``label`` metadata.

    ``mode`` is ``"embed"``, ``"labels"``, or ``"auto"`` (labels when every task
    carries one).
    """

    def __init__(self, n_clusters: int = 4, mode: str = "auto", embedder=None, random_state: int = 0,
                 n_init: int = 10):
        self.n_clusters = n_clusters
        self.mode = mode
        self.embedder = embedder
        self.random_state = random_state
        self.n_init = n_init

    def _use_labels(self, tasks) -> bool:
        if self.mode == "labels":
            missing = [t.id for t in tasks if not t.label]
            if missing:
                raise ValueError(f"label mode needs a label on every task; missing on {missing[:3]}")
            return True
        if self.mode == "embed":
            return False
        if self.mode != "auto":
            raise ValueError(f"unknown clustering mode {self.mode!r}")
        return all(t.label for t in tasks)

    def fit(self, X, y=None):
        tasks = list(X)
        if not tasks:
            raise ValueError("cannot cluster an empty task list")
        embedder = self.embedder if self.embedder is not None else HashingEmbedder()
        vectors = np.asarray(embedder.transform([t.question for t in tasks]), dtype=float)
        if self._use_labels(tasks):
            names = sorted({t.label for t in tasks})
            raw = np.array([names.index(t.label) for t in tasks])
            labels_for = {i: name for i, name in enumerate(names)}
        elif self.n_clusters == 1:
            raw = np.zeros(len(tasks), dtype=int)
            labels_for = {}
        else:
            km = LloydKMeans(n_clusters=self.n_clusters, n_init=self.n_init, random_state=self.random_state)
            raw = km.fit(vectors).labels_
            labels_for = {}
        # renumber clusters by first appearance so ids do not depend on k-means internals
        order: dict[int, int] = {}
        for r in raw:
            order.setdefault(int(r), len(order))
        self.labels_ = np.array([order[int(r)] for r in raw])
        self.clusters_ = []
        for raw_id, new_id in sorted(order.items(), key=lambda kv: kv[1]):
            idx = np.where(self.labels_ == new_id)[0]
            self.clusters_.append(SubtaskCluster(
                id=new_id,
                members=[tasks[i].id for i in idx],
                centroid=vectors[idx].mean(axis=0).tolist(),
                label=labels_for.get(raw_id),
            ))
        self.cluster_centers_ = np.array([c.centroid for c in self.clusters_])
        self.embedder_ = embedder
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        vectors = np.asarray(self.embedder_.transform([t.question for t in X]), dtype=float)
        d = ((vectors[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return d.argmin(axis=1)


def cluster_tasks(tasks, m: int, embedder=None, seed: int = 0, mode: str = "auto") -> list[SubtaskCluster]:
    """Partition ``tasks`` into subtasks; label mode bypasses k-means entirely."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return TaskClusterer(n_clusters=m, mode=mode, embedder=embedder, random_state=seed).fit(tasks).clusters_


DESCRIBE_SYSTEM = "You are an expert at characterising families of problems."

DESCRIBE_TEMPLATE = """Below are sample questions drawn from one group of related problems.

{questions}

Describe this group of problems in a few sentences: what kind of problems they are, what skills or steps solving them requires, and which mistakes a solver is likely to make. Do not solve the questions."""


def describe_prompt(questions) -> str:
    blocks = "\n\n".join(f"## Question {i}\n{q}" for i, q in enumerate(questions, start=1))
    return DESCRIBE_TEMPLATE.format(questions=blocks)


def describe_subtask(cluster: SubtaskCluster, tasks_by_id: dict, backend, sample_size: int = DESCRIBE_SAMPLE_SIZE,
                     model: str = "optimizer", seed: int = 0, temperature: float = 0.5) -> str:
    """Ask a model to characterise the cluster from sampled questions only.

    Gold answers never enter the prompt.  The description is also stored on
    ``cluster``.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    size = min(sample_size, len(cluster.members))
    picked = random.Random(f"{seed}:describe:{cluster.id}").sample(sorted(cluster.members), size)
    questions = [tasks_by_id[tid].question for tid in picked]
    gateway = backend if isinstance(backend, Gateway) else Gateway(backend)
    request = ChatRequest.build(model, DESCRIBE_SYSTEM, describe_prompt(questions), temperature=temperature)
    description = gateway.complete(request).content.strip()
    cluster.description = description
    return description
