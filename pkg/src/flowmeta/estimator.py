"""Estimator-style front end: ``fit`` searches for a workflow, ``score`` runs the test phase."""

from __future__ import annotations

import logging

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import BackendError, ExecutionError, MalformedOutput
from .optim.config import OptimizerConfig
from .optim.engine import as_gateway, run_meta_optimization, run_test_phase
from .store import RunStore
from .validation import check_positive_int, check_tasks
from .workflow.interpreter import execute_program
from .workflow.ir import ExecutionLimits

log = logging.getLogger(__name__)


class AdaptFlow(BaseEstimator):
    """Bi-level workflow search wrapped as an estimator.

    ``X`` is a list of tasks (:class:`~flowmeta.tasks.TaskInstance` or dicts
    with id/question/answer).  ``backend`` is any chat backend, for example a
    :class:`~flowmeta.llm.ScriptedBackend`.

    After ``fit``: ``workflow_`` (the final program), ``best_entry_``,
    ``archive_``, ``clusters_``, ``counters_`` and ``store_``.
    """

    def __init__(self, backend=None, n_subtasks: int = 3, n_test_clusters: int | None = None, n_outer: int = 3,
                 n_inner: int = 6, epsilon: float = 0.02, reflection: bool = True, adapt: bool = True,
                 cluster_mode: str = "auto", metric: str = "solve_rate_math", random_state: int = 0,
                 concurrency: int = 1, run_dir=None, run_id: str = "estimator"):
        self.backend = backend
        self.n_subtasks = n_subtasks
        self.n_test_clusters = n_test_clusters
        self.n_outer = n_outer
        self.n_inner = n_inner
        self.epsilon = epsilon
        self.reflection = reflection
        self.adapt = adapt
        self.cluster_mode = cluster_mode
        self.metric = metric
        self.random_state = random_state
        self.concurrency = concurrency
        self.run_dir = run_dir
        self.run_id = run_id

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(n_outer=self.n_outer, n_inner=self.n_inner, epsilon=self.epsilon,
                               reflection=self.reflection, adapt=self.adapt, metric=self.metric,
                               seed=self.random_state, concurrency=self.concurrency)

    def fit(self, X, y=None):
        if self.backend is None:
            raise ValueError("AdaptFlow needs a backend")
        tasks = check_tasks(X, require_answers=y is None)
        if y is not None:
            y = [str(a) for a in y]
            if len(y) != len(tasks):
                raise ValueError(f"X has {len(tasks)} tasks but y has {len(y)} answers")
            tasks = [type(t)(id=t.id, question=t.question, answer=a, metadata=t.metadata) for t, a in zip(tasks, y)]
        m = check_positive_int(self.n_subtasks, "n_subtasks")
        config = self._config()
        root = None if self.run_dir is None else f"{self.run_dir}/{self.run_id}"
        self.gateway_ = as_gateway(self.backend)
        self.store_ = RunStore.create(root, self.run_id, {"optimizer": config.to_json()})
        final, archive = run_meta_optimization(tasks, config, self.gateway_, m=m, store=self.store_,
                                               mode=self.cluster_mode)
        self.store_.finalize()
        self.best_entry_ = final
        self.workflow_ = final.program
        self.archive_ = archive
        self.clusters_ = self.store_.read_clusters("validation")
        self.counters_ = self.store_.last_phase()["state"]["counters"]
        return self

    def predict(self, X) -> list[str]:
        """Answers of the final (unadapted) workflow; a failed task yields ``""``."""
        check_is_fitted(self, "workflow_")
        tasks = check_tasks(X)
        config = self._config()
        limits = ExecutionLimits(max_calls=config.max_calls_per_task, max_wall_time=config.max_wall_time,
                                 loop_cap=config.loop_cap)
        out = []
        for task in tasks:
            try:
                trace = execute_program(self.workflow_, task, self.gateway_, limits, model=config.executor_model,
                                        seed=config.seed)
                out.append(trace.final.content)
            except (ExecutionError, BackendError, MalformedOutput) as exc:
                log.info("task %s failed: %s", task.id, exc)
                out.append("")
        return out

    def test_report(self, X, adapt: bool | None = None) -> dict:
        """Cluster ``X``, adapt per cluster (unless disabled) and evaluate; returns the report."""
        check_is_fitted(self, "workflow_")
        tasks = check_tasks(X, require_answers=True)
        n = self.n_test_clusters or self.n_subtasks
        report = run_test_phase(self.workflow_, tasks, self._config(), self.gateway_, n=n,
                                adapt=self.adapt if adapt is None else adapt, mode=self.cluster_mode)
        self.test_report_ = report
        return report

    def score(self, X, y=None) -> float:
        """Task-weighted overall score of the test phase on ``X``."""
        if y is not None:
            tasks = check_tasks(X)
            X = [type(t)(id=t.id, question=t.question, answer=str(a), metadata=t.metadata) for t, a in zip(tasks, y)]
        return self.test_report(X)["overall"]["score"]
