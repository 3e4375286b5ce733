from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from ..errors import BackendError, EmptySubtask, ExecutionError, MalformedOutput
from ..llm.gateway import Gateway
from ..workflow.interpreter import execute_program
from ..workflow.ir import ExecutionLimits, WorkflowProgram
from .metrics import make_scorer

log = logging.getLogger(__name__)

F1_FAILURE_THRESHOLD = 0.5


@dataclass
class FailureCase:
    task_id: str
    question: str
    gold: str
    prediction: str
    trace_digest: str | None = None
    error: str | None = None

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TaskOutcome:
    task_id: str
    prediction: str
    score: float
    error: str | None = None
    calls: int = 0


@dataclass
class Score:
    metric: str
    value: float
    outcomes: list[TaskOutcome] = field(default_factory=list)
    failures: list[FailureCase] = field(default_factory=list)
    backend_calls: int = 0
    subtask: str | None = None

    @property
    def solved(self) -> int:
        return sum(1 for o in self.outcomes if o.score >= 1.0)

    def to_json(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "subtask": self.subtask,
            "backend_calls": self.backend_calls,
            "outcomes": [asdict(o) for o in self.outcomes],
            "failures": [f.to_json() for f in self.failures],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Score":
        return cls(metric=data["metric"], value=data["value"],
                   outcomes=[TaskOutcome(**o) for o in data.get("outcomes", [])],
                   failures=[FailureCase(**f) for f in data.get("failures", [])],
                   backend_calls=data.get("backend_calls", 0), subtask=data.get("subtask"))


def _is_failure(metric: str, score: float) -> bool:
    if metric == "f1_qa":
        return score < F1_FAILURE_THRESHOLD
    return score < 1.0


def evaluate_workflow(program: WorkflowProgram, tasks, backend, metric: str = "solve_rate_math",
                      limits: ExecutionLimits | None = None, model: str = "executor",
                      concurrency: int = 1, subtask: str | None = None, scorer=None,
                      external_command: str | None = None, seed: int | None = None) -> Score:
    """Run ``program`` on every task and average the per-task metric.

    A task whose execution raises scores 0 and becomes a failure case; the
    evaluation itself keeps going.
    """
    tasks = list(tasks)
    if not tasks:
        raise EmptySubtask("cannot evaluate on an empty task list")
    gateway = backend if isinstance(backend, Gateway) else Gateway(backend)
    scorer = scorer or make_scorer(metric, external_command)
    limits = limits or ExecutionLimits()

    def run_one(task):
        try:
            trace = execute_program(program, task, gateway, limits, model=model, seed=seed)
        except (ExecutionError, BackendError, MalformedOutput) as exc:
            log.info("task %s failed: %s: %s", task.id, type(exc).__name__, exc)
            err = f"{type(exc).__name__}: {exc}"
            return TaskOutcome(task.id, "", 0.0, error=err), FailureCase(
                task.id, task.question, task.answer, "", None, err)
        pred = trace.final.content
        value = float(scorer(pred, task))
        outcome = TaskOutcome(task.id, pred, value, calls=trace.backend_calls)
        failure = None
        if _is_failure(metric, value):
            failure = FailureCase(task.id, task.question, task.answer, pred, trace.digest())
        return outcome, failure

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(run_one, tasks))
    else:
        results = [run_one(t) for t in tasks]

    outcomes = [r[0] for r in results]
    failures = [r[1] for r in results if r[1] is not None]
    value = sum(o.score for o in outcomes) / len(outcomes)
    return Score(metric=metric, value=value, outcomes=outcomes, failures=failures,
                 backend_calls=sum(o.calls for o in outcomes), subtask=subtask)


def sample_failures(failures, cap: int, seed) -> list[FailureCase]:
    """Seeded uniform sample of at most ``cap`` failures, kept in input order."""
    failures = list(failures)
    if len(failures) <= cap:
        return failures
    keep = sorted(random.Random(seed).sample(range(len(failures)), cap))
    return [failures[i] for i in keep]


def render_case(case: FailureCase, number: int) -> str:
    pred = case.prediction if case.prediction else f"(no answer: {case.error})" if case.error else "(empty)"
    return (f"### Case {number}\n"
            f"question: {case.question}\n"
            f"gold answer: {case.gold}\n"
            f"prediction: {pred}")


def textual_loss_report(score: Score, sample_cap: int = 5, seed=0) -> str:
    """Deterministic plain-text summary of a score, for use inside optimizer prompts."""
    total = len(score.outcomes)
    header = [f"Metric: {score.metric}"]
    if score.subtask:
        header.append(f"Subtask: {score.subtask}")
    header.append(f"Fitness: {score.value:.4f} ({score.solved}/{total} tasks fully correct, "
                  f"{len(score.failures)} failure cases)")
    if not score.failures:
        header.append("All tasks were answered correctly; there are no failure cases.")
        return "\n".join(header) + "\n"
    shown = sample_failures(score.failures, sample_cap, seed)
    header.append(f"Failure cases (showing {len(shown)} of {len(score.failures)}):")
    body = [render_case(c, i) for i, c in enumerate(shown, start=1)]
    return "\n".join(header) + "\n\n" + "\n\n".join(body) + "\n"
