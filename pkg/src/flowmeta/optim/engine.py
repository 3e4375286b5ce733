"""The bi-level search over workflows.

Per outer iteration, every subtask gets a short inner loop of proposals
starting from the current global workflow; the per-subtask winners are then
merged into a new global workflow, which an optional reflection pass may
repair.  At test time the final workflow is specialised to each cluster of
unseen tasks from an answer-free description.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from decimal import Decimal

from ..errors import BudgetExceeded, InvalidProgram, MalformedOutput, ProgramError
from ..evaluation.evaluator import Score, evaluate_workflow, sample_failures
from ..llm.fields import complete_structured
from ..llm.gateway import Gateway
from ..llm.types import ChatRequest, Message
from ..store import ArchiveEntry, RunStore
from ..tasks.clustering import SubtaskCluster, cluster_tasks, describe_subtask
from ..workflow.dsl import render_program
from ..workflow.ir import ExecutionLimits, WorkflowProgram
from ..workflow.seed import seed_program
from ..workflow.validate import parse_program
from . import prompts
from .config import OptimizerConfig

log = logging.getLogger(__name__)


def continuation_signal(j_best: float, j_candidate: float, epsilon: float) -> int:
    """1 while the candidate still trails the subtask best by more than ``epsilon``.

    The gap is computed on the decimal values as written (``0.62 - 0.60`` is
    exactly ``0.02``), so the boundary case is not at the mercy of binary
    rounding.
    """
    gap = Decimal(repr(float(j_best))) - Decimal(repr(float(j_candidate)))
    return 1 if gap > Decimal(repr(float(epsilon))) else 0


@dataclass
class TextualGradient:
    feedback: str
    source_digest: str
    model: str
    subtask: str | None
    iteration: tuple[int, int]

    def __post_init__(self):
        if not self.feedback.strip():
            raise ValueError("textual gradient feedback must be non-empty")


@dataclass
class Counters:
    """Optimizer-model traffic.  ``optimizer`` counts logical proposals (inner, merge,
    reflection, adaptation); repair rounds and cluster descriptions are kept apart."""

    optimizer: int = 0
    repair: int = 0
    describe: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    global_id: int | None = None
    best: dict[str, int] = field(default_factory=dict)
    outer_done: int = 0
    subtasks_done: int = 0
    aggregated: bool = False
    outer_calls: int = 0
    counters: Counters = field(default_factory=Counters)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "OptimizerState":
        data = dict(data)
        data["counters"] = Counters(**data.get("counters", {}))
        return cls(**data)


def as_gateway(backend) -> Gateway:
    return backend if isinstance(backend, Gateway) else Gateway(backend)


def _rank_key(key: str):
    return lambda e: (-e.fitness[key], tuple(e.generation), e.id)


class Proposer:
    """Sends filled templates to the optimizer model and turns replies into entries."""

    def __init__(self, gateway: Gateway, config: OptimizerConfig, counters: Counters, budget: int | None = None):
        self.gateway = gateway
        self.config = config
        self.counters = counters
        self.budget = budget

    def request(self, messages) -> ChatRequest:
        return ChatRequest(model=self.config.optimizer_model, messages=tuple(messages),
                           temperature=self.config.optimizer_temperature, seed=self.config.seed)

    def ask(self, user: str, expected=prompts.PROPOSAL_FIELDS, history=()) -> dict[str, str]:
        if self.budget is not None and self.counters.optimizer >= self.budget:
            raise BudgetExceeded(f"optimizer budget of {self.budget} calls is spent")
        messages = [Message("system", prompts.SYSTEM_PROMPT), *history, Message("user", user)]
        self.counters.optimizer += 1
        try:
            fields, exchanges = complete_structured(self.gateway, self.request(messages), expected)
        except MalformedOutput as exc:
            self.counters.repair += len(getattr(exc, "exchanges", ())) - 1
            raise
        self.counters.repair += len(exchanges) - 1
        return fields

    def program(self, fields: dict[str, str]) -> WorkflowProgram:
        return parse_program(fields["code"], self.config.loop_cap)


class MetaOptimizer:
    """Runs the search over one set of validation clusters, persisting to ``store``."""

    def __init__(self, tasks, clusters, backend, config: OptimizerConfig | None = None,
                 store: RunStore | None = None, seed_workflow: WorkflowProgram | None = None):
        self.config = config or OptimizerConfig()
        self.tasks_by_id = {t.id: t for t in tasks}
        self.clusters: list[SubtaskCluster] = sorted(clusters, key=lambda c: c.id)
        if not self.clusters:
            raise ValueError("at least one subtask cluster is required")
        self.keys = [c.key for c in self.clusters]
        self.gateway = as_gateway(backend)
        self.store = store if store is not None else RunStore()
        self.state = OptimizerState()
        self.seed_workflow = seed_workflow or seed_program()
        self.gradients: list[TextualGradient] = []
        self.budget = self.config.budget_bound(len(self.clusters), 0)
        self.limits = ExecutionLimits(max_calls=self.config.max_calls_per_task,
                                      max_wall_time=self.config.max_wall_time, loop_cap=self.config.loop_cap)
        self._proposer = Proposer(self.gateway, self.config, self.state.counters, self.budget)

    # -- helpers -------------------------------------------------------------

    def _set_state(self, state: OptimizerState):
        self.state = state
        self._proposer.counters = state.counters

    def _mark(self, name: str):
        self.store.mark_phase(name, self.state.to_json())

    @property
    def global_entry(self) -> ArchiveEntry:
        return self.store.get(self.state.global_id)

    def cluster_tasks_for(self, cluster: SubtaskCluster):
        return [self.tasks_by_id[tid] for tid in cluster.members]

    def evaluate(self, entry: ArchiveEntry, keys=None) -> ArchiveEntry:
        """Score ``entry`` on each listed subtask's validation tasks and persist the result."""
        program = entry.program
        for cluster in self.clusters:
            if keys is not None and cluster.key not in keys:
                continue
            score = evaluate_workflow(
                program, self.cluster_tasks_for(cluster), self.gateway, metric=self.config.metric,
                limits=self.limits, model=self.config.executor_model, concurrency=self.config.concurrency,
                subtask=cluster.key, external_command=self.config.external_command, seed=self.config.seed)
            entry.fitness[cluster.key] = score.value
            entry.scores[cluster.key] = score.to_json()
        self.store.update_entry(entry)
        return entry

    def _tombstone(self, exc: Exception, raw_code: str, name: str, thought: str, role: str,
                   generation, parent, subtask, keys) -> ArchiveEntry:
        entry = ArchiveEntry(name=name or "rejected", thought=thought, code=raw_code, generation=tuple(generation),
                             parent=parent, role=role, subtask=subtask,
                             status="malformed" if isinstance(exc, MalformedOutput) else "invalid",
                             error=f"{type(exc).__name__}: {exc}", fitness={k: 0.0 for k in keys})
        self.store.append_entry(entry)
        return entry

    def _propose_entry(self, user: str, role: str, generation, parent, subtask, keys,
                       expected=prompts.PROPOSAL_FIELDS, history=()) -> tuple[ArchiveEntry, dict]:
        """One proposal.  Rejected replies are archived as fitness-0 tombstones and re-raised
        with the tombstone attached as ``exc.entry``."""
        try:
            fields = self._proposer.ask(user, expected, history)
        except MalformedOutput as exc:
            raw = exc.exchanges[-1][1].content if getattr(exc, "exchanges", None) else ""
            exc.entry = self._tombstone(exc, raw, "malformed", "", role, generation, parent, subtask, keys)
            raise
        try:
            program = self._proposer.program(fields)
        except ProgramError as exc:
            tomb = self._tombstone(exc, fields["code"], fields["name"].strip(), fields["thought"], role,
                                   generation, parent, subtask, keys)
            if isinstance(exc, InvalidProgram):
                exc.entry = tomb
                raise
            err = InvalidProgram([exc])
            err.entry = tomb
            raise err from exc
        entry = ArchiveEntry(name=fields["name"].strip() or program.name, thought=fields["thought"],
                             code=render_program(program), generation=tuple(generation), parent=parent,
                             role=role, subtask=subtask, reflection=fields.get("reflection"))
        self.store.append_entry(entry)
        return entry, fields

    def _ranked(self, key: str, limit: int | None = None) -> list[ArchiveEntry]:
        scored = sorted((e for e in self.store.entries() if e.ok and key in e.fitness), key=_rank_key(key))
        return scored[:limit] if limit else scored

    def _label(self, cluster: SubtaskCluster) -> str:
        return f" ({cluster.label})" if cluster.label else ""

    # -- phases --------------------------------------------------------------

    def seed(self) -> ArchiveEntry:
        program = self.seed_workflow
        entry = ArchiveEntry(name=program.name, thought=program.thought, code=render_program(program),
                             generation=(0, 0), role="seed")
        self.store.append_entry(entry)
        self.evaluate(entry)
        self.state.global_id = entry.id
        self.state.best = {k: self.store.best_for_subtask(k).id for k in self.keys}
        return entry

    def inner_step(self, current: ArchiveEntry, cluster: SubtaskCluster, outer: int, step: int) -> ArchiveEntry:
        """Ask for one revision of ``current`` on ``cluster``; the new entry is archived unevaluated."""
        key = cluster.key
        history = [e for e in self.store.entries() if key in e.fitness]
        progress = (f"Subtask {key}{self._label(cluster)}: outer iteration {outer} of {self.config.n_outer}, "
                    f"update {step} of at most {self.config.n_inner}.")
        user = prompts.inner_prompt(history, current, key, progress, self.config.dataset,
                                    self.config.feedback_cases, seed=f"{self.config.seed}:feedback:{key}:{outer}:{step}")
        entry, fields = self._propose_entry(user, "inner", (outer, step), current.id, key, [key])
        if fields["thought"].strip():
            source = json.dumps(current.scores.get(key, {}), sort_keys=True)
            digest = hashlib.sha256(source.encode()).hexdigest()[:16]
            self.gradients.append(TextualGradient(fields["thought"], digest, self.config.optimizer_model,
                                                  key, (outer, step)))
        return entry

    def run_inner_loop(self, cluster: SubtaskCluster, outer: int) -> ArchiveEntry:
        """Refine from the global workflow until a candidate comes within epsilon of the
        subtask best or ``n_inner`` steps are spent.  Returns the subtask best."""
        key = cluster.key
        current = self.global_entry
        best = self.store.best_for_subtask(key)
        for step in range(1, self.config.n_inner + 1):
            try:
                cand = self.inner_step(current, cluster, outer, step)
                self.evaluate(cand, [key])
            except (InvalidProgram, MalformedOutput) as exc:
                log.warning("subtask %s step (%d, %d): proposal rejected: %s", key, outer, step, exc)
                cand = exc.entry
            except BudgetExceeded as exc:
                log.warning("subtask %s: %s; keeping current best", key, exc)
                break
            score = cand.fitness[key]
            if cand.ok:
                current = cand
            best = self.store.best_for_subtask(key)
            if continuation_signal(best.fitness[key], score, self.config.epsilon) == 0:
                break
        self.state.best[key] = best.id
        return best

    def _archive_sections(self) -> list[str]:
        return [prompts.archive_section(c.key, c.label, self._ranked(c.key, self.config.archive_top_k))
                for c in self.clusters]

    def _outer_progress(self, outer: int, what: str) -> str:
        return f"Outer iteration {outer} of {self.config.n_outer}: {what}"

    def aggregate_and_update(self, outer: int) -> ArchiveEntry | None:
        """Merge the per-subtask bests into a new global workflow; one retry on a bad reply."""
        sections = self._archive_sections()
        previous = self.state.global_id
        for attempt in (1, 2):
            if self.state.outer_calls >= 2:
                break
            self.state.outer_calls += 1
            progress = self._outer_progress(outer, f"merge the subtask results, attempt {attempt}.")
            user = prompts.outer_prompt(sections, progress, self.config.dataset)
            try:
                entry, _ = self._propose_entry(user, "global", (outer, 0), previous, None, self.keys)
            except (InvalidProgram, MalformedOutput) as exc:
                log.warning("outer %d merge attempt %d rejected: %s", outer, attempt, exc)
                continue
            except BudgetExceeded as exc:
                log.warning("outer %d: %s", outer, exc)
                break
            self.evaluate(entry)
            self.state.global_id = entry.id
            return entry
        log.warning("outer %d: keeping the previous global workflow", outer)
        return None

    def reflection_update(self, outer: int) -> ArchiveEntry | None:
        """Show the global workflow its own failures and adopt the revision if it is no worse."""
        if not self.config.reflection:
            return None
        if self.state.outer_calls >= 2:
            log.info("outer %d: reflection skipped, merge used both calls", outer)
            return None
        current = self.global_entry
        failures = []
        for key in self.keys:
            failures += Score.from_json(current.scores[key]).failures
        if not failures:
            log.info("outer %d: no failure cases, reflection skipped", outer)
            return None
        cases = sample_failures(failures, self.config.reflection_cases, f"{self.config.seed}:reflect:{outer}")
        progress = self._outer_progress(outer, f"reflection on {current.name}.")
        history = [Message("user", prompts.outer_prompt(self._archive_sections(), progress, self.config.dataset)),
                   Message("assistant", prompts.proposal_json(current))]
        self.state.outer_calls += 1
        try:
            entry, _ = self._propose_entry(prompts.reflection_prompt(cases), "reflection", (outer, 0), current.id,
                                           None, self.keys, prompts.REFLECTION_FIELDS, history)
        except (InvalidProgram, MalformedOutput) as exc:
            log.warning("outer %d reflection rejected: %s", outer, exc)
            return None
        except BudgetExceeded as exc:
            log.warning("outer %d: %s", outer, exc)
            return None
        self.evaluate(entry)
        if entry.mean_fitness(self.keys) >= current.mean_fitness(self.keys):
            self.state.global_id = entry.id
            return entry
        log.info("outer %d: reflection candidate %s scored %.4f < %.4f, discarded", outer, entry.name,
                 entry.mean_fitness(self.keys), current.mean_fitness(self.keys))
        return None

    def run(self) -> ArchiveEntry:
        """Run (or resume) the search; phase markers make every stage restartable.

        A finalized run is only read back, never modified.
        """
        if self.store.finalized:
            # later test-phase markers carry report paths, not optimizer state
            last = [p for p in self.store.phases if (p.get("state") or {}).get("global_id")][-1]
            self._set_state(OptimizerState.from_json(last["state"]))
            return self.global_entry
        last = self.store.rewind_to_last_phase()
        if last and last.get("state"):
            self._set_state(OptimizerState.from_json(last["state"]))
        if not self.store.has_phase("seeded"):
            self.seed()
            self._mark("seeded")
        for outer in range(self.state.outer_done + 1, self.config.n_outer + 1):
            for idx in range(self.state.subtasks_done, len(self.clusters)):
                self.run_inner_loop(self.clusters[idx], outer)
                self.state.subtasks_done = idx + 1
                self._mark(f"outer-{outer}:inner-{self.clusters[idx].key}")
            if not self.state.aggregated:
                self.aggregate_and_update(outer)
                self.state.aggregated = True
                self._mark(f"outer-{outer}:aggregated")
            self.reflection_update(outer)
            self.state.best = {k: self.store.best_for_subtask(k).id for k in self.keys}
            self.state.outer_done = outer
            self.state.subtasks_done = 0
            self.state.aggregated = False
            self.state.outer_calls = 0
            self._mark(f"outer-{outer}:complete")
        if not self.store.has_phase("optimized"):
            self._mark("optimized")
        return self.global_entry


def run_meta_optimization(train_tasks, config: OptimizerConfig | None = None, backend=None, m: int | None = None,
                          clusters=None, store: RunStore | None = None, embedder=None, mode: str = "auto"):
    """Cluster the training tasks (unless clusters are given or stored) and run the search.

    Returns ``(final global entry, archive entries)``.
    """
    config = config or OptimizerConfig()
    store = store if store is not None else RunStore()
    train_tasks = list(train_tasks)
    if clusters is None:
        clusters = store.read_clusters("validation")
    if clusters is None:
        if m is None:
            raise ValueError("m (number of subtasks) is required when no clusters are given")
        clusters = cluster_tasks(train_tasks, m, embedder=embedder, seed=config.seed, mode=mode)
        store.write_clusters("validation", clusters)
        store.mark_phase("clustered")
    optimizer = MetaOptimizer(train_tasks, clusters, backend, config, store)
    final = optimizer.run()
    return final, store.entries()


# -- test phase ---------------------------------------------------------------


def test_time_adapt(workflow, description: str, backend, config: OptimizerConfig | None = None,
                    counters: Counters | None = None) -> WorkflowProgram:
    """Specialise ``workflow`` to a cluster from its description alone.

    Any bad reply falls back to the unadapted workflow.
    """
    config = config or OptimizerConfig()
    program = workflow.program if isinstance(workflow, ArchiveEntry) else workflow
    proposer = Proposer(as_gateway(backend), config, counters if counters is not None else Counters())
    user = prompts.adapt_prompt(description, render_program(program), config.dataset)
    try:
        return proposer.program(proposer.ask(user))
    except (MalformedOutput, ProgramError) as exc:
        log.warning("adaptation rejected (%s); using the unadapted workflow", exc)
        return program


def run_test_phase(final_workflow, test_tasks, config: OptimizerConfig | None = None, backend=None,
                   n: int | None = None, clusters=None, adapt: bool | None = None, embedder=None,
                   mode: str = "auto", counters: Counters | None = None) -> dict:
    """Cluster the test tasks, adapt per cluster (unless disabled) and evaluate.

    The report has one row per cluster and a task-weighted overall row.
    """
    config = config or OptimizerConfig()
    adapt = config.adapt if adapt is None else adapt
    counters = counters if counters is not None else Counters()
    gateway = as_gateway(backend)
    test_tasks = list(test_tasks)
    by_id = {t.id: t for t in test_tasks}
    base = final_workflow.program if isinstance(final_workflow, ArchiveEntry) else final_workflow
    if clusters is None:
        if n is None:
            raise ValueError("n (number of test clusters) is required when no clusters are given")
        clusters = cluster_tasks(test_tasks, n, embedder=embedder, seed=config.seed, mode=mode)
    limits = ExecutionLimits(max_calls=config.max_calls_per_task, max_wall_time=config.max_wall_time,
                             loop_cap=config.loop_cap)
    rows = []
    for cluster in sorted(clusters, key=lambda c: c.id):
        program = base
        if adapt:
            describe_subtask(cluster, by_id, gateway, sample_size=config.describe_sample,
                             model=config.optimizer_model, seed=config.seed,
                             temperature=config.optimizer_temperature)
            counters.describe += 1
            program = test_time_adapt(base, cluster.description, gateway, config, counters)
        tasks = [by_id[tid] for tid in cluster.members]
        score = evaluate_workflow(program, tasks, gateway, metric=config.metric, limits=limits,
                                  model=config.executor_model, concurrency=config.concurrency,
                                  subtask=cluster.key, external_command=config.external_command, seed=config.seed)
        rows.append({
            "cluster": cluster.key, "label": cluster.label, "size": len(tasks),
            "score": score.value, "solved": score.solved, "adapted": program is not base,
            "workflow": program.name, "code": render_program(program),
            "description": cluster.description,
        })
    total = sum(r["size"] for r in rows)
    overall = sum(r["score"] * r["size"] for r in rows) / total
    return {
        "kind": "test",
        "metric": config.metric,
        "adapt": adapt,
        "workflow": base.name,
        "rows": rows,
        "overall": {"cluster": "overall", "size": total, "score": overall,
                    "solved": sum(r["solved"] for r in rows)},
        "counters": counters.to_json(),
    }
