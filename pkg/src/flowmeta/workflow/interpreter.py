from __future__ import annotations

import logging
import re
import time
from collections import Counter

from ..errors import BudgetExceeded, EmptyAnswer, ExtractionFailed, MalformedOutput
from ..llm.fields import complete_structured, format_instruction
from ..llm.gateway import Gateway
from ..llm.types import ChatRequest
from .ir import (
    TASK_REF,
    AgentCall,
    ExecutionLimits,
    ExecutionTrace,
    Extract,
    Fanout,
    InfoRecord,
    Return,
    Select,
    TraceStep,
    VerifyLoop,
    Vote,
    WorkflowProgram,
)

log = logging.getLogger(__name__)

TRUE_WORDS = {"true", "yes", "1", "correct", "pass", "passed"}


def render_inputs(records: list[InfoRecord], instruction: str) -> str:
    parts = []
    for rec in records:
        if rec.field_name == TASK_REF:
            parts.append(f"# Your Task:\n{rec.content}")
        else:
            parts.append(f"### {rec.field_name} #{rec.iteration + 1} by {rec.author}:\n{rec.content}")
    parts.append(f"Given the above, follow this instruction: {instruction}")
    return "\n\n".join(parts)


def agent_request(agent, records, instruction: str, model: str, seed: int | None) -> ChatRequest:
    system = f"You are a {agent.role}.\n\n{format_instruction(agent.output_fields)}"
    return ChatRequest.build(model, system, render_inputs(records, instruction),
                             temperature=agent.temperature, seed=seed)


def _is_true(text: str) -> bool:
    return text.strip().strip(".").lower() in TRUE_WORDS


class _Run:
    def __init__(self, program, task, gateway, limits, model, seed):
        self.program = program
        self.gateway = gateway
        self.limits = limits
        self.model = model
        self.seed = seed
        self.trace = ExecutionTrace(task_id=task.id)
        self.env: dict[str, InfoRecord] = {TASK_REF: InfoRecord(TASK_REF, "User", task.question, -1)}
        self.started = time.monotonic()
        self.deferred = {n.tie for n in program.nodes if isinstance(n, Vote) and n.tie}

    def lookup(self, ref) -> InfoRecord:
        return self.env[TASK_REF] if ref.is_task else self.env[str(ref)]

    def _check_budget(self, needed: int = 1):
        if self.trace.backend_calls + needed > self.limits.max_calls:
            raise BudgetExceeded(f"call budget of {self.limits.max_calls} exhausted")
        if time.monotonic() - self.started > self.limits.max_wall_time:
            raise BudgetExceeded(f"wall-time budget of {self.limits.max_wall_time}s exhausted")

    def call(self, node, iteration: int = 0, extra: list[InfoRecord] = ()) -> dict[str, str]:
        records = [self.lookup(r) for r in node.inputs] + list(extra)
        request = agent_request(node.agent, records, node.instruction, self.model, self.seed)
        try:
            fields, exchanges = complete_structured(_Budgeted(self), request, node.agent.output_fields)
        except MalformedOutput as exc:
            for k, (req, _) in enumerate(getattr(exc, "exchanges", [])):
                self.trace.steps.append(TraceStep(node.id, req.cache_key(), [], repair=k > 0))
            raise
        author = f"{node.agent.name} ({node.agent.role})"
        produced = [InfoRecord(f, author, fields[f], iteration) for f in node.agent.output_fields]
        for k, (req, _) in enumerate(exchanges):
            recs = produced if k == len(exchanges) - 1 else []
            self.trace.steps.append(TraceStep(node.id, req.cache_key(), recs, repair=k > 0))
        for rec in produced:
            self.env[f"{node.id}.{rec.field_name}"] = rec
        return fields

    def extract(self, node: Extract, iteration: int = 0):
        text = self.lookup(node.source).content
        value = None
        for pat in node.patterns:
            m = re.search(pat, text)
            if m:
                groups = [g for g in m.groups() if g is not None]
                value = (groups[0] if groups else m.group(0)).strip()
                break
        if value is None:
            if not node.fallback:
                raise ExtractionFailed(f"extract {node.id!r}: no pattern matched")
            log.warning("extract %r: no pattern matched; using raw content", node.id)
            value = text.strip()
        rec = InfoRecord("answer", f"extract:{node.id}", value, iteration)
        self.env[f"{node.id}.answer"] = rec
        self.trace.steps.append(TraceStep(node.id, None, [rec]))

    def vote(self, node: Vote):
        answers = [self.lookup(r).content.strip() for r in node.refs]
        counts = Counter(a for a in answers if a)
        if not counts:
            winner, votes = "", 0
        else:
            votes = max(counts.values())
            tied = sorted(a for a, c in counts.items() if c == votes)
            winner = tied[0]
            if len(tied) > 1 and node.tie:
                chooser = self.program.node(node.tie)
                extra = [InfoRecord("candidate", f"vote:{node.id}", a, -1) for a in tied]
                fields = self.call(chooser, extra=extra)
                winner = fields[chooser.pick].strip()
        recs = [InfoRecord("answer", f"vote:{node.id}", winner, 0),
                InfoRecord("votes", f"vote:{node.id}", str(votes), 0)]
        for rec in recs:
            self.env[f"{node.id}.{rec.field_name}"] = rec
        self.trace.steps.append(TraceStep(node.id, None, recs))

    def loop(self, node: VerifyLoop):
        current = self.lookup(node.subject).content
        author = f"loop:{node.id}"
        verified = False
        rounds = 0
        for rnd in range(node.max_rounds):
            rounds += 1
            self.env[f"{node.id}.current"] = InfoRecord("current", author, current, rnd)
            fields = self.call(node.verifier, iteration=rnd)
            if _is_true(fields[node.gate]):
                verified = True
                break
            for child in node.body:
                if isinstance(child, AgentCall):
                    self.call(child, iteration=rnd)
                else:
                    self.extract(child, iteration=rnd)
            if node.update is not None:
                current = self.lookup(node.update).content
        recs = [InfoRecord("current", author, current, rounds - 1),
                InfoRecord("verified", author, "True" if verified else "False", 0)]
        for rec in recs:
            self.env[f"{node.id}.{rec.field_name}"] = rec
        self.trace.steps.append(TraceStep(node.id, None, recs))

    def run(self) -> ExecutionTrace:
        for node in self.program.nodes:
            if isinstance(node, AgentCall):
                self.call(node)
            elif isinstance(node, Fanout):
                for i, child in enumerate(node.calls):
                    self.call(child, iteration=i)
            elif isinstance(node, Extract):
                self.extract(node)
            elif isinstance(node, Vote):
                self.vote(node)
            elif isinstance(node, Select):
                if node.id not in self.deferred:
                    self.call(node)
            elif isinstance(node, VerifyLoop):
                self.loop(node)
            elif isinstance(node, Return):
                final = self.lookup(node.ref)
                if not final.content.strip():
                    raise EmptyAnswer(f"return value {node.ref} is empty")
                self.trace.final = final
        self.trace.wall_time = time.monotonic() - self.started
        return self.trace


class _Budgeted:
    """Gateway proxy that charges every request against the run's call budget."""

    def __init__(self, run: _Run):
        self.run = run

    def complete(self, request):
        self.run._check_budget()
        self.run.trace.backend_calls += 1
        return self.run.gateway.complete(request)


def execute_program(program: WorkflowProgram, task, backend, limits: ExecutionLimits | None = None,
                    model: str = "executor", seed: int | None = None) -> ExecutionTrace:
    """Run ``program`` on one task and return its trace.

    ``backend`` is a :class:`Gateway` or a bare backend callable.  Raises
    :class:`BudgetExceeded`, :class:`ExtractionFailed`, backend errors, or
    :class:`MalformedOutput`.
    """
    gateway = backend if isinstance(backend, Gateway) else Gateway(backend)
    return _Run(program, task, gateway, limits or ExecutionLimits(), model, seed).run()
