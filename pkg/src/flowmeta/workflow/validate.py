from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import DanglingReference, InvalidProgram, UnboundedLoop
from .dsl import parse_unchecked
from .ir import (
    DEFAULT_LOOP_CAP,
    TASK_REF,
    AgentCall,
    Extract,
    Fanout,
    Return,
    Select,
    VerifyLoop,
    Vote,
    WorkflowProgram,
)


@dataclass(frozen=True)
class Violation:
    code: str
    node_id: str | None
    message: str
    detail: str | None = None

    def __str__(self) -> str:
        where = f"[{self.node_id}] " if self.node_id else ""
        return f"{where}{self.message}"


def _check_agent(node, out: list[Violation], agents: dict):
    agent = node.agent
    if not agent.output_fields:
        out.append(Violation("agent_outputs", node.id, f"agent {agent.name!r} declares no output fields"))
    elif len(set(agent.output_fields)) != len(agent.output_fields):
        out.append(Violation("agent_outputs", node.id, f"agent {agent.name!r} repeats an output field"))
    if not 0.0 <= agent.temperature <= 2.0:
        out.append(Violation("temperature", node.id, f"agent {agent.name!r} temperature outside [0, 2]"))
    seen = agents.setdefault(agent.name, agent)
    if seen != agent:
        out.append(Violation("agent_conflict", node.id, f"agent {agent.name!r} defined twice with different settings"))


def validate_program(program: WorkflowProgram, loop_cap: int = DEFAULT_LOOP_CAP) -> list[Violation]:
    """Return every invariant violation in ``program``; an empty list means valid."""
    out: list[Violation] = []
    agents: dict = {}

    ids: set[str] = set()
    for node in program.iter_nodes():
        if node.id == TASK_REF or node.id in ids:
            out.append(Violation("duplicate_id", node.id, f"node id {node.id!r} is not unique"))
        ids.add(node.id)

    # selects named as vote tie policies run only on ties, so nothing else may read them
    tie_targets = {n.tie: n.id for n in program.nodes if isinstance(n, Vote) and n.tie}

    visible: dict[str, tuple[str, ...]] = {}

    def check_refs(node_id, refs, scope):
        for ref in refs:
            if ref.is_task:
                continue
            if ref.node in tie_targets:
                out.append(Violation("tie_target_read", node_id,
                                     f"{ref} reads tie-policy node {ref.node!r}", str(ref)))
                continue
            fields = scope.get(ref.node)
            if fields is None or ref.field not in fields:
                out.append(Violation("dangling", node_id, f"reference {ref} names no earlier output", str(ref)))

    for node in program.nodes:
        if isinstance(node, AgentCall):
            _check_agent(node, out, agents)
            check_refs(node.id, node.inputs, visible)
        elif isinstance(node, Fanout):
            if not node.calls:
                out.append(Violation("empty_fanout", node.id, "fanout has no calls"))
            for call in node.calls:
                _check_agent(call, out, agents)
                check_refs(call.id, call.inputs, visible)
            for call in node.calls:
                visible[call.id] = call.outputs
        elif isinstance(node, Extract):
            check_refs(node.id, [node.source], visible)
            if not node.patterns:
                out.append(Violation("no_patterns", node.id, "extract needs at least one pattern"))
            for pat in node.patterns:
                try:
                    re.compile(pat)
                except re.error as exc:
                    out.append(Violation("bad_pattern", node.id, f"pattern {pat!r} does not compile: {exc}"))
        elif isinstance(node, Vote):
            check_refs(node.id, node.refs, visible)
            if len(node.refs) < 2:
                out.append(Violation("vote_arity", node.id, "vote arity < 2"))
            if node.tie is not None:
                target = visible.get(node.tie)
                kinds = {n.id: n for n in program.nodes}
                if target is None or not isinstance(kinds.get(node.tie), Select):
                    out.append(Violation("bad_tie", node.id,
                                         f"tie policy {node.tie!r} is not an earlier select node", node.tie))
        elif isinstance(node, Select):
            _check_agent(node, out, agents)
            check_refs(node.id, node.inputs, visible)
            if node.pick not in node.agent.output_fields:
                out.append(Violation("bad_pick", node.id, f"pick field {node.pick!r} is not an agent output"))
        elif isinstance(node, VerifyLoop):
            if not 1 <= node.max_rounds <= loop_cap:
                out.append(Violation("loop_bound", node.id,
                                     f"max rounds {node.max_rounds} outside [1, {loop_cap}]",
                                     str(node.max_rounds)))
            check_refs(node.id, [node.subject], visible)
            inner = dict(visible)
            inner[node.id] = ("current",)
            _check_agent(node.verifier, out, agents)
            check_refs(node.verifier.id, node.verifier.inputs, inner)
            if node.gate not in node.verifier.outputs:
                out.append(Violation("bad_gate", node.id, f"gate {node.gate!r} is not a verifier output"))
            inner[node.verifier.id] = node.verifier.outputs
            body_ids = set()
            for child in node.body:
                if isinstance(child, AgentCall):
                    _check_agent(child, out, agents)
                    check_refs(child.id, child.inputs, inner)
                elif isinstance(child, Extract):
                    check_refs(child.id, [child.source], inner)
                    if not child.patterns:
                        out.append(Violation("no_patterns", child.id, "extract needs at least one pattern"))
                else:
                    out.append(Violation("bad_body", child.id, f"{child.kind} not allowed in a loop body"))
                inner[child.id] = child.outputs
                body_ids.add(child.id)
            if node.body and node.update is None:
                out.append(Violation("missing_update", node.id, "loop body needs an 'update' reference"))
            if node.update is not None:
                if node.update.node not in body_ids or node.update.field not in inner.get(node.update.node, ()):
                    out.append(Violation("dangling", node.id,
                                         f"update {node.update} names no loop-body output", str(node.update)))
        elif isinstance(node, Return):
            check_refs(node.id, [node.ref], visible)
        visible[node.id] = node.outputs

    returns = [i for i, n in enumerate(program.nodes) if isinstance(n, Return)]
    if len(returns) != 1:
        out.append(Violation("return_count", None, f"expected exactly one return node, found {len(returns)}"))
    elif returns[0] != len(program.nodes) - 1:
        out.append(Violation("return_position", program.nodes[returns[0]].id, "return must be the last node"))
    return out


def check_program(program: WorkflowProgram, loop_cap: int = DEFAULT_LOOP_CAP) -> WorkflowProgram:
    """Raise the most specific error for the first violation, else return ``program``."""
    violations = validate_program(program, loop_cap)
    for v in violations:
        if v.code == "dangling":
            raise DanglingReference(v.detail, v.node_id)
        if v.code == "loop_bound":
            raise UnboundedLoop(v.node_id, int(v.detail), loop_cap)
    if violations:
        raise InvalidProgram(violations)
    return program


def parse_program(source: str, loop_cap: int = DEFAULT_LOOP_CAP) -> WorkflowProgram:
    """Parse DSL text into a validated program."""
    return check_program(parse_unchecked(source), loop_cap)
