"""Data types for workflow programs and their execution traces."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Union

FORMAT_VERSION = 1
DEFAULT_LOOP_CAP = 4
TASK_REF = "task"

NODE_KINDS = ("agent_call", "fanout", "extract", "vote", "verify_loop", "select", "return")


@dataclass(frozen=True)
class AgentSpec:
    name: str
    role: str = "Helpful Assistant"
    temperature: float = 0.5
    output_fields: tuple[str, ...] = ("answer",)


@dataclass(frozen=True)
class Ref:
    """A data reference: either the task input or ``node.field``."""

    node: str
    field: str | None = None

    @classmethod
    def parse(cls, text: str) -> "Ref":
        text = text.strip()
        if text == TASK_REF:
            return cls(TASK_REF)
        node, sep, name = text.partition(".")
        if not sep or not node or not name:
            raise ValueError(f"bad reference {text!r}")
        return cls(node, name)

    @property
    def is_task(self) -> bool:
        return self.node == TASK_REF and self.field is None

    def __str__(self) -> str:
        return TASK_REF if self.is_task else f"{self.node}.{self.field}"


@dataclass(frozen=True)
class AgentCall:
    id: str
    agent: AgentSpec
    inputs: tuple[Ref, ...]
    instruction: str

    kind = "agent_call"

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.agent.output_fields


@dataclass(frozen=True)
class Fanout:
    """Independent agent calls; each child exports its own outputs."""

    id: str
    calls: tuple[AgentCall, ...]

    kind = "fanout"
    outputs = ()


@dataclass(frozen=True)
class Extract:
    id: str
    source: Ref
    patterns: tuple[str, ...]
    fallback: bool = True

    kind = "extract"
    outputs = ("answer",)


@dataclass(frozen=True)
class Vote:
    id: str
    refs: tuple[Ref, ...]
    tie: str | None = None

    kind = "vote"
    outputs = ("answer", "votes")


@dataclass(frozen=True)
class Select:
    """A chooser agent over candidate inputs; ``pick`` names the chosen-answer field.

    When a vote names this node as its tie policy, the node is skipped in the
    normal flow and only runs on a tie, with the tied answers appended to its
    inputs.
    """

    id: str
    agent: AgentSpec
    inputs: tuple[Ref, ...]
    instruction: str
    pick: str

    kind = "select"

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.agent.output_fields


@dataclass(frozen=True)
class VerifyLoop:
    """Bounded verify-then-revise loop around a ``subject`` value.

    Each round runs ``verifier``; a true ``gate`` field ends the loop, otherwise
    the ``body`` nodes run and ``update`` becomes the new subject.  Inside the
    loop, ``<id>.current`` names the subject for the current round.
    """

    id: str
    subject: Ref
    max_rounds: int
    verifier: AgentCall
    gate: str
    body: tuple[Union[AgentCall, Extract], ...] = ()
    update: Ref | None = None

    kind = "verify_loop"
    outputs = ("current", "verified")


@dataclass(frozen=True)
class Return:
    ref: Ref
    id: str = "return"

    kind = "return"
    outputs = ()


Node = Union[AgentCall, Fanout, Extract, Vote, Select, VerifyLoop, Return]


@dataclass(frozen=True)
class WorkflowProgram:
    name: str
    nodes: tuple[Node, ...]
    thought: str = ""
    version: int = FORMAT_VERSION

    @property
    def entry(self) -> str | None:
        return self.nodes[0].id if self.nodes else None

    def iter_nodes(self):
        """Yield every node, children included, in declaration order."""
        for node in self.nodes:
            yield node
            if isinstance(node, Fanout):
                yield from node.calls
            elif isinstance(node, VerifyLoop):
                yield node.verifier
                yield from node.body

    def node(self, node_id: str) -> Node:
        for node in self.iter_nodes():
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def agents(self) -> list[AgentSpec]:
        """Distinct agent specs in order of first use."""
        seen: dict[str, AgentSpec] = {}
        for node in self.iter_nodes():
            agent = getattr(node, "agent", None)
            if agent is not None and agent.name not in seen:
                seen[agent.name] = agent
        return list(seen.values())


@dataclass(frozen=True)
class InfoRecord:
    field_name: str
    author: str
    content: str
    iteration: int = 0

    def __post_init__(self):
        if self.iteration < -1:
            raise ValueError("iteration must be >= -1")


@dataclass
class ExecutionLimits:
    max_calls: int = 64
    max_wall_time: float = 600.0
    loop_cap: int = DEFAULT_LOOP_CAP


@dataclass
class TraceStep:
    node_id: str
    request_digest: str | None
    records: list[InfoRecord] = field(default_factory=list)
    repair: bool = False


@dataclass
class ExecutionTrace:
    task_id: str
    steps: list[TraceStep] = field(default_factory=list)
    final: InfoRecord | None = None
    backend_calls: int = 0
    wall_time: float = 0.0

    def digest(self) -> str:
        # wall time is excluded so that identical runs hash identically
        payload = {
            "task_id": self.task_id,
            "steps": [asdict(s) for s in self.steps],
            "final": asdict(self.final) if self.final else None,
            "backend_calls": self.backend_calls,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
