"""Text form of workflow programs (``.wf`` files).

Example::

    workflow "Seed-CoT" version 1
    thought "One step-by-step solver, boxed-answer extraction."

    agent solver(role="Math Solver", temperature=0.5, outputs=[thinking, answer])

    call cot = solver(task) "Think step by step, then solve."
    extract final = cot.answer ["\\\\boxed\\\\{([^}]*)\\\\}"] fallback=raw
    return final.answer

Strings are JSON string literals.  ``#`` starts a comment.  Rendering is
canonical: agents are declared once, in order of first use, and every node is
written in a fixed layout, so ``render(parse(text))`` is a normal form.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from ..errors import DSLSyntaxError, DanglingReference, UnknownNodeKind
from .ir import (
    FORMAT_VERSION,
    AgentCall,
    AgentSpec,
    Extract,
    Fanout,
    Ref,
    Return,
    Select,
    VerifyLoop,
    Vote,
    WorkflowProgram,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[=(){}\[\],.])
    """,
    re.VERBOSE,
)

NODE_KEYWORDS = ("call", "fanout", "extract", "vote", "select", "loop", "return")


@dataclass
class Token:
    kind: str
    text: str
    line: int
    column: int

    @property
    def value(self):
        if self.kind == "string":
            return json.loads(self.text)
        if self.kind == "number":
            return float(self.text) if any(c in self.text for c in ".eE") else int(self.text)
        return self.text


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "string":
            try:
                json.loads(text)
            except json.JSONDecodeError as exc:
                raise DSLSyntaxError(f"bad string literal: {exc.msg}", line, pos - line_start + 1) from None
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        if kind == "nl":
            line += 1
            line_start = m.end()
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0
        self.agents: dict[str, AgentSpec] = {}
        self.agent_uses: list[tuple[str, Token]] = []

    # -- token helpers -----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Token | None = None) -> DSLSyntaxError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text if tok.kind != "nl" else "newline")
        return DSLSyntaxError(f"{message} (found {found})", tok.line, tok.column)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("punct", "ident") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if self.tok.kind in ("punct", "ident") and self.tok.text == text:
            return self.advance()
        raise self.error(f"expected {text!r}")

    def expect_kind(self, kind: str, what: str) -> Token:
        if self.tok.kind != kind:
            raise self.error(f"expected {what}")
        return self.advance()

    def ident(self, what: str = "identifier") -> str:
        return self.expect_kind("ident", what).text

    def string(self, what: str = "string literal") -> str:
        return self.expect_kind("string", what).value

    def end_line(self):
        if self.tok.kind == "eof":
            return
        self.expect_kind("nl", "end of line")
        self.skip_newlines()

    def skip_newlines(self):
        while self.tok.kind == "nl":
            self.i += 1

    # -- grammar -----------------------------------------------------------

    def program(self) -> WorkflowProgram:
        self.skip_newlines()
        self.expect("workflow")
        name = self.string("workflow name")
        version = FORMAT_VERSION
        if self.accept("version"):
            version = self.expect_kind("number", "version number").value
            if not isinstance(version, int):
                raise self.error("version must be an integer", self.tokens[self.i - 1])
        self.end_line()
        thought = ""
        if self.accept("thought"):
            thought = self.string("thought text")
            self.end_line()
        nodes = []
        while self.tok.kind != "eof":
            if self.tok.kind == "ident" and self.tok.text == "agent":
                self.agent_decl()
                continue
            nodes.append(self.node(top_level=True))
        self.resolve_agents()
        nodes = [self.bind(n) for n in nodes]
        return WorkflowProgram(name=name, nodes=tuple(nodes), thought=thought, version=version)

    def agent_decl(self):
        start = self.expect("agent")
        name = self.ident("agent name")
        self.expect("(")
        kwargs: dict = {}
        while True:
            key_tok = self.expect_kind("ident", "agent parameter")
            key = key_tok.text
            self.expect("=")
            if key == "role":
                kwargs["role"] = self.string("role text")
            elif key == "temperature":
                kwargs["temperature"] = float(self.expect_kind("number", "temperature").value)
            elif key == "outputs":
                kwargs["output_fields"] = tuple(self.ident_list())
            else:
                raise self.error(f"unknown agent parameter {key!r}", key_tok)
            if not self.accept(","):
                break
        self.expect(")")
        self.end_line()
        if name in self.agents:
            raise DSLSyntaxError(f"agent {name!r} declared twice", start.line, start.column)
        self.agents[name] = AgentSpec(name=name, **kwargs)

    def ident_list(self) -> list[str]:
        self.expect("[")
        items = [self.ident("field name")]
        while self.accept(","):
            items.append(self.ident("field name"))
        self.expect("]")
        return items

    def ref(self) -> Ref:
        first = self.ident("reference")
        if first == "task" and not (self.tok.kind == "punct" and self.tok.text == "."):
            return Ref("task")
        self.expect(".")
        return Ref(first, self.ident("field name"))

    def ref_list(self, close: str) -> list[Ref]:
        refs = []
        if self.tok.kind == "punct" and self.tok.text == close:
            return refs
        refs.append(self.ref())
        while self.accept(","):
            refs.append(self.ref())
        return refs

    def call_body(self):
        """``ID = AGENT(refs) "instruction"`` -> (id, agent placeholder, inputs, instruction)."""
        node_id = self.ident("node id")
        self.expect("=")
        agent_tok = self.expect_kind("ident", "agent name")
        self.agent_uses.append((agent_tok.text, agent_tok))
        self.expect("(")
        inputs = self.ref_list(")")
        self.expect(")")
        instruction = self.string("instruction")
        return node_id, agent_tok.text, tuple(inputs), instruction

    def node(self, top_level: bool):
        tok = self.tok
        if tok.kind != "ident":
            raise self.error("expected a node statement")
        kw = tok.text
        if kw not in NODE_KEYWORDS:
            if tok.kind == "ident" and self.tokens[self.i + 1].kind == "ident":
                raise UnknownNodeKind(kw, tok.line, tok.column)
            raise self.error("expected a node statement")
        self.advance()
        if kw == "call":
            node_id, agent, inputs, instr = self.call_body()
            self.end_line()
            return _Pending(AgentCall, dict(id=node_id, agent=agent, inputs=inputs, instruction=instr))
        if kw == "fanout":
            node_id = self.ident("node id")
            self.expect("{")
            self.skip_newlines()
            calls = []
            while not self.accept("}"):
                self.expect("call")
                cid, agent, inputs, instr = self.call_body()
                self.end_line()
                calls.append(_Pending(AgentCall, dict(id=cid, agent=agent, inputs=inputs, instruction=instr)))
            self.end_line()
            return _Pending(Fanout, dict(id=node_id, calls=calls))
        if kw == "extract":
            node_id = self.ident("node id")
            self.expect("=")
            source = self.ref()
            self.expect("[")
            patterns = []
            if not (self.tok.kind == "punct" and self.tok.text == "]"):
                patterns.append(self.string("pattern"))
                while self.accept(","):
                    patterns.append(self.string("pattern"))
            self.expect("]")
            fallback = True
            if self.accept("fallback"):
                self.expect("=")
                mode_tok = self.expect_kind("ident", "'raw' or 'none'")
                if mode_tok.text not in ("raw", "none"):
                    raise self.error("fallback must be 'raw' or 'none'", mode_tok)
                fallback = mode_tok.text == "raw"
            self.end_line()
            return _Pending(Extract, dict(id=node_id, source=source, patterns=tuple(patterns), fallback=fallback))
        if kw == "vote":
            node_id = self.ident("node id")
            self.expect("=")
            self.expect("[")
            refs = self.ref_list("]")
            self.expect("]")
            tie = None
            if self.accept("tie"):
                self.expect("=")
                tie = self.ident("select node id")
            self.end_line()
            return _Pending(Vote, dict(id=node_id, refs=tuple(refs), tie=tie))
        if kw == "select":
            node_id, agent, inputs, instr = self.call_body()
            self.expect("pick")
            self.expect("=")
            pick = self.ident("pick field")
            self.end_line()
            return _Pending(Select, dict(id=node_id, agent=agent, inputs=inputs, instruction=instr, pick=pick))
        if kw == "loop":
            if not top_level:
                raise self.error("loops cannot be nested", tok)
            return self.loop()
        # return
        ref = self.ref()
        self.end_line()
        return _Pending(Return, dict(ref=ref))

    def loop(self):
        node_id = self.ident("loop id")
        self.expect("(")
        self.expect("subject")
        self.expect("=")
        subject = self.ref()
        self.expect(",")
        self.expect("max")
        self.expect("=")
        max_tok = self.expect_kind("number", "max rounds")
        if not isinstance(max_tok.value, int):
            raise self.error("max rounds must be an integer", max_tok)
        self.expect(")")
        self.expect("{")
        self.skip_newlines()
        self.expect("verify")
        vid, agent, inputs, instr = self.call_body()
        self.expect("gate")
        self.expect("=")
        gate = self.ident("gate field")
        self.end_line()
        verifier = _Pending(AgentCall, dict(id=vid, agent=agent, inputs=inputs, instruction=instr))
        body = []
        update = None
        while not self.accept("}"):
            if self.accept("update"):
                update = self.ref()
                self.end_line()
                if not self.accept("}"):
                    raise self.error("'update' must be the last line of a loop")
                break
            if self.tok.kind == "ident" and self.tok.text not in ("call", "extract"):
                if self.tok.text in NODE_KEYWORDS:
                    raise self.error("only 'call' and 'extract' are allowed in a loop body")
            body.append(self.node(top_level=False))
        self.end_line()
        return _Pending(
            VerifyLoop,
            dict(id=node_id, subject=subject, max_rounds=max_tok.value, verifier=verifier,
                 gate=gate, body=body, update=update),
        )

    # -- agent binding -----------------------------------------------------

    def resolve_agents(self):
        for name, tok in self.agent_uses:
            if name not in self.agents:
                raise DanglingReference(f"agent {name}")

    def bind(self, pending):
        kwargs = dict(pending.kwargs)
        if "agent" in kwargs:
            kwargs["agent"] = self.agents[kwargs["agent"]]
        if pending.cls is Fanout:
            kwargs["calls"] = tuple(self.bind(c) for c in kwargs["calls"])
        if pending.cls is VerifyLoop:
            kwargs["verifier"] = self.bind(kwargs["verifier"])
            kwargs["body"] = tuple(self.bind(b) for b in kwargs["body"])
        return pending.cls(**kwargs)


@dataclass
class _Pending:
    cls: type
    kwargs: dict


def parse_unchecked(source: str) -> WorkflowProgram:
    """Parse without semantic validation (syntax errors still raise)."""
    return _Parser(source).program()


# -- rendering ---------------------------------------------------------------


def _s(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def _num(x: float) -> str:
    return repr(float(x))


def _refs(refs) -> str:
    return ", ".join(str(r) for r in refs)


def _call_line(keyword: str, node, indent: str) -> str:
    return f"{indent}{keyword} {node.id} = {node.agent.name}({_refs(node.inputs)}) {_s(node.instruction)}"


def _render_node(node, indent: str = "") -> list[str]:
    if isinstance(node, AgentCall):
        return [_call_line("call", node, indent)]
    if isinstance(node, Fanout):
        lines = [f"{indent}fanout {node.id} {{"]
        for call in node.calls:
            lines.append(_call_line("call", call, indent + "  "))
        lines.append(f"{indent}}}")
        return lines
    if isinstance(node, Extract):
        pats = ", ".join(_s(p) for p in node.patterns)
        mode = "raw" if node.fallback else "none"
        return [f"{indent}extract {node.id} = {node.source} [{pats}] fallback={mode}"]
    if isinstance(node, Vote):
        tie = f" tie={node.tie}" if node.tie else ""
        return [f"{indent}vote {node.id} = [{_refs(node.refs)}]{tie}"]
    if isinstance(node, Select):
        return [_call_line("select", node, indent) + f" pick={node.pick}"]
    if isinstance(node, VerifyLoop):
        lines = [f"{indent}loop {node.id}(subject={node.subject}, max={node.max_rounds}) {{"]
        lines.append(_call_line("verify", node.verifier, indent + "  ") + f" gate={node.gate}")
        for child in node.body:
            lines.extend(_render_node(child, indent + "  "))
        if node.update is not None:
            lines.append(f"{indent}  update {node.update}")
        lines.append(f"{indent}}}")
        return lines
    if isinstance(node, Return):
        return [f"{indent}return {node.ref}"]
    raise TypeError(f"not a workflow node: {node!r}")


def render_agent(agent: AgentSpec) -> str:
    outs = ", ".join(agent.output_fields)
    return (
        f"agent {agent.name}(role={_s(agent.role)}, temperature={_num(agent.temperature)}, "
        f"outputs=[{outs}])"
    )


def render_program(program: WorkflowProgram) -> str:
    """Canonical text for ``program``; deterministic and parseable."""
    lines = [f"workflow {_s(program.name)} version {program.version}"]
    if program.thought:
        lines.append(f"thought {_s(program.thought)}")
    agents = program.agents()
    if agents:
        lines.append("")
        lines.extend(render_agent(a) for a in agents)
    if program.nodes:
        lines.append("")
        for node in program.nodes:
            lines.extend(_render_node(node))
    return "\n".join(lines) + "\n"
