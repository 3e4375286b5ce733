from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.5
    seed: int | None = None
    max_tokens: int = 2048

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        for m in self.messages:
            if m.role not in ROLES:
                raise ValueError(f"unknown message role {m.role!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")

    @classmethod
    def build(cls, model: str, system: str | None, user: str, **kwargs) -> "ChatRequest":
        msgs = []
        if system:
            msgs.append(Message("system", system))
        msgs.append(Message("user", user))
        return cls(model=model, messages=tuple(msgs), **kwargs)

    def extend(self, *messages: Message) -> "ChatRequest":
        return ChatRequest(self.model, self.messages + tuple(messages), self.temperature,
                           self.seed, self.max_tokens)

    def flatten(self) -> str:
        """The prompt as one string, used by scripted matchers."""
        return "\n\n".join(f"[{m.role}]\n{m.content}" for m in self.messages)

    def cache_key(self) -> str:
        payload = {
            "model": self.model,
            "messages": [[m.role, m.content] for m in self.messages],
            "temperature": self.temperature,
            "seed": self.seed,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_wire(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0
    cached: bool = False

    def to_json(self) -> dict:
        return {
            "content": self.content,
            "finish_reason": self.finish_reason,
            "usage": {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens},
        }

    @classmethod
    def from_json(cls, data: dict, cached: bool = False) -> "ChatResponse":
        usage = data.get("usage") or {}
        return cls(
            content=data.get("content") or "",
            finish_reason=data.get("finish_reason") or "stop",
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            cached=cached,
        )


@dataclass
class CallCounters:
    backend: int = 0
    cache_hits: int = 0
    retries: int = 0
    by_model: dict = field(default_factory=dict)
