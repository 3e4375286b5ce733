"""Language-model backends: a scripted table for tests and an HTTP chat-completions client."""

from __future__ import annotations

import difflib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

from ..errors import AuthError, ConfigError, RateLimited, ScriptMiss, TransportError
from .types import ChatRequest, ChatResponse

API_KEY_ENV = "METAFLOW_API_KEY"
CHAT_PATH = "/chat/completions"

Response = Union[str, Callable[[str], str]]


@dataclass
class Rule:
    """One scripted rule.

    ``match`` is a substring, ``regex`` a regular expression, and ``all`` a list
    of substrings that must all occur; exactly one of them is set.  ``times``
    consumes the rule after that many hits.
    """

    response: Response
    match: str | None = None
    regex: str | None = None
    all: tuple[str, ...] | None = None
    times: int | None = None

    def __post_init__(self):
        given = [x is not None for x in (self.match, self.regex, self.all)]
        if sum(given) != 1:
            raise ValueError("a rule needs exactly one of match / regex / all")
        self._compiled = re.compile(self.regex) if self.regex is not None else None
        if self.all is not None:
            self.all = tuple(self.all)

    def matches(self, prompt: str) -> bool:
        if self.match is not None:
            return self.match in prompt
        if self._compiled is not None:
            return self._compiled.search(prompt) is not None
        return all(s in prompt for s in self.all)

    def describe(self) -> str:
        if self.match is not None:
            return f"match={self.match!r}"
        if self.regex is not None:
            return f"regex={self.regex!r}"
        return f"all={list(self.all)!r}"

    def closeness(self, prompt: str) -> float:
        needles = [self.match] if self.match is not None else list(self.all or [self.regex])
        scores = []
        for needle in needles:
            if not needle:
                continue
            if needle in prompt:
                scores.append(1.0)
                continue
            sm = difflib.SequenceMatcher(None, needle, prompt, autojunk=False)
            m = sm.find_longest_match(0, len(needle), 0, len(prompt))
            scores.append(m.size / len(needle))
        return sum(scores) / len(scores) if scores else 0.0

    def respond(self, prompt: str) -> str:
        return self.response(prompt) if callable(self.response) else self.response


class ScriptedBackend:
    """Deterministic backend answering from an ordered rule table; first match wins."""

    name = "scripted"

    def __init__(self, rules=()):
        self.rules = [r if isinstance(r, Rule) else Rule(**r) for r in rules]
        self._hits = [0] * len(self.rules)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = data["rules"] if isinstance(data, dict) else data
        return cls(rules)

    def __call__(self, request: ChatRequest) -> ChatResponse:
        prompt = request.flatten()
        with self._lock:
            self.requests.append(request)
            for i, rule in enumerate(self.rules):
                if rule.times is not None and self._hits[i] >= rule.times:
                    continue
                if rule.matches(prompt):
                    self._hits[i] += 1
                    chosen = rule
                    break
            else:
                raise ScriptMiss(self._closest(prompt))
        return ChatResponse(content=chosen.respond(prompt))

    def _closest(self, prompt: str) -> str | None:
        if not self.rules:
            return None
        best = max(self.rules, key=lambda r: r.closeness(prompt))
        return best.describe()


class RemoteBackend:
    """Chat-completions client over HTTP (one POST per request, no retries here)."""

    name = "remote"

    def __init__(self, base_url: str, api_key: str | None = None, path: str = CHAT_PATH,
                 timeout: float = 120.0, client=None):
        if not base_url:
            raise ConfigError("remote backend needs a base URL")
        self.url = base_url.rstrip("/") + path
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self._client = client

    def _http(self):
        if self._client is None:
            import httpx

            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def __call__(self, request: ChatRequest) -> ChatResponse:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        start = time.monotonic()
        try:
            resp = self._http().post(self.url, json=request.to_wire(), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        latency = time.monotonic() - start
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                retry_after = float(retry_after) if retry_after is not None else None
            except ValueError:
                retry_after = None
            raise RateLimited(f"HTTP 429 from {self.url}", retry_after=retry_after)
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"].get("content") or ""
            usage = data.get("usage") or {}
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unreadable response body: {exc}") from exc
        return ChatResponse(
            content=content,
            finish_reason=choice.get("finish_reason") or "stop",
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency=latency,
        )


def scripted_rule_set(rules) -> ScriptedBackend:
    """Build a scripted backend from ``(matcher, response)`` pairs or :class:`Rule` objects.

    A string matcher is a substring; a compiled ``re.Pattern`` is a regex; a
    list/tuple of strings requires all of them.  A third element, if given, is
    the rule's hit budget.
    """
    built = []
    for item in rules:
        if isinstance(item, (Rule, dict)):
            built.append(item)
            continue
        matcher, response, *rest = item
        times = rest[0] if rest else None
        if isinstance(matcher, re.Pattern):
            built.append(Rule(response=response, regex=matcher.pattern, times=times))
        elif isinstance(matcher, (list, tuple)):
            built.append(Rule(response=response, all=tuple(matcher), times=times))
        else:
            built.append(Rule(response=response, match=matcher, times=times))
    return ScriptedBackend(built)
