import json

import httpx
import pytest

from flowmeta.errors import AuthError, ConfigError, MalformedOutput, RateLimited, ScriptMiss, TransportError
from flowmeta.llm import (
    API_KEY_ENV,
    ChatRequest,
    ChatResponse,
    DiskCache,
    Gateway,
    MemoryCache,
    RemoteBackend,
    ScriptedBackend,
    complete_structured,
    parse_fields,
    scripted_rule_set,
)


def req(text="hello", **kw):
    return ChatRequest.build("m", "sys", text, **kw)


class Flaky:
    def __init__(self, failures):
        self.failures = list(failures)
        self.calls = 0

    def __call__(self, request):
        self.calls += 1
        if self.failures:
            raise self.failures.pop(0)
        return ChatResponse(content="ok")


def test_cache_hit_skips_backend():
    backend = ScriptedBackend([{"match": "hello", "response": "hi"}])
    gw = Gateway(backend, cache=MemoryCache())
    first = gw.complete(req())
    second = gw.complete(req())
    assert first.content == second.content == "hi"
    assert second.cached and not first.cached
    assert len(backend.requests) == 1
    assert gw.counters.cache_hits == 1


def test_cache_key_covers_temperature_and_seed():
    assert req().cache_key() != req(temperature=0.9).cache_key()
    assert req().cache_key() != req(seed=1).cache_key()
    assert req().cache_key() == req().cache_key()


def test_disk_cache_persists(tmp_path):
    backend = ScriptedBackend([{"match": "hello", "response": "hi"}])
    Gateway(backend, cache=DiskCache(tmp_path)).complete(req())
    other = ScriptedBackend([])
    resp = Gateway(other, cache=DiskCache(tmp_path)).complete(req())
    assert resp.content == "hi" and resp.cached
    assert other.requests == []


def test_retries_with_exponential_backoff():
    slept = []
    backend = Flaky([TransportError("boom"), TransportError("boom")])
    gw = Gateway(backend, max_retries=3, backoff_base=1.0, sleep=slept.append)
    assert gw.complete(req()).content == "ok"
    assert slept == [1.0, 2.0]
    assert gw.counters.retries == 2


def test_retry_after_is_honoured():
    slept = []
    gw = Gateway(Flaky([RateLimited(retry_after=7.5)]), sleep=slept.append)
    gw.complete(req())
    assert slept == [7.5]


def test_retries_exhausted_reraise():
    backend = Flaky([TransportError("x")] * 5)
    with pytest.raises(TransportError):
        Gateway(backend, max_retries=2, sleep=lambda s: None).complete(req())
    assert backend.calls == 3


def test_auth_error_is_not_retried():
    backend = Flaky([AuthError("no")])
    with pytest.raises(AuthError):
        Gateway(backend, sleep=lambda s: None).complete(req())
    assert backend.calls == 1


def test_script_miss_names_closest_rule():
    backend = ScriptedBackend([{"match": "hello world", "response": "a"}, {"match": "zzz", "response": "b"}])
    with pytest.raises(ScriptMiss) as info:
        backend(req("hello there"))
    assert "hello world" in str(info.value)


def test_rule_kinds_and_hit_budget():
    import re

    backend = scripted_rule_set([("alpha", "first", 1), (re.compile(r"al+pha"), "second"),
                                 (["x", "y"], "third")])
    assert backend(req("alpha")).content == "first"
    assert backend(req("alpha")).content == "second"
    assert backend(req("x and y")).content == "third"


def test_scripted_backend_from_file(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"rules": [{"match": "hello", "response": "hi"}]}))
    assert ScriptedBackend.from_file(path)(req()).content == "hi"


@pytest.mark.parametrize("text", [
    '{"thought": "t", "answer": "4"}',
    'Sure!\n```json\n{"thought": "t", "answer": "4"}\n```',
    'prefix {"thought": "t", "answer": "4"} suffix',
    '{"thought": "t", "answer": 4}',
])
def test_parse_fields_variants(text):
    assert parse_fields(text, ["thought", "answer"]) == {"thought": "t", "answer": "4"}


def test_parse_fields_single_field_raw_fallback():
    assert parse_fields("just text", ["answer"]) == {"answer": "just text"}
    with pytest.raises(MalformedOutput) as info:
        parse_fields('{"thought": "x"}', ["thought", "answer"])
    assert info.value.missing == ["answer"]


def test_complete_structured_repairs_once():
    backend = scripted_rule_set([("missing the keys", '{"a": "1", "b": "2"}'), ("q", '{"a": "1"}')])
    fields, exchanges = complete_structured(Gateway(backend), req("q"), ["a", "b"])
    assert fields == {"a": "1", "b": "2"}
    assert len(exchanges) == 2
    with pytest.raises(MalformedOutput) as info:
        complete_structured(Gateway(scripted_rule_set([("q", "nope")])), req("q"), ["a", "b"])
    assert len(info.value.exchanges) == 2


def mock_backend(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteBackend("http://llm.test/v1", client=client, **kw)


def test_remote_backend_posts_chat_completion(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi"}, "finish_reason": "stop"}],
                                         "usage": {"prompt_tokens": 3, "completion_tokens": 1}})

    resp = mock_backend(handler)(req(seed=4))
    assert resp.content == "hi" and resp.prompt_tokens == 3
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["seed"] == 4
    assert seen["body"]["messages"][0] == {"role": "system", "content": "sys"}


@pytest.mark.parametrize("status,exc", [(401, AuthError), (403, AuthError), (429, RateLimited),
                                        (503, TransportError), (400, TransportError)])
def test_remote_backend_status_mapping(status, exc):
    def handler(request):
        return httpx.Response(status, headers={"retry-after": "3"})

    with pytest.raises(exc) as info:
        mock_backend(handler, api_key="k")(req())
    if exc is RateLimited:
        assert info.value.retry_after == 3.0


def test_remote_backend_bad_body():
    with pytest.raises(TransportError):
        mock_backend(lambda r: httpx.Response(200, json={"nothing": 1}), api_key="k")(req())


def test_remote_backend_needs_url():
    with pytest.raises(ConfigError):
        RemoteBackend("")


def test_remote_transient_failures_go_through_gateway_retries():
    count = {"n": 0}

    def handler(request):
        count["n"] += 1
        if count["n"] == 1:
            return httpx.Response(502)
        return httpx.Response(200, json={"choices": [{"message": {"content": "fine"}}]})

    gw = Gateway(mock_backend(handler, api_key="k"), sleep=lambda s: None)
    assert gw.complete(req()).content == "fine"
    assert count["n"] == 2


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        req(temperature=2.5)
