"""Pull named fields out of a model reply that contains a JSON object."""

from __future__ import annotations

import json
import re

from ..errors import MalformedOutput
from .types import ChatRequest, ChatResponse, Message

_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.DOTALL)


def _balanced_objects(text: str):
    """Yield every top-level ``{...}`` span, respecting JSON strings."""
    depth, start, in_str, esc = 0, None, False, False
    for i, ch in enumerate(text):
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"' and depth > 0:
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                yield text[start : i + 1]


def _as_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "True" if value else "False"
    if value is None:
        return ""
    if isinstance(value, (int, float)):
        return str(value)
    return json.dumps(value, ensure_ascii=False)


def find_object(text: str) -> dict | None:
    candidates = [text.strip()]
    candidates += [m.group(1).strip() for m in _FENCE_RE.finditer(text)]
    candidates += list(_balanced_objects(text))
    best = None
    for cand in candidates:
        try:
            obj = json.loads(cand)
        except ValueError:
            continue
        if isinstance(obj, dict) and (best is None or len(obj) > len(best)):
            best = obj
    return best


def parse_fields(response: ChatResponse | str, expected_fields) -> dict[str, str]:
    """Map each expected field to its text; raise :class:`MalformedOutput` otherwise.

    A reply with no JSON object is accepted only when exactly one field is
    expected, in which case the whole reply is that field.
    """
    expected = list(expected_fields)
    if not expected:
        raise ValueError("expected_fields must be non-empty")
    text = response.content if isinstance(response, ChatResponse) else response
    obj = find_object(text)
    if obj is None:
        if len(expected) == 1 and text.strip():
            return {expected[0]: text.strip()}
        raise MalformedOutput(expected)
    missing = [f for f in expected if f not in obj]
    if missing:
        raise MalformedOutput(missing)
    return {f: _as_text(obj[f]) for f in expected}


def format_instruction(expected_fields) -> str:
    keys = ", ".join(f'"{f}"' for f in expected_fields)
    return f"Reply with a single JSON object whose keys are exactly {keys}. Every value must be a string."


def repair_request(request: ChatRequest, response: ChatResponse, missing, expected_fields) -> ChatRequest:
    ask = (
        f"Your previous reply is missing the keys {', '.join(missing)}. "
        + format_instruction(expected_fields)
    )
    return request.extend(Message("assistant", response.content), Message("user", ask))


def complete_structured(gateway, request: ChatRequest, expected_fields):
    """Call the model, parse fields, and allow one repair round.

    Returns ``(fields, responses)`` where ``responses`` lists the one or two
    requests/responses actually made, as ``(request, response)`` pairs.
    """
    response = gateway.complete(request)
    exchanges = [(request, response)]
    try:
        return parse_fields(response, expected_fields), exchanges
    except MalformedOutput as first:
        retry = repair_request(request, response, first.missing, expected_fields)
        second = gateway.complete(retry)
        exchanges.append((retry, second))
        try:
            return parse_fields(second, expected_fields), exchanges
        except MalformedOutput as exc:
            exc.exchanges = exchanges
            raise
