from .backends import API_KEY_ENV, RemoteBackend, Rule, ScriptedBackend, scripted_rule_set
from .cache import DiskCache, MemoryCache
from .fields import complete_structured, format_instruction, parse_fields
from .gateway import Gateway, complete
from .types import ChatRequest, ChatResponse, Message

__all__ = [
    "API_KEY_ENV", "ChatRequest", "ChatResponse", "DiskCache", "Gateway", "MemoryCache", "Message",
    "RemoteBackend", "Rule", "ScriptedBackend", "complete", "complete_structured",
    "format_instruction", "parse_fields", "scripted_rule_set",
]
