from __future__ import annotations

import logging
import threading
import time

from ..errors import RateLimited, TransportError
from .types import CallCounters, ChatRequest, ChatResponse

log = logging.getLogger(__name__)

TRANSIENT = (TransportError, RateLimited)


class Gateway:
    """Single entry point for model calls: cache first, then the backend with retries.

    ``backend`` is any callable mapping a :class:`ChatRequest` to a
    :class:`ChatResponse`.  Safe to share across threads.
    """

    def __init__(self, backend, cache=None, max_retries: int = 3, backoff_base: float = 1.0,
                 sleep=time.sleep):
        self.backend = backend
        self.cache = cache
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.sleep = sleep
        self.counters = CallCounters()
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = request.cache_key()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.counters.cache_hits += 1
                return hit
        attempt = 0
        while True:
            with self._lock:
                self.counters.backend += 1
                self.counters.by_model[request.model] = self.counters.by_model.get(request.model, 0) + 1
            try:
                response = self.backend(request)
                break
            except TRANSIENT as exc:
                if attempt >= self.max_retries:
                    raise
                delay = self.backoff_base * (2 ** attempt)
                if isinstance(exc, RateLimited) and exc.retry_after is not None:
                    delay = max(delay, exc.retry_after)
                log.warning("transient backend failure (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                with self._lock:
                    self.counters.retries += 1
                self.sleep(delay)
                attempt += 1
        if self.cache is not None and response.finish_reason in ("stop", "length"):
            self.cache.put(key, response)
        return response


def complete(request: ChatRequest, backend) -> ChatResponse:
    """Run one request through ``backend`` (a :class:`Gateway` or a bare backend callable)."""
    if isinstance(backend, Gateway):
        return backend.complete(request)
    return Gateway(backend).complete(request)
