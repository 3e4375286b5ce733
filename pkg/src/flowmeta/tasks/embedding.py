from __future__ import annotations

import hashlib
import os
import re

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..errors import EmbedBackendError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder(BaseEstimator, TransformerMixin):
    """Term-frequency feature hashing, L2-normalised.  Stateless and pure."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def fit(self, X=None, y=None):
        return self

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            vec[bucket(tok, self.dim)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def transform(self, X) -> np.ndarray:
        return np.array([self.embed(t) for t in X]).reshape(len(X), self.dim)


class RemoteEmbedder(BaseEstimator, TransformerMixin):
    """Embeddings from an HTTP ``/embeddings`` endpoint in the common OpenAI format."""

    def __init__(self, base_url: str = "", model: str = "all-MiniLM-L6-v2", api_key_env: str = "METAFLOW_API_KEY",
                 timeout: float = 60.0):
        self.base_url = base_url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        import httpx

        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = httpx.post(self.base_url.rstrip("/") + "/embeddings",
                              json={"model": self.model, "input": list(X)},
                              headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            data = sorted(resp.json()["data"], key=lambda d: d["index"])
            out = np.array([d["embedding"] for d in data], dtype=float)
        except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
            raise EmbedBackendError(str(exc)) from exc
        if out.shape[0] != len(X) or not np.all(np.isfinite(out)):
            raise EmbedBackendError("embedding endpoint returned a malformed batch")
        return out


def embed_texts(texts, embedder=None) -> np.ndarray:
    """One vector per text, as rows of a 2-D array."""
    embedder = embedder if embedder is not None else HashingEmbedder()
    return embedder.transform(list(texts))
