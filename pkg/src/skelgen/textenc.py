"""Text embedding providers.

The default provider is a seeded hashing embedder so the whole pipeline runs
offline and identically across processes. A client for an external encoder
service hides behind the same interface; both guarantee deterministic,
unit-norm vectors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

_HASH_SEED = b"skelgen-text-v1:"


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    source: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


class ProviderError(RuntimeError):
    """An external embedding provider failed (network, auth, bad payload)."""


@runtime_checkable
class TextEncoder(Protocol):
    d_text: int

    def embed(self, text: str) -> TextEmbedding: ...


class HashTextEncoder:
    """Lowercase, split on whitespace, hash every token into a signed bucket,
    sum and L2-normalize. A tiny fixed fallback component keeps the result
    away from the zero vector (empty text, or tokens cancelling exactly)."""

    def __init__(self, d_text: int = 64):
        if d_text < 1:
            raise ValueError("d_text must be positive")
        self.d_text = d_text

    def embed(self, text: str) -> TextEmbedding:
        vec = np.zeros(self.d_text)
        for token in text.lower().split():
            digest = hashlib.sha256(_HASH_SEED + token.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:8], "big") % self.d_text
            sign = 1.0 if digest[8] % 2 == 0 else -1.0
            vec[idx] += sign
        vec[0] += 1e-8
        vec /= np.linalg.norm(vec)
        return TextEmbedding(vec, "hash")


class ExternalTextEncoder:
    """Client for an embedding endpoint: POST {"text": s} -> {"embedding": [..]}.

    Responses are renormalized so the provider contract (unit norm) holds
    even if the upstream model returns unnormalized vectors.
    """

    def __init__(self, url: str, d_text: int = 512,
                 auth_token: str | None = None, timeout: float = 30.0):
        self.url = url
        self.d_text = d_text
        self.auth_token = auth_token
        self.timeout = timeout

    def embed(self, text: str) -> TextEmbedding:
        import requests

        headers = {}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            resp = requests.post(self.url, json={"text": text},
                                 headers=headers, timeout=self.timeout)
            resp.raise_for_status()
            payload = resp.json()
        except requests.RequestException as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        except ValueError as exc:
            raise ProviderError(f"malformed embedding response: {exc}") from exc
        if "embedding" not in payload:
            raise ProviderError("response missing 'embedding'")
        vec = np.asarray(payload["embedding"], dtype=np.float64)
        if vec.shape != (self.d_text,):
            raise ProviderError(
                f"expected {self.d_text} dims, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ProviderError("non-finite embedding")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ProviderError("zero embedding")
        return TextEmbedding(vec / norm, "external")


def make_encoder(kind: str = "hash", d_text: int = 64,
                 url: str | None = None,
                 auth_token: str | None = None) -> TextEncoder:
    if kind == "hash":
        return HashTextEncoder(d_text)
    if kind == "external":
        if not url:
            raise ValueError("external encoder needs a url")
        return ExternalTextEncoder(url, d_text, auth_token)
    raise ValueError(f"unknown encoder kind {kind!r}")
