"""Embedding clients for the retrieval index.

Two interchangeable backends sit behind one protocol: a deterministic
stub used by every test and offline run, and an HTTP client for a
deployed embedding service exposing ``POST /embed``.

Stub derivation contract (version 1)
------------------------------------
The stub vector for a payload is fully pinned so that independent
implementations (this module, the embedding service, test oracles)
produce bit-identical results:

1. seed bytes = ``kind``:ascii + ``b":"`` + payload bytes, where kind is
   ``text`` (payload = UTF-8 encoded string) or ``image`` (payload = raw
   image bytes);
2. keystream = SHA-256(seed || uint32_be(counter)) for counter = 0, 1, ...
   concatenated until at least 4*dim bytes exist;
3. each consecutive 4-byte group, read as a big-endian unsigned 32-bit
   integer u, maps to the float u / 2**31 - 1.0 (fixed point in [-1, 1));
4. the first dim floats are L2-normalized.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import ProviderError

STUB_DERIVATION_VERSION = 1
DEFAULT_DIM = 512


class EmbeddingClient(Protocol):
    dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, image: bytes | str) -> np.ndarray: ...


def stub_vector(kind: str, payload: bytes, dim: int) -> list[float]:
    """Reference implementation of the stub derivation contract."""
    if kind not in ("text", "image"):
        raise ValueError(f"unknown payload kind: {kind}")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    seed = kind.encode("ascii") + b":" + payload
    buf = bytearray()
    counter = 0
    while len(buf) < 4 * dim:
        buf += hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
        counter += 1
    floats = [
        int.from_bytes(buf[4 * i : 4 * i + 4], "big") / 2**31 - 1.0
        for i in range(dim)
    ]
    norm = math.sqrt(sum(f * f for f in floats))
    if norm == 0.0:  # unreachable for SHA-256 output in practice
        raise ProviderError("degenerate zero vector from stub derivation")
    return [f / norm for f in floats]


def _image_bytes(image: bytes | str) -> bytes:
    if isinstance(image, bytes):
        return image
    return Path(image).read_bytes()


class StubEmbedder:
    """Deterministic hash-projection embedder; no model, no I/O beyond files."""

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        return np.array(stub_vector("text", text.encode("utf-8"), self.dim))

    def embed_image(self, image: bytes | str) -> np.ndarray:
        return np.array(stub_vector("image", _image_bytes(image), self.dim))


class HttpEmbeddingClient:
    """Client for the embedding service contract (``POST /embed``)."""

    def __init__(self, base_url: str, model: str = "stub", timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        health = self._get("/health")
        self.dim = int(health["dim"])

    def _get(self, path: str) -> dict:
        import requests

        resp = requests.get(self.base_url + path, timeout=self.timeout)
        if resp.status_code != 200:
            raise ProviderError(f"embedding service GET {path}: {resp.status_code}")
        return resp.json()

    def _post_embed(self, body: dict) -> np.ndarray:
        import requests

        resp = requests.post(self.base_url + "/embed", json=body, timeout=self.timeout)
        if resp.status_code != 200:
            raise ProviderError(
                f"embedding service /embed: {resp.status_code}",
                retryable=resp.status_code in (429, 500, 503),
            )
        payload = resp.json()
        vec = np.array(payload["vector"], dtype=float)
        if vec.shape != (self.dim,):
            raise ProviderError("embedding service returned wrong dimension")
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        return self._post_embed({"text": text, "model": self.model})

    def embed_image(self, image: bytes | str) -> np.ndarray:
        import base64

        data = _image_bytes(image)
        return self._post_embed(
            {"image_b64": base64.b64encode(data).decode("ascii"), "model": self.model}
        )
