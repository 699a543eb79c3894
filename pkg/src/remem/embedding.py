"""Text embedding: a deterministic token-hashing embedder and a remote client.

The hashing embedder is the offline workhorse: it lowercases, splits on
non-alphanumerics, hashes each token with 64-bit FNV-1a, and accumulates a
signed count per bucket (bucket = hash mod d, sign from bit 63). Token
overlap between two texts then shows up as a large dot product, so tests
against it behave like semantic retrieval without any model dependency.

All vectors are float64; similarity is a plain inner product.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import requests

from .errors import DimensionMismatch, EmptyText, RemoteUnavailable

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# \w without underscore: Unicode alphanumerics only
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class EmbedderConfig:
    """Identity and shape of an embedding space.

    ``embedder_id`` must change whenever ``dimension`` or ``kind`` change;
    the default id is derived from both so this holds automatically.
    """

    dimension: int
    kind: str = "hashing"  # "hashing" | "remote"
    endpoint: str | None = None
    normalization: str = "unit_l2"  # "unit_l2" | "none"
    embedder_id: str = ""

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.kind not in ("hashing", "remote"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.normalization not in ("unit_l2", "none"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote embedder requires an endpoint")
        if self.kind == "hashing" and self.endpoint:
            raise ValueError("hashing embedder takes no endpoint")
        if not self.embedder_id:
            object.__setattr__(
                self, "embedder_id",
                f"{self.kind}-d{self.dimension}-{self.normalization}")


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense vector tagged with the id of the embedder that produced it."""

    values: np.ndarray
    embedder_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite components")

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics (the hashing tokenization)."""
    return _TOKEN_RE.findall(text.lower())


def _hash_embed(text: str, cfg: EmbedderConfig) -> np.ndarray:
    vec = np.zeros(cfg.dimension, dtype=np.float64)
    for token in tokenize(text):
        h = fnv1a_64(token.encode("utf-8"))
        sign = -1.0 if (h >> 63) & 1 else 1.0
        vec[h % cfg.dimension] += sign
    return vec


def _remote_embed_many(texts: list[str], cfg: EmbedderConfig,
                       timeout: float) -> list[np.ndarray]:
    try:
        resp = requests.post(cfg.endpoint, json={"texts": texts},
                             timeout=timeout)
    except requests.RequestException as exc:
        raise RemoteUnavailable(f"embedder at {cfg.endpoint}: {exc}") from exc
    if resp.status_code != 200:
        raise RemoteUnavailable(
            f"embedder at {cfg.endpoint} returned HTTP {resp.status_code}")
    try:
        vectors = resp.json()["vectors"]
    except (ValueError, KeyError) as exc:
        raise RemoteUnavailable(
            f"embedder at {cfg.endpoint}: malformed response") from exc
    if len(vectors) != len(texts):
        raise RemoteUnavailable(
            f"embedder returned {len(vectors)} vectors for {len(texts)} texts")
    out = []
    for raw in vectors:
        arr = np.asarray(raw, dtype=np.float64)
        if arr.shape != (cfg.dimension,):
            raise DimensionMismatch(
                f"remote embedder returned length {arr.shape}, "
                f"expected {cfg.dimension}")
        out.append(arr)
    return out


def _finish(raw: np.ndarray, cfg: EmbedderConfig) -> EmbeddingVector:
    if cfg.normalization == "unit_l2":
        norm = float(np.linalg.norm(raw))
        if norm > 0.0:
            raw = raw / norm
    return EmbeddingVector(values=raw, embedder_id=cfg.embedder_id)


def embed(text: str, cfg: EmbedderConfig, *,
          timeout: float = 30.0) -> EmbeddingVector:
    """Embed one text under ``cfg``.

    Deterministic for the hashing kind. Texts that yield no tokens map to
    the zero vector (normalization is skipped there so the call stays
    total over arbitrary input).
    """
    if not text.strip():
        raise EmptyText("cannot embed empty text")
    if cfg.kind == "hashing":
        raw = _hash_embed(text, cfg)
    else:
        raw = _remote_embed_many([text], cfg, timeout)[0]
    return _finish(raw, cfg)


def embed_many(texts: list[str], cfg: EmbedderConfig, *,
               timeout: float = 30.0) -> list[EmbeddingVector]:
    """Embed several texts; one remote round-trip for the remote kind."""
    for text in texts:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
    if cfg.kind == "hashing":
        raws = [_hash_embed(t, cfg) for t in texts]
    else:
        raws = _remote_embed_many(texts, cfg, timeout)
    return [_finish(r, cfg) for r in raws]


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Inner product of two equal-dimension embeddings."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(
            f"similarity over dims {a.dimension} and {b.dimension}")
    return float(np.dot(a.values, b.values))
