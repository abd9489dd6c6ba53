"""Embedding providers, cosine similarity and exact top-k vector indexes."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from kgrag.errors import ArgumentError, ProviderError, RetryableError, StoreFormatError

# Ranking scores are rounded to this many decimals so ties are reproducible
# regardless of floating-point summation order.
SCORE_DECIMALS = 12

NAMESPACES = ("entity", "image", "chunk")
_PUNCT_EDGES = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~“”‘’«»…"


def quantize(x):
    return np.round(x, SCORE_DECIMALS)


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: Sequence[str]) -> np.ndarray: ...


def hash_tokens(text: str) -> list[str]:
    """Lowercased whitespace tokens with edge punctuation stripped."""
    raw = text.lower().split()
    toks = [t.strip(_PUNCT_EDGES) for t in raw]
    toks = [t for t in toks if t]
    return toks or raw


class HashEmbedder:
    """Offline feature-hashing embedder.

    Each token adds 1 to bucket ``blake2b(f"{seed}:{token}") mod dim``;
    the count vector is then L2-normalized.
    """

    provider_id = "hash-v1"

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ArgumentError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._bucket = lru_cache(maxsize=1 << 16)(self._bucket_uncached)

    def _bucket_uncached(self, token: str) -> int:
        digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ArgumentError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for tok in hash_tokens(text):
            vec[self._bucket(tok)] += 1.0
        return vec / np.linalg.norm(vec)

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self.embed(t) for t in texts])

    def describe(self) -> dict:
        return {"provider": self.provider_id, "dim": self.dim, "seed": self.seed}


class RemoteEmbedder:
    """HTTP embedding service: POST ``{"texts": [...]}`` -> ``{"vectors": [...]}``."""

    provider_id = "remote"

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        dim: int | None = None,
        batch_size: int = 64,
        max_in_flight: int = 4,
        max_attempts: int = 3,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ):
        self.url = url or os.environ.get("EMBED_API_URL")
        if not self.url:
            raise ArgumentError("no embedding endpoint configured (EMBED_API_URL)")
        self.api_key = api_key if api_key is not None else os.environ.get("EMBED_API_KEY", "")
        self.dim = dim
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.max_attempts = max_attempts
        self.timeout = timeout
        self._transport = transport
        self._sleep = sleep

    def _post(self, texts: list[str]) -> np.ndarray:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        for attempt in range(1, self.max_attempts + 1):
            try:
                with httpx.Client(transport=self._transport, timeout=self.timeout) as client:
                    resp = client.post(self.url, json={"texts": texts}, headers=headers)
            except httpx.TransportError as exc:
                if attempt == self.max_attempts:
                    raise RetryableError(f"embedding request failed: {exc}", attempts=attempt) from exc
                self._sleep(min(2 ** (attempt - 1), 8))
                continue
            if resp.status_code // 100 != 2:
                raise ProviderError(f"embedding endpoint returned {resp.status_code}", resp.status_code, resp.text)
            try:
                vectors = np.asarray(resp.json()["vectors"], dtype=float)
            except (ValueError, KeyError, TypeError) as exc:
                raise ProviderError(f"bad embedding response: {exc}", resp.status_code, resp.text) from None
            if vectors.shape[0] != len(texts) or not np.all(np.isfinite(vectors)):
                raise ProviderError("embedding response has wrong shape or non-finite values", body=resp.text)
            if self.dim is None:
                self.dim = vectors.shape[1]
            return vectors
        raise AssertionError("unreachable")

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ArgumentError("cannot embed empty text")
        return self._post([text])[0]

    def embed_many(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if any(not t.strip() for t in texts):
            raise ArgumentError("cannot embed empty text")
        batches = [texts[i:i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if not batches:
            return np.zeros((0, self.dim or 0))
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return np.vstack(list(pool.map(self._post, batches)))

    def describe(self) -> dict:
        return {"provider": self.provider_id, "dim": self.dim, "url": self.url}


def similarity(a, b) -> float:
    """Cosine similarity of two non-zero vectors of equal length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ArgumentError("zero vector has no direction")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


class VectorIndex:
    """Exact-scan cosine index over one node namespace.

    Rows are kept sorted by id, so a stable sort on descending score
    yields the ascending-id tie-break for free.
    """

    def __init__(self, namespace: str, records: dict | None = None, dim: int | None = None):
        if namespace not in NAMESPACES:
            raise ArgumentError(f"unknown namespace {namespace!r}")
        self.namespace = namespace
        records = records or {}
        self.ids: list[str] = sorted(records)
        if self.ids:
            self.matrix = np.vstack([np.asarray(records[i], dtype=float) for i in self.ids])
            self.dim = self.matrix.shape[1]
        else:
            self.dim = dim
            self.matrix = np.zeros((0, dim or 0))
        if dim is not None and self.dim != dim:
            raise ArgumentError(f"expected dim {dim}, got {self.dim}")
        if not np.all(np.isfinite(self.matrix)):
            raise ArgumentError("embedding values must be finite")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(norms == 0):
            raise ArgumentError("zero vector in index")
        self._unit = self.matrix / norms[:, None] if len(self.ids) else self.matrix
        self._pos = {nid: i for i, nid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id) -> bool:
        return node_id in self._pos

    @property
    def records(self) -> dict[str, np.ndarray]:
        return {nid: self.matrix[i] for i, nid in enumerate(self.ids)}

    def vector(self, node_id: str) -> np.ndarray:
        return self.matrix[self._pos[node_id]]

    def position(self, node_id: str) -> int:
        return self._pos[node_id]

    def scores(self, query) -> np.ndarray:
        """Quantized cosine score of every row against ``query``, in id order."""
        if not self.ids:
            return np.zeros(0)
        q = np.asarray(query, dtype=float)
        if q.shape != (self.dim,):
            raise ArgumentError(f"query dim {q.shape} != index dim {self.dim}")
        n = np.linalg.norm(q)
        if n == 0:
            raise ArgumentError("zero query vector")
        return quantize(np.clip(self._unit @ (q / n), -1.0, 1.0))

    def top_k(self, query, k: int, threshold: float | None = None) -> list[tuple[str, float]]:
        if k < 1:
            raise ArgumentError("k must be >= 1")
        s = self.scores(query)
        order = rank(s)
        if threshold is not None:
            order = order[s[order] >= threshold]
        return [(self.ids[i], float(s[i])) for i in order[:k]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.namespace == other.namespace
            and self.ids == other.ids
            and (not self.ids or np.array_equal(self.matrix, other.matrix))
        )


def rank(scores: np.ndarray) -> np.ndarray:
    """Positions sorted by descending score, ties in ascending position."""
    return np.argsort(-scores, kind="stable")


def build_index(namespace: str, texts: dict[str, str], provider: EmbeddingProvider) -> VectorIndex:
    ids = sorted(texts)
    if not ids:
        return VectorIndex(namespace, dim=provider.dim)
    vecs = provider.embed_many([texts[i] for i in ids])
    return VectorIndex(namespace, dict(zip(ids, vecs)), dim=provider.dim)


def index_file(path, namespace: str) -> Path:
    return Path(path) / f"vectors-{namespace}.jsonl"


def persist(index: VectorIndex, path) -> Path:
    """Write ``vectors-<namespace>.jsonl`` under directory ``path``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    out = index_file(root, index.namespace)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for i, nid in enumerate(index.ids):
            values = [float(v) for v in index.matrix[i]]
            fh.write(json.dumps({"id": nid, "values": values}, ensure_ascii=False) + "\n")
    return out


def restore(path, namespace: str, dim: int | None = None) -> VectorIndex:
    src = index_file(path, namespace)
    records: dict[str, list[float]] = {}
    try:
        fh = open(src, encoding="utf-8")
    except FileNotFoundError:
        raise StoreFormatError("vector file not found", src) from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                nid, values = rec["id"], rec["values"]
                if not isinstance(nid, str) or not isinstance(values, list):
                    raise TypeError("expected string id and list of values")
                values = [float(v) for v in values]
                if not all(math.isfinite(v) for v in values):
                    raise ValueError("non-finite value")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StoreFormatError(f"bad vector record: {exc}", src, lineno) from None
            if nid in records:
                raise StoreFormatError(f"duplicate id {nid!r}", src, lineno)
            if records and len(values) != len(next(iter(records.values()))):
                raise StoreFormatError("inconsistent vector dimension", src, lineno)
            records[nid] = values
    try:
        return VectorIndex(namespace, records, dim=dim)
    except ArgumentError as exc:
        raise StoreFormatError(str(exc), src) from None
