"""Embedding client: pluggable backends, batch-and-wait rate discipline, persistent cache.

Corpus embedding submits fixed-size batches with a minimum wait between
backend calls (defaults: 10 texts per batch, 2 s apart). Results are cached
on disk keyed by (backend name, content hash) so re-ingestion never re-pays
for unchanged chunks. A deterministic character-3-gram mock backend serves
offline tests and smoke deployments.
"""

from __future__ import annotations

import hashlib
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import BackendUnavailable, DimensionMismatch
from .ingest import Chunk

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 10
DEFAULT_INTER_BATCH_WAIT = 2.0
DEFAULT_MOCK_DIMENSION = 256
MAX_RETRIES = 3


@dataclass(frozen=True)
class EmbeddingBackendProfile:
    """Describes an embedding backend and its rate discipline."""

    name: str
    dimension: int
    batch_size: int = DEFAULT_BATCH_SIZE
    inter_batch_wait: float = DEFAULT_INTER_BATCH_WAIT
    price_per_1k_tokens_micro: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.price_per_1k_tokens_micro < 0:
            raise ValueError("price must be >= 0")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A fixed-dimension float vector with its cached Euclidean norm."""

    values: np.ndarray
    norm: float

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EmbeddingVector":
        values = np.asarray(values, dtype=np.float64)
        return cls(values=values, norm=float(np.linalg.norm(values)))

    @property
    def dimension(self) -> int:
        return len(self.values)


def quantize_f32(values: np.ndarray) -> np.ndarray:
    """Round float64 values to float32 precision (still stored as float64).

    Applied at every persistence boundary so that cache and collection files,
    which hold raw little-endian f32, round-trip bit-exactly.
    """
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def stable_gram_hash(gram: str) -> int:
    """Machine-independent hash of a character n-gram."""
    digest = hashlib.sha256(gram.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def mock_embed(text: str, dimension: int = DEFAULT_MOCK_DIMENSION) -> EmbeddingVector:
    """Deterministic offline embedding from lowercase character 3-grams.

    Each 3-gram increments one component (hash mod dimension); the result is
    scaled to unit norm. Texts sharing 3-grams land closer in cosine space.
    Texts too short to contain a 3-gram map to the unit vector along
    component 0.
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    values = np.zeros(dimension, dtype=np.float64)
    lowered = text.lower()
    if len(lowered) < 3:
        values[0] = 1.0
        return EmbeddingVector.from_values(values)
    for i in range(len(lowered) - 2):
        gram = lowered[i : i + 3]
        values[stable_gram_hash(gram) % dimension] += 1.0
    values /= np.linalg.norm(values)
    return EmbeddingVector.from_values(values)


def content_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


# --- time source ---

class Clock(Protocol):
    def now(self) -> float: ...
    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class ManualClock:
    """Controllable time source for tests; sleep() advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self.total_slept = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds <= 0:
            return
        with self._lock:
            self._now += seconds
            self.total_slept += seconds


# --- rate gate ---

class RateGate:
    """Serializes backend calls and enforces a minimum interval between them.

    One gate per backend profile; concurrent ingestion jobs share it.
    Interactive callers (single prompt embeddings) are admitted ahead of any
    waiting corpus batches but still pay the same spacing.
    """

    def __init__(self, min_interval: float, clock: Clock):
        self._min_interval = min_interval
        self._clock = clock
        self._cond = threading.Condition()
        self._busy = False
        self._next_allowed = float("-inf")
        self._interactive_waiting = 0

    def acquire(self, interactive: bool = False) -> None:
        with self._cond:
            if interactive:
                self._interactive_waiting += 1
            try:
                while True:
                    admissible = not self._busy and (
                        interactive or self._interactive_waiting == 0
                    )
                    if admissible:
                        wait = self._next_allowed - self._clock.now()
                        if wait <= 0:
                            self._busy = True
                            self._next_allowed = self._clock.now() + self._min_interval
                            return
                        self._cond.release()
                        try:
                            self._clock.sleep(wait)
                        finally:
                            self._cond.acquire()
                    else:
                        self._cond.wait(timeout=0.05)
            finally:
                if interactive:
                    self._interactive_waiting -= 1

    def release(self) -> None:
        with self._cond:
            self._busy = False
            self._cond.notify_all()


# --- persistent cache ---

_REC_NAME = struct.Struct("<H")
_REC_DIM = struct.Struct("<I")
_HASH_LEN = 32


class EmbeddingCache:
    """Append-only on-disk vector cache keyed by (backend name, content hash).

    Record layout: u16 name length, name UTF-8, 32-byte hash, u32 dimension,
    dimension little-endian f32 values. Safe for concurrent readers/writers
    within one process; truncated trailing records (crash mid-append) are
    ignored on load.
    """

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, bytes], np.ndarray] = {}
        if self._path is not None and self._path.exists():
            self._load()

    def _load(self) -> None:
        data = self._path.read_bytes()
        pos = 0
        try:
            while pos < len(data):
                (name_len,) = _REC_NAME.unpack_from(data, pos)
                pos += _REC_NAME.size
                name = data[pos : pos + name_len].decode("utf-8")
                pos += name_len
                h = data[pos : pos + _HASH_LEN]
                pos += _HASH_LEN
                (dim,) = _REC_DIM.unpack_from(data, pos)
                pos += _REC_DIM.size
                raw = data[pos : pos + 4 * dim]
                if len(raw) < 4 * dim:
                    raise ValueError("truncated record")
                pos += 4 * dim
                values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
                self._entries[(name, bytes(h))] = values
        except (struct.error, ValueError, UnicodeDecodeError):
            logger.warning("ignoring truncated tail of embedding cache %s", self._path)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def get(self, backend_name: str, text_hash: bytes) -> np.ndarray | None:
        with self._lock:
            values = self._entries.get((backend_name, text_hash))
            return None if values is None else values.copy()

    def put(self, backend_name: str, text_hash: bytes, values: np.ndarray) -> None:
        values = quantize_f32(values)
        record = b"".join(
            (
                _REC_NAME.pack(len(backend_name.encode("utf-8"))),
                backend_name.encode("utf-8"),
                text_hash,
                _REC_DIM.pack(len(values)),
                values.astype("<f4").tobytes(),
            )
        )
        with self._lock:
            if (backend_name, text_hash) in self._entries:
                return
            self._entries[(backend_name, text_hash)] = values
            if self._path is not None:
                with self._path.open("ab") as fh:
                    fh.write(record)
                    fh.flush()


# --- backends ---

class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class MockEmbeddingBackend:
    """Offline deterministic backend wrapping :func:`mock_embed`."""

    def __init__(self, dimension: int = DEFAULT_MOCK_DIMENSION):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [mock_embed(t, self.dimension).values for t in texts]


class HTTPEmbeddingBackend:
    """Remote embedding endpoint speaking the common JSON shape.

    POST {endpoint} with {"model": name, "input": [texts]} and a bearer token
    taken from the environment; expects {"data": [{"embedding": [...]}]}.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "COURSERAG_EMBED_API_KEY",
        timeout: float = 60.0,
        transport=None,
    ):
        import httpx

        self.endpoint = endpoint
        self.model = model
        self._api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        import httpx

        headers = {}
        key = os.environ.get(self._api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"embedding backend failed: {exc}") from exc
        data = resp.json()["data"]
        return [np.asarray(item["embedding"], dtype=np.float64) for item in data]


# --- client ---

class EmbeddingClient:
    """Embeds texts through a backend, honoring cache and rate discipline."""

    def __init__(
        self,
        backend: EmbeddingBackend,
        profile: EmbeddingBackendProfile,
        cache: EmbeddingCache | None = None,
        clock: Clock | None = None,
        gate: RateGate | None = None,
        max_retries: int = MAX_RETRIES,
    ):
        self.backend = backend
        self.profile = profile
        self.cache = cache if cache is not None else EmbeddingCache()
        self.clock = clock if clock is not None else SystemClock()
        self.gate = gate if gate is not None else RateGate(profile.inter_batch_wait, self.clock)
        self.max_retries = max_retries

    def _call_backend(self, texts: Sequence[str], interactive: bool) -> list[np.ndarray]:
        """One rate-gated backend call with doubling-backoff retries."""
        backoff = self.profile.inter_batch_wait
        attempts = self.max_retries + 1
        for attempt in range(attempts):
            self.gate.acquire(interactive=interactive)
            try:
                raw = self.backend.embed(texts)
            except BackendUnavailable:
                if attempt == attempts - 1:
                    raise
                logger.warning(
                    "embedding batch failed (attempt %d/%d), backing off %.1fs",
                    attempt + 1, attempts, backoff,
                )
                self.clock.sleep(backoff)
                backoff *= 2
                continue
            finally:
                self.gate.release()
            if len(raw) != len(texts):
                raise BackendUnavailable(
                    f"backend returned {len(raw)} vectors for {len(texts)} texts"
                )
            for values in raw:
                if len(values) != self.profile.dimension:
                    raise DimensionMismatch(
                        f"backend returned dimension {len(values)}, "
                        f"profile says {self.profile.dimension}"
                    )
            return raw
        raise AssertionError("unreachable")

    def _embed_uncached(self, texts: Sequence[str], interactive: bool) -> None:
        """Embed texts not yet cached, inserting results into the cache."""
        pending: list[str] = []
        seen: set[bytes] = set()
        for text in texts:
            h = content_hash(text)
            if h in seen or self.cache.get(self.profile.name, h) is not None:
                continue
            seen.add(h)
            pending.append(text)
        if not pending:
            return
        if len(pending) > self.profile.batch_size:
            raise ValueError(
                f"batch of {len(pending)} exceeds batch_size {self.profile.batch_size}"
            )
        raw = self._call_backend(pending, interactive)
        for text, values in zip(pending, raw):
            self.cache.put(self.profile.name, content_hash(text), quantize_f32(values))

    def _from_cache(self, text: str) -> EmbeddingVector:
        values = self.cache.get(self.profile.name, content_hash(text))
        assert values is not None
        return EmbeddingVector.from_values(values)

    def embed_batch(self, texts: Sequence[str], *, interactive: bool = False) -> list[EmbeddingVector]:
        """Embed up to batch_size texts, one backend call for the cache misses."""
        if not texts:
            return []
        if any(not t for t in texts):
            raise ValueError("texts must be non-empty")
        if len(texts) > self.profile.batch_size:
            raise ValueError(
                f"batch of {len(texts)} exceeds batch_size {self.profile.batch_size}"
            )
        self._embed_uncached(texts, interactive)
        return [self._from_cache(t) for t in texts]

    def embed_text(self, text: str) -> EmbeddingVector:
        """Embed a single user prompt with interactive priority at the gate."""
        return self.embed_batch([text], interactive=True)[0]

    def embed_corpus(self, chunks: Sequence[Chunk], progress=None) -> list[EmbeddingVector]:
        """Embed chunk texts in rate-gated batches, skipping cached ones.

        Cached chunks consume no rate budget; partial progress survives a
        backend failure because each completed batch lands in the cache.
        ``progress(done, total)`` is called after each resolved chunk batch.
        """
        texts = [c.text for c in chunks]
        misses: list[str] = []
        seen: set[bytes] = set()
        for text in texts:
            h = content_hash(text)
            if h in seen or self.cache.get(self.profile.name, h) is not None:
                continue
            seen.add(h)
            misses.append(text)

        batch = self.profile.batch_size
        done_new = 0
        for i in range(0, len(misses), batch):
            self._embed_uncached(misses[i : i + batch], interactive=False)
            done_new += len(misses[i : i + batch])
            if progress is not None:
                covered = len(texts) - len(misses) + done_new
                progress(covered, len(texts))
        if progress is not None:
            progress(len(texts), len(texts))
        return [self._from_cache(t) for t in texts]
