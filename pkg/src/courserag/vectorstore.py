"""Per-course collections of chunks plus vectors, with exact cosine top-k.

One collection per course, one file per collection on disk. Search is an
exact full scan: per-course corpora are a few thousand chunks at most, where
scanning takes milliseconds and exactness keeps ranking reproducible.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embeddings import EmbeddingVector, quantize_f32
from .errors import (
    CollectionNotFound,
    DimensionMismatch,
    EmptyCollection,
    StoreFormatError,
    ZeroVector,
)
from .ingest import Chunk, read_chunk_manifest, write_chunk_manifest

MAGIC = b"CRAG"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIQ")  # magic, version u16, dimension u32, count u64
_ID_LEN = struct.Struct("<H")
_NORM = struct.Struct("<d")


class RWLock:
    """Many readers or one writer; writers take priority over new readers."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class _ReadGuard:
    def __init__(self, lock: RWLock):
        self._lock = lock

    def __enter__(self):
        self._lock.acquire_read()

    def __exit__(self, *exc):
        self._lock.release_read()


class _WriteGuard:
    def __init__(self, lock: RWLock):
        self._lock = lock

    def __enter__(self):
        self._lock.acquire_write()

    def __exit__(self, *exc):
        self._lock.release_write()


class Collection:
    """The per-course unit of isolation: chunks, their vectors, one dimension.

    All mutating operations are atomic with respect to queries (reader-writer
    locking); a query never observes a half-applied upsert or delete.
    """

    def __init__(self, collection_id: str, course_label: str, dimension: int,
                 created_at: float | None = None):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.collection_id = collection_id
        self.course_label = course_label
        self.dimension = dimension
        self.created_at = created_at if created_at is not None else time.time()
        self._chunks: dict[str, Chunk] = {}
        self._vectors: dict[str, EmbeddingVector] = {}
        self._lock = RWLock()

    def __len__(self) -> int:
        with _ReadGuard(self._lock):
            return len(self._chunks)

    def chunk_ids(self) -> list[str]:
        with _ReadGuard(self._lock):
            return sorted(self._chunks)

    def get_chunk(self, chunk_id: str) -> Chunk:
        with _ReadGuard(self._lock):
            return self._chunks[chunk_id]

    def get_vector(self, chunk_id: str) -> EmbeddingVector:
        with _ReadGuard(self._lock):
            return self._vectors[chunk_id]

    def upsert_entries(self, entries: Iterable[tuple[Chunk, EmbeddingVector]]) -> None:
        """Insert or replace entries; validates everything before touching state."""
        entries = list(entries)
        prepared: list[tuple[Chunk, EmbeddingVector]] = []
        for chunk, vector in entries:
            if vector.dimension != self.dimension:
                raise DimensionMismatch(
                    f"vector for {chunk.chunk_id!r} has dimension {vector.dimension}, "
                    f"collection has {self.dimension}"
                )
            values = quantize_f32(vector.values)
            stored = EmbeddingVector.from_values(values)
            if stored.norm == 0.0:
                raise ZeroVector(f"zero vector for chunk {chunk.chunk_id!r}")
            prepared.append((chunk, stored))
        with _WriteGuard(self._lock):
            for chunk, vector in prepared:
                self._chunks[chunk.chunk_id] = chunk
                self._vectors[chunk.chunk_id] = vector

    def delete_document(self, doc_id: str) -> int:
        """Remove every chunk of a document atomically; returns removed count."""
        with _WriteGuard(self._lock):
            doomed = [cid for cid, c in self._chunks.items() if c.doc_id == doc_id]
            for cid in doomed:
                del self._chunks[cid]
                del self._vectors[cid]
            return len(doomed)

    def snapshot(self) -> list[tuple[str, EmbeddingVector]]:
        with _ReadGuard(self._lock):
            return sorted(self._vectors.items())


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|), in [-1, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions differ: {a.dimension} vs {b.dimension}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise ZeroVector("cosine similarity undefined for zero vectors")
    return float(np.dot(a.values, b.values) / (a.norm * b.norm))


def top_k_semantic(
    collection: Collection, query: EmbeddingVector, k: int
) -> list[tuple[str, float]]:
    """The k entries most cosine-similar to the query, descending.

    Exact full scan; ties broken by ascending chunk_id. Returns all entries
    when the collection holds fewer than k.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if query.dimension != collection.dimension:
        raise DimensionMismatch(
            f"query dimension {query.dimension} != collection {collection.dimension}"
        )
    if query.norm == 0.0:
        raise ZeroVector("query vector has zero norm")
    entries = collection.snapshot()
    if not entries:
        raise EmptyCollection(f"collection {collection.collection_id!r} is empty")
    scored = [
        (cid, float(np.dot(query.values, vec.values) / (query.norm * vec.norm)))
        for cid, vec in entries
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def persist_collection(
    collection: Collection, vectors_path: str | Path, manifest_path: str | Path
) -> None:
    """Write the vector file (CRAG format) and the chunk manifest.

    Vector file layout: magic "CRAG", format version u16, dimension u32,
    entry count u64, then per entry a length-prefixed UTF-8 chunk_id, the
    little-endian f32 vector, and the f64 norm. Chunk texts go to the
    manifest, referenced by chunk_id.
    """
    with _ReadGuard(collection._lock):
        items = sorted(collection._vectors.items())
        chunks = [collection._chunks[cid] for cid, _ in items]
    vectors_path = Path(vectors_path)
    tmp = vectors_path.with_suffix(vectors_path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, collection.dimension, len(items)))
        for cid, vec in items:
            cid_bytes = cid.encode("utf-8")
            fh.write(_ID_LEN.pack(len(cid_bytes)))
            fh.write(cid_bytes)
            fh.write(vec.values.astype("<f4").tobytes())
            fh.write(_NORM.pack(vec.norm))
    tmp.replace(vectors_path)
    write_chunk_manifest(chunks, manifest_path)


def load_collection(
    vectors_path: str | Path,
    manifest_path: str | Path,
    *,
    collection_id: str,
    course_label: str,
    created_at: float | None = None,
) -> Collection:
    """Rebuild a collection from its vector file and chunk manifest."""
    vectors_path = Path(vectors_path)
    if not vectors_path.exists():
        raise CollectionNotFound(f"no collection file at {vectors_path}")
    data = vectors_path.read_bytes()
    try:
        magic, version, dimension, count = _HEADER.unpack_from(data, 0)
    except struct.error as exc:
        raise StoreFormatError(f"collection file too short: {vectors_path}") from exc
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r} in {vectors_path}")
    if version != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported format version {version}")

    chunks = {c.chunk_id: c for c in read_chunk_manifest(manifest_path)}
    collection = Collection(collection_id, course_label, dimension, created_at)
    pos = _HEADER.size
    entries: list[tuple[Chunk, EmbeddingVector]] = []
    try:
        for _ in range(count):
            (id_len,) = _ID_LEN.unpack_from(data, pos)
            pos += _ID_LEN.size
            cid = data[pos : pos + id_len].decode("utf-8")
            pos += id_len
            raw = data[pos : pos + 4 * dimension]
            if len(raw) < 4 * dimension:
                raise StoreFormatError(f"truncated vector record in {vectors_path}")
            values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            pos += 4 * dimension
            (norm,) = _NORM.unpack_from(data, pos)
            pos += _NORM.size
            if cid not in chunks:
                raise StoreFormatError(f"vector {cid!r} missing from manifest")
            entries.append((chunks[cid], EmbeddingVector(values=values, norm=norm)))
    except struct.error as exc:
        raise StoreFormatError(f"truncated collection file {vectors_path}") from exc
    collection.upsert_entries(entries)
    return collection
