"""Inverted-index keyword search over chunks with BM25 scoring.

The lexical alternative to embedding search: fast and exact on term overlap,
but blind to synonyms and cross-language queries, which is why retrieval
combines it with the semantic route by default.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DuplicateChunkId, EmptyIndex, StoreFormatError
from .ingest import Chunk, term_tokens

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75

_VERSION = 1
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


@dataclass
class InvertedIndex:
    """Postings per term plus per-chunk term counts.

    ``doc_lengths`` counts indexed terms per chunk (punctuation-only tokens
    are dropped before indexing); postings are sorted by chunk_id.
    """

    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)

    @property
    def total_docs(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)


def index_chunks(chunks: Sequence[Chunk]) -> InvertedIndex:
    """Build an inverted index over chunk texts.

    Terms are the lowercase word tokens of the corpus tokenizer; punctuation
    tokens are dropped. Raises DuplicateChunkId on id collisions.
    """
    index = InvertedIndex()
    seen: set[str] = set()
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise DuplicateChunkId(f"duplicate chunk_id {chunk.chunk_id!r}")
        seen.add(chunk.chunk_id)
        terms = term_tokens(chunk.text)
        index.doc_lengths[chunk.chunk_id] = len(terms)
        counts: dict[str, int] = {}
        for term in terms:
            counts[term] = counts.get(term, 0) + 1
        for term, tf in counts.items():
            index.postings.setdefault(term, []).append((chunk.chunk_id, tf))
    for plist in index.postings.values():
        plist.sort()
    return index


def bm25_search(
    index: InvertedIndex,
    query: str,
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[tuple[str, float]]:
    """Top-k chunks by BM25, descending; ties by ascending chunk_id.

    score(q, d) = sum over query terms t of
        IDF(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
    with IDF(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)). Chunks matching no
    query term are omitted (score would be zero).
    """
    if index.total_docs == 0:
        raise EmptyIndex("cannot search an index with no documents")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_docs = index.total_docs
    avgdl = index.avg_doc_length
    scores: dict[str, float] = {}
    for term in term_tokens(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        n_t = len(plist)
        idf = math.log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5))
        for chunk_id, tf in plist:
            dl = index.doc_lengths[chunk_id]
            denom = tf + k1 * (1.0 - b + b * dl / avgdl)
            scores[chunk_id] = scores.get(chunk_id, 0.0) + idf * tf * (k1 + 1.0) / denom
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def _write_str(out: list[bytes], s: str) -> None:
    raw = s.encode("utf-8")
    out.append(_U16.pack(len(raw)))
    out.append(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, st: struct.Struct):
        try:
            values = st.unpack_from(self.data, self.pos)
        except struct.error as exc:
            raise StoreFormatError("truncated lexical index file") from exc
        self.pos += st.size
        return values

    def read_str(self) -> str:
        (length,) = self.unpack(_U16)
        raw = self.data[self.pos : self.pos + length]
        if len(raw) < length:
            raise StoreFormatError("truncated lexical index file")
        self.pos += length
        return raw.decode("utf-8")


def save_index(index: InvertedIndex, path: str | Path) -> None:
    """Companion file next to the collection: version, doc count, avgdl,
    per-chunk lengths, then term postings, all length-prefixed."""
    out: list[bytes] = [
        _U16.pack(_VERSION),
        _U64.pack(index.total_docs),
        _F64.pack(index.avg_doc_length),
    ]
    for chunk_id in sorted(index.doc_lengths):
        _write_str(out, chunk_id)
        out.append(_U32.pack(index.doc_lengths[chunk_id]))
    out.append(_U64.pack(len(index.postings)))
    for term in sorted(index.postings):
        plist = index.postings[term]
        _write_str(out, term)
        out.append(_U32.pack(len(plist)))
        for chunk_id, tf in plist:
            _write_str(out, chunk_id)
            out.append(_U32.pack(tf))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(out))
    tmp.replace(path)


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    reader = _Reader(path.read_bytes())
    (version,) = reader.unpack(_U16)
    if version != _VERSION:
        raise StoreFormatError(f"unsupported lexical index version {version}")
    (n_docs,) = reader.unpack(_U64)
    reader.unpack(_F64)  # avgdl is derived; stored for external tooling only
    index = InvertedIndex()
    for _ in range(n_docs):
        chunk_id = reader.read_str()
        (length,) = reader.unpack(_U32)
        index.doc_lengths[chunk_id] = length
    (n_terms,) = reader.unpack(_U64)
    for _ in range(n_terms):
        term = reader.read_str()
        (n_post,) = reader.unpack(_U32)
        plist = []
        for _ in range(n_post):
            chunk_id = reader.read_str()
            (tf,) = reader.unpack(_U32)
            plist.append((chunk_id, tf))
        index.postings[term] = plist
    return index
