"""Hybrid retrieval: semantic and lexical rankings fused into one top-k.

Semantic search catches paraphrases and cross-language queries; BM25 catches
exact terminology the embedding model may smear out. Reciprocal-rank fusion
combines the two without needing their scores on a common scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .embeddings import EmbeddingClient
from .errors import EmptyCollection, EmptyIndex
from .ingest import Chunk
from .lexical import InvertedIndex, bm25_search
from .vectorstore import Collection, cosine_similarity, top_k_semantic

K_FLOOR = 4
K_CEILING = 10
DEFAULT_K = 6
DEFAULT_RRF_K = 60
DEFAULT_MIN_SIMILARITY = 0.25

MODES = ("semantic", "lexical", "hybrid")


def clamp_k(k: int) -> int:
    """Pin the chunk count to the range that works well in practice."""
    return max(K_FLOOR, min(K_CEILING, k))


@dataclass(frozen=True)
class RetrievalConfig:
    mode: str = "hybrid"
    k: int = DEFAULT_K
    min_similarity: float = DEFAULT_MIN_SIMILARITY
    rrf_k: int = DEFAULT_RRF_K
    allow_k_outside_range: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown retrieval mode {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.rrf_k < 1:
            raise ValueError("rrf_k must be >= 1")

    @property
    def effective_k(self) -> int:
        if self.allow_k_outside_range:
            return self.k
        return clamp_k(self.k)


@dataclass(frozen=True)
class RetrievedChunk:
    chunk: Chunk
    score: float
    semantic_score: float | None = None
    lexical_score: float | None = None


@dataclass(frozen=True)
class RetrievalResult:
    chunks: list[RetrievedChunk]
    relevant: bool
    best_similarity: float | None


def rrf_fuse(
    rankings: Sequence[Sequence[str]], rrf_k: int = DEFAULT_RRF_K
) -> list[tuple[str, float]]:
    """Fuse ranked id lists: score(id) = sum over lists of 1 / (rrf_k + rank),
    rank counted from 1. Sorted by descending score, then ascending id."""
    scores: dict[str, float] = {}
    for ranking in rankings:
        for rank, chunk_id in enumerate(ranking, start=1):
            scores[chunk_id] = scores.get(chunk_id, 0.0) + 1.0 / (rrf_k + rank)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def retrieve(
    collection: Collection,
    index: InvertedIndex,
    query_text: str,
    config: RetrievalConfig,
    embed_client: EmbeddingClient,
) -> RetrievalResult:
    """Run the configured retrieval mode and decide whether the best match
    is close enough to ground an answer.

    Semantic and hybrid modes call the query relevant when the best cosine
    similarity reaches ``min_similarity``; lexical mode, when any chunk
    matches a query term. An empty collection yields no chunks and
    relevant=False instead of an error.
    """
    k = config.effective_k
    semantic: list[tuple[str, float]] = []
    lexical: list[tuple[str, float]] = []
    need_semantic = config.mode in ("semantic", "hybrid")
    need_lexical = config.mode in ("lexical", "hybrid")
    depth = k if config.mode != "hybrid" else 2 * k

    if need_semantic:
        query_vec = embed_client.embed_text(query_text)
        try:
            semantic = top_k_semantic(collection, query_vec, depth)
        except EmptyCollection:
            return RetrievalResult(chunks=[], relevant=False, best_similarity=None)
    if need_lexical:
        try:
            lexical = bm25_search(index, query_text, depth)
        except EmptyIndex:
            if config.mode == "lexical":
                return RetrievalResult(chunks=[], relevant=False, best_similarity=None)
            lexical = []

    sem_scores = dict(semantic)
    lex_scores = dict(lexical)

    if config.mode == "semantic":
        ranked = semantic[:k]
    elif config.mode == "lexical":
        ranked = lexical[:k]
    else:
        fused = rrf_fuse(
            [[cid for cid, _ in semantic], [cid for cid, _ in lexical]],
            rrf_k=config.rrf_k,
        )
        ranked = fused[:k]

    chunks = [
        RetrievedChunk(
            chunk=collection.get_chunk(cid),
            score=score,
            semantic_score=sem_scores.get(cid),
            lexical_score=lex_scores.get(cid),
        )
        for cid, score in ranked
    ]

    if config.mode == "lexical":
        best = lexical[0][1] if lexical else None
        relevant = bool(lexical)
    else:
        best = semantic[0][1] if semantic else None
        relevant = best is not None and best >= config.min_similarity
    return RetrievalResult(chunks=chunks, relevant=relevant, best_similarity=best)


def similarity_to_query(
    collection: Collection, embed_client: EmbeddingClient, query_text: str
) -> dict[str, float]:
    """Cosine similarity of every chunk to the query; diagnostic helper."""
    query_vec = embed_client.embed_text(query_text)
    out: dict[str, float] = {}
    for chunk_id in collection.chunk_ids():
        out[chunk_id] = cosine_similarity(collection.get_vector(chunk_id), query_vec)
    return out
