"""Independent brute-force reference implementations.

These deliberately re-derive expected results from the written contracts,
sharing no code with the package internals, so exactness tests compare two
independent computations.
"""

from __future__ import annotations

import math
import re

import numpy as np

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WORD_RE = re.compile(r"\w+", re.UNICODE)


def oracle_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def oracle_token_count(text: str) -> int:
    return len(oracle_tokens(text))


def oracle_terms(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def oracle_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def oracle_top_k_cosine(
    vectors: dict[str, np.ndarray], query: np.ndarray, k: int
) -> list[tuple[str, float]]:
    """Score every vector, sort by descending score then ascending id."""
    scored = [(cid, oracle_cosine(vec, query)) for cid, vec in vectors.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def oracle_bm25(
    docs: dict[str, str], query: str, k: int, k1: float = 1.5, b: float = 0.75
) -> list[tuple[str, float]]:
    """BM25 over whole texts: IDF(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5))."""
    terms_by_doc = {cid: oracle_terms(text) for cid, text in docs.items()}
    lengths = {cid: len(terms) for cid, terms in terms_by_doc.items()}
    n_docs = len(docs)
    avgdl = sum(lengths.values()) / n_docs
    scores: dict[str, float] = {}
    for term in oracle_terms(query):
        containing = sorted(cid for cid, terms in terms_by_doc.items() if term in terms)
        if not containing:
            continue
        n_t = len(containing)
        idf = math.log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5))
        for cid in containing:
            tf = terms_by_doc[cid].count(term)
            dl = lengths[cid]
            denom = tf + k1 * (1.0 - b + b * dl / avgdl)
            scores[cid] = scores.get(cid, 0.0) + idf * tf * (k1 + 1.0) / denom
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def oracle_window_starts(n_tokens: int, max_tokens: int, overlap: int) -> list[int]:
    """Expected chunk window start offsets for a token stream of n_tokens."""
    starts = [0]
    stride = max_tokens - overlap
    while starts[-1] + max_tokens < n_tokens:
        starts.append(starts[-1] + stride)
    return starts


def oracle_rrf(rankings: list[list[str]], k_const: int = 60) -> list[tuple[str, float]]:
    scores: dict[str, float] = {}
    for ranking in rankings:
        for pos, cid in enumerate(ranking):
            scores[cid] = scores.get(cid, 0.0) + 1.0 / (k_const + pos + 1)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))
