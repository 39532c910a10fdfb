"""Self-hosted per-course RAG chatbot service.

Course documents are chunked, embedded, and indexed into one isolated
collection per course bot; questions are answered by an interchangeable LLM
backend from retrieved excerpts, behind a privacy proxy, with per-token
usage metering.
"""

from .config import AppConfig, config_from_dict, load_config
from .embeddings import (
    EmbeddingBackendProfile,
    EmbeddingCache,
    EmbeddingClient,
    EmbeddingVector,
    MockEmbeddingBackend,
    mock_embed,
)
from .engine import ChatResult, ChatStream, CourseBotEngine, SourceRef
from .errors import CourseRagError
from .garden import MockChatBackend, ModelGarden, ModelProfile, Usage
from .ingest import Chunk, SourceDocument, approx_token_count, chunk_document, extract_text
from .lexical import InvertedIndex, bm25_search, index_chunks
from .metering import UsageLedger, UsageRecord, UsageReport
from .privacy import PseudonymSession, Scrubber
from .prompting import PromptBundle, SourceChunk, build_prompt
from .retrieval import RetrievalConfig, RetrievalResult, retrieve, rrf_fuse
from .service import create_app
from .vectorstore import Collection, cosine_similarity, top_k_semantic

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "ChatResult",
    "ChatStream",
    "Chunk",
    "Collection",
    "CourseBotEngine",
    "CourseRagError",
    "EmbeddingBackendProfile",
    "EmbeddingCache",
    "EmbeddingClient",
    "EmbeddingVector",
    "InvertedIndex",
    "MockChatBackend",
    "MockEmbeddingBackend",
    "ModelGarden",
    "ModelProfile",
    "PromptBundle",
    "PseudonymSession",
    "RetrievalConfig",
    "RetrievalResult",
    "Scrubber",
    "SourceChunk",
    "SourceDocument",
    "SourceRef",
    "Usage",
    "UsageLedger",
    "UsageRecord",
    "UsageReport",
    "approx_token_count",
    "bm25_search",
    "build_prompt",
    "chunk_document",
    "config_from_dict",
    "cosine_similarity",
    "create_app",
    "extract_text",
    "index_chunks",
    "load_config",
    "mock_embed",
    "retrieve",
    "rrf_fuse",
    "top_k_semantic",
    "__version__",
]
