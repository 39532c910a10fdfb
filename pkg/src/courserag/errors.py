"""Exception types shared across the package."""


class CourseRagError(Exception):
    """Base class for all errors raised by this package."""


# --- ingestion ---

class UnsupportedFormat(CourseRagError):
    """Input bytes are not a supported text format (binary, bad encoding, unknown type)."""


class EmptyDocument(CourseRagError):
    """Extracted text is empty or whitespace-only; the document is rejected."""


class InvalidChunkParams(CourseRagError):
    """Chunking parameters violate overlap < max_chunk_tokens or are non-positive."""


# --- embeddings ---

class BackendUnavailable(CourseRagError):
    """A remote backend call failed (network error, 5xx, retries exhausted).

    ``usage`` optionally carries token counts consumed before the failure so
    that callers can still meter the request.
    """

    def __init__(self, message: str, usage=None):
        super().__init__(message)
        self.usage = usage


class DimensionMismatch(CourseRagError):
    """Vector length differs from the collection or backend dimension."""


class ZeroVector(CourseRagError):
    """A zero-norm vector where cosine similarity is undefined."""


# --- vector store ---

class EmptyCollection(CourseRagError):
    """Query against a collection with no entries."""


class CollectionNotFound(CourseRagError):
    """No collection stored under the given identifier/path."""


class StoreFormatError(CourseRagError):
    """A persisted collection or index file is corrupt or has the wrong magic/version."""


# --- lexical index ---

class DuplicateChunkId(CourseRagError):
    """Two chunks with the same chunk_id were offered for indexing."""


class EmptyIndex(CourseRagError):
    """Search against an index containing no documents."""


# --- prompting ---

class BudgetTooSmall(CourseRagError):
    """Even a zero-chunk prompt exceeds the token budget."""


# --- model garden ---

class ContextOverflow(CourseRagError):
    """Prompt bundle exceeds the model profile's context budget."""


class AuthFailure(CourseRagError):
    """Backend rejected our credentials."""


class UnknownProfile(CourseRagError):
    """No model profile registered under the given id."""


# --- privacy ---

class NoActiveSession(CourseRagError):
    """Pseudonymization requested outside an active session."""


# --- service ---

class Unauthorized(CourseRagError):
    """Missing or wrong access token for the requested bot or admin operation."""


class BadRequest(CourseRagError):
    """Malformed client request (e.g. empty chat message)."""


class JobNotFound(CourseRagError):
    """No ingestion job with the given id."""


class BotNotFound(CourseRagError):
    """No bot registered under the given id."""
