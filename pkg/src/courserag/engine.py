"""The bot engine: per-course state, ingestion jobs, and the chat pipeline.

One bot owns one collection; published corpora are swapped atomically so a
chat sees either the previous corpus or the new one, never a mixture. All
durable state lives under the configured data directory.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import re
import secrets
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from .config import AppConfig, ProfileConfig
from .embeddings import (
    Clock,
    EmbeddingBackend,
    EmbeddingBackendProfile,
    EmbeddingCache,
    EmbeddingClient,
    HTTPEmbeddingBackend,
    MockEmbeddingBackend,
    RateGate,
    SystemClock,
)
from .errors import (
    BackendUnavailable,
    BadRequest,
    BotNotFound,
    EmptyDocument,
    JobNotFound,
    Unauthorized,
    UnsupportedFormat,
)
from .garden import (
    ChatBackend,
    HTTPChatBackend,
    MockChatBackend,
    ModelGarden,
    ModelProfile,
    Usage,
    check_budget,
)
from .ingest import (
    Chunk,
    SourceDocument,
    chunk_document,
    expand_upload,
    extract_text,
    sniff_mime,
)
from .lexical import InvertedIndex, index_chunks, save_index
from .metering import UsageLedger, UsageReport
from .privacy import PseudonymSession, Scrubber, audit_request
from .prompting import DEFAULT_PERSONA, SourceChunk, build_prompt
from .retrieval import RetrievalConfig, retrieve
from .vectorstore import Collection, persist_collection

HISTORY_WINDOW_TURNS = 6
CONVERSATION_IDLE_SECONDS = 2 * 60 * 60

JOB_STATES = (
    "queued",
    "extracting",
    "chunking",
    "embedding",
    "indexing",
    "done",
    "failed",
)


def _hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def _slug(label: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")
    return slug or "bot"


class IngestionJob:
    """Mutable job record; state only moves forward, except any -> failed."""

    def __init__(self, job_id: str, bot_id: str):
        self.job_id = job_id
        self.bot_id = bot_id
        self._lock = threading.Lock()
        self.state = "queued"
        self.chunks_embedded = 0
        self.total_chunks = 0
        self.error: str | None = None
        self.file_errors: list[dict[str, str]] = []
        self.corpus_version: int | None = None
        self.created_at = time.time()
        self.finished_at: float | None = None

    def advance(self, new_state: str) -> None:
        with self._lock:
            if self.state in ("done", "failed"):
                raise RuntimeError(f"job {self.job_id} already {self.state}")
            if JOB_STATES.index(new_state) <= JOB_STATES.index(self.state):
                raise RuntimeError(
                    f"job state may not move back: {self.state} -> {new_state}"
                )
            self.state = new_state
            if new_state in ("done", "failed"):
                self.finished_at = time.time()

    def fail(self, message: str) -> None:
        with self._lock:
            if self.state in ("done", "failed"):
                return
            self.state = "failed"
            self.error = message
            self.finished_at = time.time()

    def set_progress(self, embedded: int, total: int) -> None:
        with self._lock:
            self.chunks_embedded = embedded
            self.total_chunks = total

    def add_file_error(self, filename: str, message: str) -> None:
        with self._lock:
            self.file_errors.append({"filename": filename, "error": message})

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "job_id": self.job_id,
                "bot_id": self.bot_id,
                "state": self.state,
                "chunks_embedded": self.chunks_embedded,
                "total_chunks": self.total_chunks,
                "error": self.error,
                "file_errors": list(self.file_errors),
                "corpus_version": self.corpus_version,
            }


@dataclass(frozen=True)
class PublishedCorpus:
    """Immutable snapshot a chat reads: vectors, index, and doc titles."""

    version: int
    collection: Collection
    index: InvertedIndex
    titles: dict[str, str]


class _Conversation:
    __slots__ = ("messages", "last_active")

    def __init__(self, now: float):
        self.messages: deque[dict[str, str]] = deque(maxlen=HISTORY_WINDOW_TURNS)
        self.last_active = now


class BotRuntime:
    def __init__(
        self,
        *,
        bot_id: str,
        course_label: str,
        collection_id: str,
        persona: str,
        retrieval_config: RetrievalConfig,
        token_hashes: set[str],
        directory: Path,
        published: PublishedCorpus,
        created_at: float,
    ):
        self.bot_id = bot_id
        self.course_label = course_label
        self.collection_id = collection_id
        self.persona = persona
        self.retrieval_config = retrieval_config
        self.token_hashes = token_hashes
        self.directory = directory
        self.created_at = created_at
        self.publish_lock = threading.Lock()
        self.published = published
        self.ingest_lock = threading.Lock()
        self.conv_lock = threading.Lock()
        self.conversations: dict[str, _Conversation] = {}

    def snapshot_corpus(self) -> PublishedCorpus:
        with self.publish_lock:
            return self.published

    def publish(self, corpus: PublishedCorpus) -> None:
        with self.publish_lock:
            self.published = corpus


@dataclass(frozen=True)
class SourceRef:
    """Chunk citation returned to the client alongside the reply."""

    chunk_id: str
    title: str
    seq: int
    char_start: int
    char_end: int
    excerpt: str

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "title": self.title,
            "seq": self.seq,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "excerpt": self.excerpt,
        }


@dataclass(frozen=True)
class ChatResult:
    reply: str
    sources: tuple[SourceRef, ...]
    fallback: bool
    profile_id: str
    pseudonym: str
    usage: Usage
    corpus_version: int


@dataclass(frozen=True)
class ChatStream:
    """Streaming variant: sources are known before the first fragment."""

    sources: tuple[SourceRef, ...]
    fallback: bool
    profile_id: str
    pseudonym: str
    corpus_version: int
    fragments: Iterator[str]


class CourseBotEngine:
    """Owns bots, jobs, the embedding client, the garden, and the ledger."""

    def __init__(
        self,
        config: AppConfig,
        *,
        clock: Clock | None = None,
        now_fn: Callable[[], float] = time.time,
        embed_backend: EmbeddingBackend | None = None,
        chat_backends: dict[str, ChatBackend] | None = None,
    ):
        self.config = config
        self.now_fn = now_fn
        self.data_dir = Path(config.data_dir)
        self.bots_dir = self.data_dir / "bots"
        self.bots_dir.mkdir(parents=True, exist_ok=True)

        self.scrubber = Scrubber(config.scrub.patterns)
        self.session = PseudonymSession()
        self.ledger = UsageLedger(self.data_dir / "usage.jsonl")

        self._clock = clock if clock is not None else SystemClock()
        gate = RateGate(config.embedding.inter_batch_wait, self._clock)
        if embed_backend is None:
            if config.embedding.backend == "mock":
                embed_backend = MockEmbeddingBackend(config.embedding.dimension)
            else:
                embed_backend = HTTPEmbeddingBackend(
                    config.embedding.endpoint, config.embedding.model
                )
        embed_profile = EmbeddingBackendProfile(
            name=config.embedding.model or f"mock-{config.embedding.dimension}",
            dimension=config.embedding.dimension,
            batch_size=config.embedding.batch_size,
            inter_batch_wait=config.embedding.inter_batch_wait,
            price_per_1k_tokens_micro=config.embedding.price_per_1k_micro,
        )
        cache = (
            EmbeddingCache(self.data_dir / "embedcache.bin")
            if config.embedding.cache
            else EmbeddingCache()
        )
        self.embed_client = EmbeddingClient(
            embed_backend, embed_profile, cache=cache, clock=self._clock, gate=gate
        )

        self.garden = ModelGarden()
        self._profiles: dict[str, ModelProfile] = {}
        for pc in config.profiles:
            backend = (chat_backends or {}).get(pc.profile_id)
            if backend is None:
                backend = self._build_chat_backend(pc)
            profile = ModelProfile(
                profile_id=pc.profile_id,
                display_name=pc.display_name,
                endpoint=pc.endpoint,
                context_budget_tokens=pc.context_budget_tokens,
                price_in_per_1k_micro=pc.price_in_per_1k_micro,
                price_out_per_1k_micro=pc.price_out_per_1k_micro,
                supports_streaming=pc.supports_streaming,
            )
            self._profiles[pc.profile_id] = profile
            self.garden.register_profile(profile, backend)

        self._bots: dict[str, BotRuntime] = {}
        self._bots_lock = threading.Lock()
        self._jobs: dict[str, IngestionJob] = {}
        self._jobs_lock = threading.Lock()
        self._load_bots()

    @staticmethod
    def _build_chat_backend(pc: ProfileConfig) -> ChatBackend:
        if pc.is_mock:
            return MockChatBackend()
        return HTTPChatBackend(pc.endpoint, pc.model or pc.profile_id)

    # ---- bot lifecycle -------------------------------------------------

    def _bot_dir(self, bot_id: str) -> Path:
        return self.bots_dir / bot_id

    def _retrieval_from_dict(self, raw: dict | None) -> RetrievalConfig:
        defaults = self.config.retrieval
        raw = raw or {}
        return RetrievalConfig(
            mode=raw.get("mode", defaults.mode),
            k=int(raw.get("k", defaults.k)),
            min_similarity=float(raw.get("min_similarity", defaults.min_similarity)),
            rrf_k=int(raw.get("rrf_k", defaults.rrf_k)),
        )

    def _save_bot_meta(self, bot: BotRuntime) -> None:
        meta = {
            "bot_id": bot.bot_id,
            "course_label": bot.course_label,
            "collection_id": bot.collection_id,
            "persona": bot.persona,
            "token_hashes": sorted(bot.token_hashes),
            "profile_id": self.garden.active_profile_id(bot.bot_id),
            "retrieval": {
                "mode": bot.retrieval_config.mode,
                "k": bot.retrieval_config.k,
                "min_similarity": bot.retrieval_config.min_similarity,
                "rrf_k": bot.retrieval_config.rrf_k,
            },
            "corpus_version": bot.snapshot_corpus().version,
            "created_at": bot.created_at,
        }
        path = bot.directory / "bot.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(meta, indent=2), encoding="utf-8")
        tmp.replace(path)

    def _empty_corpus(self, bot_id: str, collection_id: str, course_label: str) -> PublishedCorpus:
        return PublishedCorpus(
            version=0,
            collection=Collection(
                collection_id=collection_id,
                course_label=course_label,
                dimension=self.config.embedding.dimension,
            ),
            index=InvertedIndex(),
            titles={},
        )

    def _load_bots(self) -> None:
        from .lexical import load_index
        from .vectorstore import load_collection

        for meta_path in sorted(self.bots_dir.glob("*/bot.json")):
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            bot_id = meta["bot_id"]
            directory = meta_path.parent
            collection_id = meta["collection_id"]
            course_label = meta["course_label"]
            vectors_path = directory / "collection.crag"
            corpus = self._empty_corpus(bot_id, collection_id, course_label)
            if vectors_path.exists():
                collection = load_collection(
                    vectors_path,
                    directory / "chunks.jsonl",
                    collection_id=collection_id,
                    course_label=course_label,
                )
                index = load_index(directory / "lexical.idx")
                titles_path = directory / "titles.json"
                titles = (
                    json.loads(titles_path.read_text(encoding="utf-8"))
                    if titles_path.exists()
                    else {}
                )
                corpus = PublishedCorpus(
                    version=int(meta.get("corpus_version", 1)),
                    collection=collection,
                    index=index,
                    titles=titles,
                )
            bot = BotRuntime(
                bot_id=bot_id,
                course_label=course_label,
                collection_id=collection_id,
                persona=meta.get("persona") or DEFAULT_PERSONA,
                retrieval_config=self._retrieval_from_dict(meta.get("retrieval")),
                token_hashes=set(meta.get("token_hashes", [])),
                directory=directory,
                published=corpus,
                created_at=float(meta.get("created_at", time.time())),
            )
            profile_id = meta.get("profile_id", self.config.default_profile_id)
            if profile_id not in self._profiles:
                profile_id = self.config.default_profile_id
            self.garden.set_active(bot_id, profile_id)
            with self._bots_lock:
                self._bots[bot_id] = bot

    def create_bot(
        self,
        course_label: str,
        *,
        bot_id: str | None = None,
        persona: str | None = None,
        retrieval: dict | None = None,
        profile_id: str | None = None,
    ) -> dict:
        """Provision a bot with an empty collection; returns the one-time token."""
        if not course_label or not course_label.strip():
            raise BadRequest("course_label must be non-empty")
        bot_id = bot_id or f"{_slug(course_label)}-{secrets.token_hex(3)}"
        if not re.fullmatch(r"[a-z0-9][a-z0-9\-]{0,63}", bot_id):
            raise BadRequest(
                "bot_id must be 1-64 chars of lowercase letters, digits, hyphens"
            )
        chosen_profile = profile_id or self.config.default_profile_id
        self.garden.get_profile(chosen_profile)
        collection_id = f"col-{bot_id}"
        directory = self._bot_dir(bot_id)
        token = secrets.token_urlsafe(24)
        bot = BotRuntime(
            bot_id=bot_id,
            course_label=course_label.strip(),
            collection_id=collection_id,
            persona=(persona or DEFAULT_PERSONA).strip() or DEFAULT_PERSONA,
            retrieval_config=self._retrieval_from_dict(retrieval),
            token_hashes={_hash_token(token)},
            directory=directory,
            published=self._empty_corpus(bot_id, collection_id, course_label),
            created_at=self.now_fn(),
        )
        with self._bots_lock:
            if bot_id in self._bots:
                raise BadRequest(f"bot {bot_id!r} already exists")
            self._bots[bot_id] = bot
        (directory / "uploads").mkdir(parents=True, exist_ok=True)
        self.garden.set_active(bot_id, chosen_profile)
        self._save_bot_meta(bot)
        info = self.bot_info(bot_id)
        info["access_token"] = token
        return info

    def issue_token(self, bot_id: str) -> str:
        bot = self._get_bot(bot_id)
        token = secrets.token_urlsafe(24)
        bot.token_hashes.add(_hash_token(token))
        self._save_bot_meta(bot)
        return token

    def _get_bot(self, bot_id: str) -> BotRuntime:
        with self._bots_lock:
            bot = self._bots.get(bot_id)
        if bot is None:
            raise BotNotFound(f"no bot {bot_id!r}")
        return bot

    def list_bots(self) -> list[dict]:
        with self._bots_lock:
            ids = sorted(self._bots)
        return [self.bot_info(bot_id) for bot_id in ids]

    def bot_info(self, bot_id: str) -> dict:
        bot = self._get_bot(bot_id)
        corpus = bot.snapshot_corpus()
        return {
            "bot_id": bot.bot_id,
            "course_label": bot.course_label,
            "collection_id": bot.collection_id,
            "persona": bot.persona,
            "profile_id": self.garden.active_profile_id(bot.bot_id),
            "corpus_version": corpus.version,
            "chunk_count": len(corpus.collection),
            "retrieval": {
                "mode": bot.retrieval_config.mode,
                "k": bot.retrieval_config.k,
                "min_similarity": bot.retrieval_config.min_similarity,
                "rrf_k": bot.retrieval_config.rrf_k,
            },
        }

    # ---- auth ----------------------------------------------------------

    def authorize_admin(self, token: str | None) -> None:
        if not token or not hmac.compare_digest(token, self.config.admin_token):
            raise Unauthorized("admin token required")

    def authorize_bot(self, bot_id: str, token: str | None) -> None:
        """Per-course tokens: a token for bot A never authorizes bot B."""
        bot = self._get_bot(bot_id)
        if not token or _hash_token(token) not in bot.token_hashes:
            raise Unauthorized(f"token not valid for bot {bot_id!r}")

    # ---- documents and ingestion ----------------------------------------

    def upload_documents(
        self, bot_id: str, filename: str, data: bytes, *, replace: bool = False
    ) -> list[dict]:
        """Store an uploaded file (or every supported member of a zip archive)
        in the bot's staging area; ingestion consumes the whole area."""
        bot = self._get_bot(bot_id)
        uploads = bot.directory / "uploads"
        uploads.mkdir(parents=True, exist_ok=True)
        members = expand_upload(filename, data)
        for name, _ in members:
            sniff_mime(name)
        if replace:
            for old in uploads.iterdir():
                if old.is_file():
                    old.unlink()
        stored = []
        for name, payload in members:
            safe_name = Path(name).name
            (uploads / safe_name).write_bytes(payload)
            stored.append({"filename": safe_name, "bytes": len(payload)})
        return stored

    def list_documents(self, bot_id: str) -> list[dict]:
        bot = self._get_bot(bot_id)
        uploads = bot.directory / "uploads"
        out = []
        if uploads.exists():
            for path in sorted(uploads.iterdir()):
                if path.is_file():
                    out.append({"filename": path.name, "bytes": path.stat().st_size})
        return out

    def start_ingestion(self, bot_id: str) -> dict:
        """Queue an ingestion job; at most one runs per bot at a time."""
        bot = self._get_bot(bot_id)
        job = IngestionJob(job_id=f"job-{secrets.token_hex(8)}", bot_id=bot_id)
        with self._jobs_lock:
            self._jobs[job.job_id] = job
        thread = threading.Thread(
            target=self._run_job, args=(bot, job), daemon=True, name=job.job_id
        )
        thread.start()
        return job.snapshot()

    def job_status(self, job_id: str) -> dict:
        with self._jobs_lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise JobNotFound(f"no job {job_id!r}")
        return job.snapshot()

    def _run_job(self, bot: BotRuntime, job: IngestionJob) -> None:
        with bot.ingest_lock:
            try:
                self._execute_job(bot, job)
            except Exception as exc:
                job.fail(str(exc))

    def _execute_job(self, bot: BotRuntime, job: IngestionJob) -> None:
        uploads = bot.directory / "uploads"
        files = sorted(p for p in uploads.iterdir() if p.is_file()) if uploads.exists() else []
        if not files:
            job.fail("no documents uploaded")
            return

        job.advance("extracting")
        docs: list[SourceDocument] = []
        seen_doc_ids: set[str] = set()
        for path in files:
            try:
                doc = extract_text(
                    path.read_bytes(), sniff_mime(path.name), title=path.stem
                )
            except (UnsupportedFormat, EmptyDocument) as exc:
                job.add_file_error(path.name, str(exc))
                continue
            if doc.doc_id in seen_doc_ids:
                job.add_file_error(path.name, "duplicate of another uploaded file")
                continue
            seen_doc_ids.add(doc.doc_id)
            docs.append(doc)
        if not docs:
            job.fail("no extractable documents in upload area")
            return

        job.advance("chunking")
        chunks: list[Chunk] = []
        titles: dict[str, str] = {}
        prefix = f"{bot.collection_id}/"
        for doc in docs:
            titles[doc.doc_id] = doc.title or doc.doc_id
            chunks.extend(chunk_document(doc, chunk_id_prefix=prefix))
        job.set_progress(0, len(chunks))

        job.advance("embedding")
        vectors = self.embed_client.embed_corpus(
            chunks, progress=lambda done, total: job.set_progress(done, total)
        )

        job.advance("indexing")
        collection = Collection(
            collection_id=bot.collection_id,
            course_label=bot.course_label,
            dimension=self.config.embedding.dimension,
        )
        collection.upsert_entries(list(zip(chunks, vectors)))
        index = index_chunks(chunks)

        persist_collection(
            collection,
            bot.directory / "collection.crag",
            bot.directory / "chunks.jsonl",
        )
        save_index(index, bot.directory / "lexical.idx")
        titles_path = bot.directory / "titles.json"
        tmp = titles_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(titles, indent=2), encoding="utf-8")
        tmp.replace(titles_path)

        new_version = bot.snapshot_corpus().version + 1
        bot.publish(
            PublishedCorpus(
                version=new_version, collection=collection, index=index, titles=titles
            )
        )
        job.corpus_version = new_version
        self._save_bot_meta(bot)
        job.advance("done")

    # ---- chat ------------------------------------------------------------

    def _conversation(
        self, bot: BotRuntime, conversation_id: str, now: float
    ) -> tuple[list[dict[str, str]], _Conversation]:
        with bot.conv_lock:
            stale = [
                cid
                for cid, conv in bot.conversations.items()
                if now - conv.last_active > CONVERSATION_IDLE_SECONDS
            ]
            for cid in stale:
                del bot.conversations[cid]
            conv = bot.conversations.get(conversation_id)
            if conv is None:
                conv = _Conversation(now)
                bot.conversations[conversation_id] = conv
            conv.last_active = now
            return list(conv.messages), conv

    def _append_turns(
        self, bot: BotRuntime, conv: _Conversation, user_text: str, reply: str, now: float
    ) -> None:
        with bot.conv_lock:
            conv.messages.append({"role": "user", "content": user_text})
            conv.messages.append({"role": "assistant", "content": reply})
            conv.last_active = now

    def _record_usage(
        self,
        bot_id: str,
        pseudonym: str,
        profile: ModelProfile,
        usage: Usage,
    ) -> None:
        self.ledger.record(
            bot_id=bot_id,
            pseudonym=pseudonym,
            profile_id=profile.profile_id,
            tokens_in=usage.tokens_in,
            tokens_out=usage.tokens_out,
            price_in_per_1k_micro=profile.price_in_per_1k_micro,
            price_out_per_1k_micro=profile.price_out_per_1k_micro,
            timestamp=self.now_fn(),
        )

    def _prepare_chat(
        self,
        bot: BotRuntime,
        message: str,
        conversation_id: str,
        user_id: str | None,
        token: str,
    ):
        if not message or not message.strip():
            raise BadRequest("message must be non-empty")
        scrubbed = self.scrubber.scrub(message.strip())
        identity = user_id or _hash_token(token)
        pseudonym = self.session.pseudonymize(identity)
        audit_request(pseudonym, scrubbed.redaction_count)

        corpus = bot.snapshot_corpus()
        result = retrieve(
            corpus.collection,
            corpus.index,
            scrubbed.text,
            bot.retrieval_config,
            self.embed_client,
        )
        profile, backend = self.garden.admit(bot.bot_id)

        sources = [
            SourceChunk(
                chunk_id=rc.chunk.chunk_id,
                title=corpus.titles.get(rc.chunk.doc_id, rc.chunk.doc_id),
                seq=rc.chunk.seq,
                text=rc.chunk.text,
            )
            for rc in result.chunks
        ]
        bundle = build_prompt(
            scrubbed.text,
            sources,
            persona=bot.persona,
            budget_tokens=profile.context_budget_tokens,
            relevant=result.relevant,
        )
        check_budget(bundle, profile)

        by_id = {rc.chunk.chunk_id: rc.chunk for rc in result.chunks}
        title_by_id = {s.chunk_id: s.title for s in sources}
        refs = tuple(
            SourceRef(
                chunk_id=cid,
                title=title_by_id[cid],
                seq=by_id[cid].seq,
                char_start=by_id[cid].char_span[0],
                char_end=by_id[cid].char_span[1],
                excerpt=by_id[cid].text,
            )
            for cid in bundle.included_chunks
        )
        now = self.now_fn()
        history, conv = self._conversation(bot, conversation_id, now)
        return scrubbed, pseudonym, corpus, profile, backend, bundle, refs, history, conv

    def chat(
        self,
        bot_id: str,
        token: str,
        message: str,
        conversation_id: str = "default",
        user_id: str | None = None,
    ) -> ChatResult:
        """Full pipeline: scrub, retrieve, prompt, complete, meter.

        A usage record is written for every completion attempt, including
        ones that fail at the backend.
        """
        bot = self._get_bot(bot_id)
        self.authorize_bot(bot_id, token)
        (
            scrubbed,
            pseudonym,
            corpus,
            profile,
            backend,
            bundle,
            refs,
            history,
            conv,
        ) = self._prepare_chat(bot, message, conversation_id, user_id, token)

        try:
            reply, usage = backend.complete(bundle, history)
        except BackendUnavailable as exc:
            failed_usage = exc.usage or Usage(tokens_in=bundle.total_tokens, tokens_out=0)
            self._record_usage(bot_id, pseudonym, profile, failed_usage)
            raise
        self._record_usage(bot_id, pseudonym, profile, usage)
        self._append_turns(bot, conv, scrubbed.text, reply, self.now_fn())
        return ChatResult(
            reply=reply,
            sources=refs,
            fallback=bundle.fallback_active,
            profile_id=profile.profile_id,
            pseudonym=pseudonym,
            usage=usage,
            corpus_version=corpus.version,
        )

    def chat_stream(
        self,
        bot_id: str,
        token: str,
        message: str,
        conversation_id: str = "default",
        user_id: str | None = None,
    ) -> ChatStream:
        """Streaming pipeline; falls back to non-streaming profiles by
        yielding the whole reply as one fragment."""
        bot = self._get_bot(bot_id)
        self.authorize_bot(bot_id, token)
        (
            scrubbed,
            pseudonym,
            corpus,
            profile,
            backend,
            bundle,
            refs,
            history,
            conv,
        ) = self._prepare_chat(bot, message, conversation_id, user_id, token)

        def fragments() -> Iterator[str]:
            parts: list[str] = []
            usage: Usage | None = None
            try:
                if profile.supports_streaming:
                    for chunk in backend.stream(bundle, history):
                        if chunk.text:
                            parts.append(chunk.text)
                            yield chunk.text
                        if chunk.usage is not None:
                            usage = chunk.usage
                else:
                    reply, usage = backend.complete(bundle, history)
                    parts.append(reply)
                    yield reply
            except BackendUnavailable as exc:
                failed = exc.usage or Usage(tokens_in=bundle.total_tokens, tokens_out=0)
                self._record_usage(bot_id, pseudonym, profile, failed)
                raise
            if usage is None:
                usage = Usage(tokens_in=bundle.total_tokens, tokens_out=0)
            self._record_usage(bot_id, pseudonym, profile, usage)
            self._append_turns(bot, conv, scrubbed.text, "".join(parts), self.now_fn())

        return ChatStream(
            sources=refs,
            fallback=bundle.fallback_active,
            profile_id=profile.profile_id,
            pseudonym=pseudonym,
            corpus_version=corpus.version,
            fragments=fragments(),
        )

    # ---- model switching and reporting -----------------------------------

    def switch_profile(self, bot_id: str, profile_id: str) -> str:
        bot = self._get_bot(bot_id)
        active = self.garden.switch_profile(bot_id, profile_id)
        self._save_bot_meta(bot)
        return active

    def usage_report(
        self, bot_id: str, since: float | None = None, until: float | None = None
    ) -> UsageReport:
        self._get_bot(bot_id)
        return self.ledger.report(bot_id, since=since, until=until)

    def close(self) -> None:
        self.session.close()
