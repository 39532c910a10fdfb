"""Release gate: one test per shipping criterion.

`pytest -v tests/test_acceptance.py` prints one pass or fail line per
criterion. Tolerances and counts are pinned on purpose; loosening them is a
contract change, not a test fix.
"""

from __future__ import annotations

import random
import re
import time
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from conftest import (
    OFF_TOPIC_QUERIES,
    ON_TOPIC_QUERIES,
    TOY_DOCS,
    TOY_MIN_SIMILARITY,
    bearer,
    build_toy_bot,
    make_engine,
    wait_for_job,
)
from oracles import oracle_bm25, oracle_top_k_cosine, oracle_window_starts

from courserag.embeddings import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_INTER_BATCH_WAIT,
    EmbeddingBackendProfile,
    EmbeddingCache,
    EmbeddingClient,
    ManualClock,
    MockEmbeddingBackend,
    RateGate,
    mock_embed,
    quantize_f32,
)
from courserag.errors import Unauthorized
from courserag.ingest import (
    Chunk,
    SourceDocument,
    approx_token_count,
    chunk_document,
    term_tokens,
)
from courserag.lexical import bm25_search, index_chunks
from courserag.metering import UsageLedger, cost_micro, verify_conservation
from courserag.prompting import SourceChunk, build_prompt
from courserag.retrieval import (
    K_CEILING,
    K_FLOOR,
    RetrievalConfig,
    clamp_k,
    retrieve,
)
from courserag.service import create_app
from courserag.vectorstore import Collection, top_k_semantic

_VOCAB = (
    "limit function matrix entropy vector heat convergence series integral "
    "derivative proof theorem basis kernel energy state system measure bound "
    "sequence norm space field group ring graph node edge path cycle prime "
    "modular lattice tensor flux wave phase orbit charge mass force momentum"
).split()


def _word_soup(rng: random.Random, lo: int, hi: int) -> str:
    return " ".join(rng.choice(_VOCAB) for _ in range(rng.randint(lo, hi)))


def _make_chunk(cid: str, doc_id: str, seq: int, text: str) -> Chunk:
    return Chunk(
        chunk_id=cid,
        doc_id=doc_id,
        seq=seq,
        text=text,
        token_count=approx_token_count(text),
        char_span=(0, len(text)),
    )


# --- criterion 1: retrieval exactness -----------------------------------


def test_retrieval_exactness_against_oracles():
    """100 random corpora: semantic and lexical top-k match brute force
    (exact order, scores within 1e-9) in under 30 seconds total."""
    rng = random.Random(20601)
    start = time.monotonic()
    for trial in range(100):
        n = rng.randint(1, 200)
        dim = rng.choice([16, 32])
        chunks = [
            _make_chunk(f"c{i:03d}", f"d{i % 7}", i, _word_soup(rng, 3, 30))
            for i in range(n)
        ]
        entries = [(c, mock_embed(c.text, dim)) for c in chunks]
        coll = Collection(f"col{trial}", "acceptance", dim)
        coll.upsert_entries(entries)
        index = index_chunks(chunks)

        k = rng.randint(1, n + 3)
        query = _word_soup(rng, 1, 8)
        qvec = mock_embed(query, dim)

        got_sem = top_k_semantic(coll, qvec, k)
        ref_vectors = {c.chunk_id: quantize_f32(v.values) for c, v in entries}
        want_sem = oracle_top_k_cosine(ref_vectors, qvec.values, k)
        assert [cid for cid, _ in got_sem] == [cid for cid, _ in want_sem]
        for (_, got), (_, want) in zip(got_sem, want_sem):
            assert abs(got - want) <= 1e-9

        got_lex = bm25_search(index, query, k)
        want_lex = oracle_bm25({c.chunk_id: c.text for c in chunks}, query, k)
        assert [cid for cid, _ in got_lex] == [cid for cid, _ in want_lex]
        for (_, got), (_, want) in zip(got_lex, want_lex):
            assert abs(got - want) <= 1e-9
    assert time.monotonic() - start < 30.0


# --- criterion 2: pipeline parameter fidelity ----------------------------


class _RecordingEmbedBackend:
    def __init__(self, dimension: int, clock: ManualClock):
        self._inner = MockEmbeddingBackend(dimension)
        self._clock = clock
        self.batch_sizes: list[int] = []
        self.call_times: list[float] = []

    def embed(self, texts):
        self.batch_sizes.append(len(texts))
        self.call_times.append(self._clock.now())
        return self._inner.embed(texts)


def test_pipeline_parameter_fidelity():
    """k clamped to [4, 10]; embedding batches of exactly 10 spaced >= 2 s;
    grounded prompts follow the fixed request template."""
    assert (K_FLOOR, K_CEILING) == (4, 10)
    assert clamp_k(1) == 4 and clamp_k(100) == 10 and clamp_k(7) == 7
    assert RetrievalConfig(k=1).effective_k == 4
    assert RetrievalConfig(k=99).effective_k == 10

    assert DEFAULT_BATCH_SIZE == 10 and DEFAULT_INTER_BATCH_WAIT == 2.0
    clock = ManualClock()
    backend = _RecordingEmbedBackend(32, clock)
    profile = EmbeddingBackendProfile(name="gate-check", dimension=32)
    client = EmbeddingClient(
        backend,
        profile,
        cache=EmbeddingCache(),
        clock=clock,
        gate=RateGate(profile.inter_batch_wait, clock),
    )
    chunks = [
        _make_chunk(f"b{i}", "d0", i, f"token stream item {i} alpha beta")
        for i in range(25)
    ]
    client.embed_corpus(chunks)
    assert backend.batch_sizes == [10, 10, 5]
    assert backend.call_times == [0.0, 2.0, 4.0]
    gaps = [b - a for a, b in zip(backend.call_times, backend.call_times[1:])]
    assert all(gap >= 2.0 for gap in gaps)

    sources = [
        SourceChunk(chunk_id="n#0", title="notes", seq=0, text="alpha beta gamma"),
        SourceChunk(chunk_id="n#1", title="notes", seq=1, text="delta epsilon"),
    ]
    bundle = build_prompt("why is the sky blue", sources, budget_tokens=4096)
    pattern = re.compile(
        r"\AReply to \[(.*)\] using the following background materials: (.*)\Z",
        re.DOTALL,
    )
    match = pattern.match(bundle.user_message)
    assert match is not None
    assert match.group(1) == "why is the sky blue"
    for source in sources:
        assert source.text in match.group(2)
    assert bundle.included_chunks == ("n#0", "n#1")


# --- criterion 3: chunker properties -------------------------------------


def test_chunker_coverage_overlap_determinism():
    """1000 random documents: span union covers the whole document,
    consecutive windows share exactly `overlap` tokens, output is stable."""
    rng = random.Random(424242)
    pieces = _VOCAB + ["don't", "x=1", "...", "4.2", "Uebung", "l-calculus", ",", "!"]
    checked = 0
    for i in range(1000):
        n_words = rng.randint(1, 900)
        parts = []
        for _ in range(n_words):
            parts.append(rng.choice(pieces))
            parts.append(rng.choice([" ", " ", " ", "\n", "  "]))
        text = "".join(parts)
        if rng.random() < 0.1:
            text = "  " + text
        doc = SourceDocument(
            doc_id=f"doc{i}",
            title="t",
            mime_hint="text/plain",
            raw_text=text,
            byte_size=len(text),
            ingested_at=0.0,
        )
        if rng.random() < 0.2:
            max_tokens, overlap = 400, 80
        else:
            max_tokens = rng.randint(2, 64)
            overlap = rng.randint(0, max_tokens - 1)

        chunks = chunk_document(doc, max_tokens, overlap)
        assert chunks == chunk_document(doc, max_tokens, overlap)

        n_tokens = approx_token_count(text)
        if n_tokens == 0:
            assert chunks == []
            checked += 1
            continue
        starts = oracle_window_starts(n_tokens, max_tokens, overlap)
        assert len(chunks) == len(starts)
        assert chunks[0].char_span[0] == 0
        assert chunks[-1].char_span[1] == len(text)
        for prev, cur in zip(chunks, chunks[1:]):
            assert cur.char_span[0] <= prev.char_span[1]
        for chunk in chunks:
            assert chunk.text == text[chunk.char_span[0] : chunk.char_span[1]]
        for j in range(len(chunks) - 1):
            shared = starts[j] + chunks[j].token_count - starts[j + 1]
            assert shared == overlap
        checked += 1
    assert checked == 1000


# --- criterion 4: end-to-end grounding -----------------------------------


def test_end_to_end_grounding(tmp_path):
    """Toy course, 20 scripted queries: every on-topic query cites its
    target document, every off-topic query gets the exact ignorance reply."""
    engine = make_engine(tmp_path / "data")
    try:
        bot_id, token = build_toy_bot(engine)
        passed = 0
        for i, (target, question) in enumerate(ON_TOPIC_QUERIES):
            result = engine.chat(bot_id, token, question, conversation_id=f"on{i}")
            assert not result.fallback, (target, question)
            assert result.sources, (target, question)
            assert result.sources[0].title == target, (target, question)
            assert result.reply.startswith(f"Drawing on {target} #")
            passed += 1
        for i, question in enumerate(OFF_TOPIC_QUERIES):
            result = engine.chat(bot_id, token, question, conversation_id=f"off{i}")
            assert result.fallback, question
            assert result.reply == "I don't know.", question
            assert result.sources == (), question
            passed += 1
        assert passed == len(ON_TOPIC_QUERIES) + len(OFF_TOPIC_QUERIES) == 20
    finally:
        engine.close()


# --- criterion 5: course isolation ---------------------------------------

BOT_B_DOCS = {
    "harmony": (
        "Chord progressions in tonal harmony. The dominant seventh chord "
        "resolves to the tonic triad, voice leading keeps common tones "
        "between chords, and a cadence closes the musical phrase."
    ),
    "sourdough": (
        "Sourdough baking basics. A levain ferments flour and water "
        "overnight, gluten develops during stretch and folds, and oven "
        "spring depends on proofing time and steam in the first minutes."
    ),
}


def test_course_isolation(tmp_path):
    """50 mixed-vocabulary queries to course A never surface course B's
    chunks, and A's access token is rejected by B's endpoints."""
    engine = make_engine(tmp_path / "data")
    try:
        bot_a, token_a = build_toy_bot(engine, "course-a")
        engine.create_bot("Course B", bot_id="course-b")
        for title, text in BOT_B_DOCS.items():
            engine.upload_documents("course-b", f"{title}.txt", text.encode())
        job = engine.start_ingestion("course-b")
        assert wait_for_job(engine, job["job_id"])["state"] == "done"

        a_ids = set(engine._get_bot(bot_a).snapshot_corpus().collection.chunk_ids())
        b_ids = set(engine._get_bot("course-b").snapshot_corpus().collection.chunk_ids())
        assert a_ids and b_ids and not (a_ids & b_ids)

        vocab = (" ".join(TOY_DOCS.values()) + " " + " ".join(BOT_B_DOCS.values())).split()
        rng = random.Random(555)
        grounded = 0
        for i in range(50):
            query = " ".join(rng.choice(vocab) for _ in range(rng.randint(2, 9)))
            result = engine.chat(bot_a, token_a, query, conversation_id=f"iso{i}")
            returned = {src.chunk_id for src in result.sources}
            assert returned <= a_ids, returned
            assert not (returned & b_ids)
            if returned:
                grounded += 1
        assert grounded > 0

        with pytest.raises(Unauthorized):
            engine.chat("course-b", token_a, "hello there")
        app = create_app(engine)
        with TestClient(app, raise_server_exceptions=False) as client:
            resp = client.post(
                "/bots/course-b/chat",
                json={"message": "hello there"},
                headers=bearer(token_a),
            )
            assert resp.status_code == 401
    finally:
        engine.close()


# --- criterion 6: cross-language retrieval modes --------------------------

ENGLISH_PASSAGES = [
    "A sequence converges when its terms approach a single value.",
    "Continuity means small input changes cause small output changes.",
    "The chain rule differentiates a composition of two maps.",
    "An integral accumulates area under a curve over an interval.",
    "A power expansion approximates smooth maps near a point.",
    "Vectors add componentwise inside a linear space.",
]

GERMAN_QUERIES = [
    "Warum konvergiert diese Folge gegen einen Grenzwert?",
    "Was bedeutet Stetigkeit bei kleinen Aenderungen des Eingangswertes?",
]


def test_cross_language_retrieval_modes():
    """Query language disjoint from the corpus vocabulary: lexical mode
    returns nothing while semantic mode still returns k results."""
    dim = 64
    chunks = [
        _make_chunk(f"en{i:02d}", f"doc{i}", 0, text)
        for i, text in enumerate(ENGLISH_PASSAGES)
    ]
    coll = Collection("xlang", "english", dim)
    coll.upsert_entries([(c, mock_embed(c.text, dim)) for c in chunks])
    index = index_chunks(chunks)
    clock = ManualClock()
    client = EmbeddingClient(
        MockEmbeddingBackend(dim),
        EmbeddingBackendProfile(name="xlang", dimension=dim),
        cache=EmbeddingCache(),
        clock=clock,
        gate=RateGate(0.0, clock),
    )
    for query in GERMAN_QUERIES:
        assert not (set(term_tokens(query)) & set(index.postings))
        lex = retrieve(coll, index, query, RetrievalConfig(mode="lexical", k=4), client)
        assert lex.chunks == []
        assert lex.relevant is False
        sem = retrieve(coll, index, query, RetrievalConfig(mode="semantic", k=4), client)
        assert len(sem.chunks) == 4


# --- criterion 7: metering conservation -----------------------------------


def test_metering_conservation():
    """Random usage streams: per-pseudonym costs sum exactly to the total,
    and every stored cost matches recomputation from its token counts."""
    rng = random.Random(99)
    prices = [(5000, 15000), (10000, 30000), (777, 1303), (1, 999983)]
    for _ in range(25):
        ledger = UsageLedger()
        expected = []
        for _ in range(rng.randint(1, 150)):
            pin, pout = rng.choice(prices)
            tin, tout = rng.randint(0, 50000), rng.randint(0, 20000)
            rec = ledger.record(
                bot_id="acct",
                pseudonym=f"u{rng.randint(0, 9)}",
                profile_id="p",
                tokens_in=tin,
                tokens_out=tout,
                price_in_per_1k_micro=pin,
                price_out_per_1k_micro=pout,
            )
            expected.append((rec, tin, tout, pin, pout))
        records = ledger.records("acct")
        assert verify_conservation(records)
        report = ledger.report("acct")
        assert sum(report.per_pseudonym_cost_micro.values()) == report.total_cost_micro
        for rec, tin, tout, pin, pout in expected:
            assert rec.cost_micro == cost_micro(tin, tout, pin, pout)


# --- criterion 8: hot-swap linearizability ---------------------------------


def test_profile_hot_swap_linearizability(tmp_path):
    """100 concurrent chats around a profile switch: every usage record
    names exactly one known profile and every post-acknowledgment request
    uses the new one."""
    engine = make_engine(tmp_path / "data")
    try:
        bot_id, token = build_toy_bot(engine)
        question = ON_TOPIC_QUERIES[0][1]

        def one_chat(i: int) -> str:
            result = engine.chat(bot_id, token, question, conversation_id=f"hs{i}")
            return result.profile_id

        with ThreadPoolExecutor(max_workers=16) as pool:
            first = [pool.submit(one_chat, i) for i in range(50)]
            assert engine.switch_profile(bot_id, "mock-b") == "mock-b"
            second = [pool.submit(one_chat, 50 + i) for i in range(50)]
            first_profiles = [f.result() for f in first]
            second_profiles = [f.result() for f in second]

        assert set(first_profiles) <= {"mock-a", "mock-b"}
        assert second_profiles == ["mock-b"] * 50
        records = engine.ledger.records(bot_id)
        assert len(records) == 100
        assert all(r.profile_id in ("mock-a", "mock-b") for r in records)
        assert verify_conservation(records)
        report = engine.usage_report(bot_id)
        assert sum(report.per_pseudonym_cost_micro.values()) == report.total_cost_micro
    finally:
        engine.close()


# --- criterion 9: ingestion atomicity --------------------------------------


class _SlowEmbedBackend:
    """Mock embedder with a real per-call delay to widen the publish race."""

    def __init__(self, dimension: int, delay: float):
        self._inner = MockEmbeddingBackend(dimension)
        self._delay = delay

    def embed(self, texts):
        time.sleep(self._delay)
        return self._inner.embed(texts)


V2_DOCS = {
    "matrices": TOY_DOCS["matrices"],
    "entropy": TOY_DOCS["entropy"],
    "waves": (
        "Wave propagation carries energy through a medium without moving "
        "the medium itself; wavelength times frequency gives wave speed."
    ),
    "optics": (
        "Refraction bends light at an interface between media; the ratio "
        "of sines of the angles equals the ratio of wave speeds."
    ),
    "probability": (
        "A probability distribution assigns likelihoods to outcomes; "
        "independent events multiply and the expectation is linear."
    ),
    "graphs": (
        "A connected graph has a path between every pair of nodes; a tree "
        "is connected with no cycles and one fewer edge than nodes."
    ),
}


def test_ingestion_atomicity(tmp_path):
    """Chats racing a re-ingestion observe the old corpus or the new one
    wholesale, never a mixture, and the version never moves backward."""
    engine = make_engine(
        tmp_path / "data",
        overrides={
            "embedding": {"backend": "mock", "dimension": 64, "batch_size": 1}
        },
        embed_backend=_SlowEmbedBackend(64, 0.03),
    )
    try:
        info = engine.create_bot(
            "Atomic",
            bot_id="atomic",
            retrieval={"min_similarity": TOY_MIN_SIMILARITY},
        )
        token = info["access_token"]
        engine.upload_documents("atomic", "limits.txt", TOY_DOCS["limits"].encode())
        job = engine.start_ingestion("atomic")
        assert wait_for_job(engine, job["job_id"])["state"] == "done"

        v1_titles = {"limits"}
        v2_titles = set(V2_DOCS)
        questions = [
            "What does the limit of a function describe?",
            "How does matrix multiplication compose linear maps?",
        ]

        first = engine.chat("atomic", token, questions[0], conversation_id="pre")
        assert first.corpus_version == 1
        assert {s.title for s in first.sources} <= v1_titles

        replace = True
        for title, text in V2_DOCS.items():
            engine.upload_documents(
                "atomic", f"{title}.txt", text.encode(), replace=replace
            )
            replace = False
        job2 = engine.start_ingestion("atomic")

        observed = []
        i = 0
        while True:
            state = engine.job_status(job2["job_id"])["state"]
            result = engine.chat(
                "atomic", token, questions[i % 2], conversation_id=f"mid{i}"
            )
            observed.append((result.corpus_version, {s.title for s in result.sources}))
            i += 1
            if state in ("done", "failed") or i > 400:
                break
            time.sleep(0.002)
        assert wait_for_job(engine, job2["job_id"])["state"] == "done"

        for version, titles in observed:
            assert version in (1, 2)
            allowed = v1_titles if version == 1 else v2_titles
            assert titles <= allowed, (version, titles)
        versions = [v for v, _ in observed]
        assert versions == sorted(versions)

        last = engine.chat("atomic", token, questions[1], conversation_id="post")
        assert last.corpus_version == 2
        assert {s.title for s in last.sources} <= v2_titles
    finally:
        engine.close()
