"""Shared fixtures: offline engine factory, HTTP client, and the toy course.

The toy course is three short single-topic documents; its query suite and
similarity threshold are frozen from a measured calibration run of the mock
embedder (on-topic best cosine >= 0.41, off-topic <= 0.34 on these texts),
so 0.375 separates the two populations with margin on both sides.
"""

from __future__ import annotations

import time

import pytest
from fastapi.testclient import TestClient

from courserag.config import config_from_dict
from courserag.embeddings import ManualClock
from courserag.engine import CourseBotEngine
from courserag.service import create_app

ADMIN_TOKEN = "test-admin-token"
TOY_MIN_SIMILARITY = 0.375
MOCK_DIMENSION = 256

TOY_DOCS = {
    "limits": (
        "Limits and continuity of functions. The limit of a function f(x) as x "
        "approaches a point describes the value the function gets arbitrarily "
        "close to. A function is continuous at a point when the limit equals "
        "the function value there. One-sided limits approach from the left or "
        "right, and the squeeze theorem pins a limit between two bounding "
        "functions. Infinite limits diverge, while limits at infinity describe "
        "horizontal asymptotes of the function graph."
    ),
    "matrices": (
        "Matrix operations in linear algebra. Matrix addition combines entries "
        "elementwise, and matrix multiplication composes linear maps by taking "
        "dot products of rows with columns. The identity matrix leaves vectors "
        "unchanged, the transpose swaps rows with columns, and the inverse of "
        "a square matrix undoes its action when the determinant is nonzero. "
        "Gaussian elimination reduces a matrix to row echelon form to solve "
        "linear systems."
    ),
    "entropy": (
        "Entropy and the second law of thermodynamics. Entropy measures the "
        "disorder of a thermodynamic system, counting the microstates behind "
        "a macrostate. The second law states that the total entropy of an "
        "isolated system never decreases, so heat flows spontaneously from "
        "hot bodies to cold ones. Reversible processes keep entropy constant, "
        "while irreversible processes generate entropy and dissipate free "
        "energy."
    ),
}

ON_TOPIC_QUERIES = [
    ("limits", "What does the limit of a function describe?"),
    ("limits", "When is a function continuous at a point?"),
    ("limits", "Explain one-sided limits and the squeeze theorem."),
    ("limits", "What are limits at infinity and horizontal asymptotes?"),
    ("limits", "How do infinite limits diverge?"),
    ("matrices", "How does matrix multiplication compose linear maps?"),
    ("matrices", "What does the identity matrix do to vectors?"),
    ("matrices", "When does a square matrix have an inverse?"),
    ("matrices", "How does Gaussian elimination reduce a matrix?"),
    ("matrices", "What is the transpose of a matrix?"),
    ("entropy", "What does entropy measure in a thermodynamic system?"),
    ("entropy", "State the second law of thermodynamics."),
    ("entropy", "Why does heat flow from hot bodies to cold ones?"),
    ("entropy", "Do reversible processes keep entropy constant?"),
]

OFF_TOPIC_QUERIES = [
    "Best sourdough bread baking tips for beginners?",
    "Who won the football world cup?",
    "Plan my weekend hiking trip itinerary.",
    "Zebra xylophone quartz jukebox?",
    "Recette de tarte aux pommes grand-mere",
    "Wie repariere ich mein Fahrrad am schnellsten?",
]


def base_config_dict(data_dir) -> dict:
    return {
        "data_dir": str(data_dir),
        "admin_token": ADMIN_TOKEN,
        "embedding": {"backend": "mock", "dimension": MOCK_DIMENSION},
        "models": [
            {
                "profile_id": "mock-a",
                "display_name": "Mock A",
                "endpoint": "mock://",
                "context_budget_tokens": 8192,
                "price_in_per_1k": "0.005",
                "price_out_per_1k": "0.015",
            },
            {
                "profile_id": "mock-b",
                "display_name": "Mock B",
                "endpoint": "mock://",
                "context_budget_tokens": 8192,
                "price_in_per_1k": "0.010",
                "price_out_per_1k": "0.030",
            },
        ],
        "default_model": "mock-a",
        "scrub": {
            "id_patterns": [
                {"name": "student-number", "pattern": r"\b\d{2}-\d{3}-\d{3}\b"}
            ]
        },
    }


def make_engine(data_dir, overrides: dict | None = None, **engine_kwargs) -> CourseBotEngine:
    raw = base_config_dict(data_dir)
    if overrides:
        raw.update(overrides)
    config = config_from_dict(raw)
    engine_kwargs.setdefault("clock", ManualClock())
    return CourseBotEngine(config, **engine_kwargs)


def wait_for_job(engine: CourseBotEngine, job_id: str, timeout: float = 30.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        status = engine.job_status(job_id)
        if status["state"] in ("done", "failed"):
            return status
        time.sleep(0.01)
    raise TimeoutError(f"job {job_id} did not finish within {timeout}s")


def build_toy_bot(engine: CourseBotEngine, bot_id: str = "toy") -> tuple[str, str]:
    """Create the 3-document toy bot; returns (bot_id, access_token)."""
    info = engine.create_bot(
        "Toy Course",
        bot_id=bot_id,
        retrieval={"min_similarity": TOY_MIN_SIMILARITY},
    )
    for title, text in TOY_DOCS.items():
        engine.upload_documents(bot_id, f"{title}.txt", text.encode("utf-8"))
    job = engine.start_ingestion(bot_id)
    status = wait_for_job(engine, job["job_id"])
    assert status["state"] == "done", status
    return bot_id, info["access_token"]


@pytest.fixture
def engine(tmp_path):
    eng = make_engine(tmp_path / "data")
    yield eng
    eng.close()


@pytest.fixture
def toy_bot(engine):
    bot_id, token = build_toy_bot(engine)
    return engine, bot_id, token


@pytest.fixture
def client(engine):
    app = create_app(engine)
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


def admin_headers() -> dict:
    return {"Authorization": f"Bearer {ADMIN_TOKEN}"}


def bearer(token: str) -> dict:
    return {"Authorization": f"Bearer {token}"}
