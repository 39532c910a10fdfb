"""Record live service responses as fixtures for the frontend test suite.

Run from the repo root: python3 scripts/record_ui_fixtures.py
Rewrites frontend/tests/fixtures/ from an in-process service instance so the
UI tests exercise the exact wire format the service emits.
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from fastapi.testclient import TestClient

from conftest import bearer, build_toy_bot, make_engine
from courserag.garden import MockChatBackend
from courserag.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"

GROUNDED_QUESTION = "What does the limit of a function describe?"
OFF_TOPIC_QUESTION = "Best sourdough bread baking tips for beginners?"


def record_json(path: Path, response) -> dict:
    payload = {
        "status": response.status_code,
        "headers": {
            k.lower(): v
            for k, v in response.headers.items()
            if k.lower() in ("content-type", "retry-after")
        },
        "body": response.json(),
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return payload


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    backend = MockChatBackend()
    with tempfile.TemporaryDirectory() as tmp:
        engine = make_engine(Path(tmp) / "data", chat_backends={"mock-a": backend})
        try:
            bot_id, token = build_toy_bot(engine)
            client = TestClient(create_app(engine), raise_server_exceptions=False)

            plain = client.post(
                f"/bots/{bot_id}/chat",
                json={"message": GROUNDED_QUESTION, "conversation_id": "fix-plain"},
                headers=bearer(token),
            )
            grounded = record_json(FIXTURES / "chat_grounded.json", plain)

            fallback = client.post(
                f"/bots/{bot_id}/chat",
                json={"message": OFF_TOPIC_QUESTION, "conversation_id": "fix-fb"},
                headers=bearer(token),
            )
            record_json(FIXTURES / "chat_fallback.json", fallback)

            streamed = client.post(
                f"/bots/{bot_id}/chat",
                json={
                    "message": GROUNDED_QUESTION,
                    "conversation_id": "fix-stream",
                    "stream": True,
                },
                headers=bearer(token),
            )
            assert streamed.headers["content-type"].startswith("text/event-stream")
            (FIXTURES / "chat_grounded.sse").write_text(streamed.text)

            joined = "".join(
                json.loads(line[len("data: ") :])["text"]
                for block in streamed.text.strip().split("\n\n")
                if not block.startswith("event: ")
                for line in block.split("\n")
                if line.startswith("data: ")
            )
            assert joined == grounded["body"]["reply"], "stream/plain reply drift"

            backend.fail_next(1)
            failed_stream = client.post(
                f"/bots/{bot_id}/chat",
                json={
                    "message": GROUNDED_QUESTION,
                    "conversation_id": "fix-err",
                    "stream": True,
                },
                headers=bearer(token),
            )
            (FIXTURES / "chat_stream_error.sse").write_text(failed_stream.text)

            backend.fail_next(1)
            unavailable = client.post(
                f"/bots/{bot_id}/chat",
                json={"message": GROUNDED_QUESTION, "conversation_id": "fix-503"},
                headers=bearer(token),
            )
            assert unavailable.status_code == 503
            record_json(FIXTURES / "chat_503.json", unavailable)

            denied = client.post(
                f"/bots/{bot_id}/chat",
                json={"message": GROUNDED_QUESTION},
                headers=bearer("not-a-real-token"),
            )
            assert denied.status_code == 401
            record_json(FIXTURES / "chat_401.json", denied)
        finally:
            engine.close()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
