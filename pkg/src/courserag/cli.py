"""Command line entry points: serve the API, plus local smoke-test commands.

The ingest/ask/create-bot commands drive the engine directly against the
configured data directory, so they work without a running server.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .config import load_config
from .engine import CourseBotEngine
from .errors import CourseRagError
from .ingest import iter_document_files


def _engine(config_path: str) -> CourseBotEngine:
    return CourseBotEngine(load_config(config_path))


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    engine = CourseBotEngine(config)
    app = create_app(engine)
    uvicorn.run(app, host=config.server.host, port=config.server.port)
    return 0


def _cmd_create_bot(args: argparse.Namespace) -> int:
    engine = _engine(args.config)
    info = engine.create_bot(args.course_label, bot_id=args.bot_id, persona=args.persona)
    print(f"bot_id: {info['bot_id']}")
    print(f"collection_id: {info['collection_id']}")
    print(f"access_token: {info['access_token']}")
    print("Store the access token now; only its hash is kept.")
    return 0


def _cmd_ingest(args: argparse.Namespace) -> int:
    engine = _engine(args.config)
    folder = Path(args.folder)
    if not folder.is_dir():
        print(f"not a folder: {folder}", file=sys.stderr)
        return 2
    files = list(iter_document_files(folder))
    if not files:
        print(f"no supported documents under {folder}", file=sys.stderr)
        return 2
    for name, data in files:
        engine.upload_documents(args.bot, name, data, replace=False)
    print(f"uploaded {len(files)} file(s)")
    job = engine.start_ingestion(args.bot)
    job_id = job["job_id"]
    last_line = ""
    while True:
        status = engine.job_status(job_id)
        line = (
            f"state={status['state']} "
            f"embedded={status['chunks_embedded']}/{status['total_chunks']}"
        )
        if line != last_line:
            print(line)
            last_line = line
        if status["state"] in ("done", "failed"):
            for err in status["file_errors"]:
                print(f"skipped {err['filename']}: {err['error']}", file=sys.stderr)
            if status["state"] == "failed":
                print(f"ingestion failed: {status['error']}", file=sys.stderr)
                return 1
            print(f"published corpus version {status['corpus_version']}")
            return 0
        time.sleep(0.2)


def _cmd_ask(args: argparse.Namespace) -> int:
    engine = _engine(args.config)
    token = args.token or engine.issue_token(args.bot)
    result = engine.chat(args.bot, token, args.question)
    print(result.reply)
    if result.sources:
        print()
        print("sources:")
        for ref in result.sources:
            print(f"  {ref.title} #{ref.seq} ({ref.chunk_id})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="courserag", description="Per-course RAG chatbot service."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--config", required=True)
    p_serve.set_defaults(func=_cmd_serve)

    p_create = sub.add_parser("create-bot", help="provision a bot for a course")
    p_create.add_argument("course_label")
    p_create.add_argument("--config", required=True)
    p_create.add_argument("--bot-id", dest="bot_id", default=None)
    p_create.add_argument("--persona", default=None)
    p_create.set_defaults(func=_cmd_create_bot)

    p_ingest = sub.add_parser("ingest", help="upload a folder and build the corpus")
    p_ingest.add_argument("folder")
    p_ingest.add_argument("--bot", required=True)
    p_ingest.add_argument("--config", required=True)
    p_ingest.set_defaults(func=_cmd_ingest)

    p_ask = sub.add_parser("ask", help="one-shot question for smoke tests")
    p_ask.add_argument("bot")
    p_ask.add_argument("question")
    p_ask.add_argument("--config", required=True)
    p_ask.add_argument("--token", default=None)
    p_ask.set_defaults(func=_cmd_ask)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CourseRagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
