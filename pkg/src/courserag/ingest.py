"""Document ingestion: text extraction, tokenization, and overlapping chunking.

Course documents arrive as .txt / .md / .html files (often inside a ZIP).
They are converted to plain text, split into fixed-size token windows with a
configurable overlap, and exported as a line-delimited JSON chunk manifest.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
import time
import zipfile
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyDocument, InvalidChunkParams, UnsupportedFormat

DEFAULT_MAX_CHUNK_TOKENS = 400
DEFAULT_OVERLAP_TOKENS = 80

MIME_PLAIN = "plain"
MIME_MARKDOWN = "markdown"
MIME_HTML = "html"

MIME_BY_SUFFIX = {
    ".txt": MIME_PLAIN,
    ".text": MIME_PLAIN,
    ".md": MIME_MARKDOWN,
    ".markdown": MIME_MARKDOWN,
    ".html": MIME_HTML,
    ".htm": MIME_HTML,
}

# A token is a maximal run of word characters, or a single non-word,
# non-whitespace character (punctuation counts one token per character).
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass
class SourceDocument:
    """A course document after text extraction."""

    doc_id: str
    title: str
    mime_hint: str
    raw_text: str
    byte_size: int
    ingested_at: float


@dataclass
class Chunk:
    """A contiguous, possibly overlapping span of a source document.

    ``char_span`` is a half-open [start, end) offset range into the parent
    document's ``raw_text``; ``text`` is exactly that slice.
    """

    chunk_id: str
    doc_id: str
    seq: int
    text: str
    token_count: int
    char_span: tuple[int, int]


def approx_token_count(text: str) -> int:
    """Deterministic approximate token count.

    Counts maximal runs of word characters plus one token per remaining
    non-whitespace character, so ``"don't stop."`` counts 5. Additive over
    whitespace-joined concatenation.
    """
    return len(_TOKEN_RE.findall(text))


def token_spans(text: str) -> list[tuple[int, int]]:
    """[start, end) character offsets of each token, in order."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def term_tokens(text: str) -> list[str]:
    """Lowercased word tokens with punctuation-only tokens dropped.

    This is the term stream used by the lexical index.
    """
    return [m.group().lower() for m in _WORD_RE.finditer(text)]


class _HTMLTextExtractor(HTMLParser):
    """Strips tags, keeps text, inserts paragraph breaks at block boundaries."""

    _BLOCK_TAGS = {
        "p", "div", "section", "article", "blockquote", "pre", "table",
        "ul", "ol", "h1", "h2", "h3", "h4", "h5", "h6",
    }
    _LINE_TAGS = {"br", "li", "tr"}
    _SKIP_TAGS = {"script", "style"}

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self._parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP_TAGS:
            self._skip_depth += 1
        elif tag in self._LINE_TAGS:
            self._parts.append("\n")

    def handle_endtag(self, tag):
        if tag in self._SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag in self._BLOCK_TAGS:
            self._parts.append("\n\n")
        elif tag in self._LINE_TAGS:
            self._parts.append("\n")

    def handle_data(self, data):
        if not self._skip_depth:
            self._parts.append(data)

    def text(self) -> str:
        return "".join(self._parts)


def _normalize_text(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    # strip trailing spaces per line, then collapse runs of >2 blank lines
    text = re.sub(r"[ \t]+\n", "\n", text)
    text = re.sub(r"\n{4,}", "\n\n\n", text)
    return text.strip()


def extract_text(
    data: bytes,
    mime_hint: str,
    *,
    doc_id: str | None = None,
    title: str = "",
) -> SourceDocument:
    """Convert raw file bytes into a SourceDocument with plain text.

    HTML is tag-stripped with block boundaries becoming paragraph breaks;
    plain and markdown pass through. Line endings are normalized and runs of
    more than two blank lines are collapsed.

    Raises UnsupportedFormat for binary input or unknown mime hints, and
    EmptyDocument when the extracted text is empty or whitespace-only.
    """
    if mime_hint not in (MIME_PLAIN, MIME_MARKDOWN, MIME_HTML):
        raise UnsupportedFormat(f"unknown mime hint: {mime_hint!r}")
    if data.startswith(b"%PDF"):
        raise UnsupportedFormat("PDF input is not supported; convert to text first")
    if b"\x00" in data:
        raise UnsupportedFormat("binary input")
    try:
        decoded = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnsupportedFormat(f"not valid UTF-8: {exc}") from exc

    if mime_hint == MIME_HTML:
        parser = _HTMLTextExtractor()
        parser.feed(decoded)
        parser.close()
        decoded = parser.text()

    raw_text = _normalize_text(decoded)
    if not raw_text:
        raise EmptyDocument("document contains no extractable text")

    return SourceDocument(
        doc_id=doc_id or hashlib.sha256(data).hexdigest()[:16],
        title=title,
        mime_hint=mime_hint,
        raw_text=raw_text,
        byte_size=len(data),
        ingested_at=time.time(),
    )


def chunk_document(
    doc: SourceDocument,
    max_chunk_tokens: int = DEFAULT_MAX_CHUNK_TOKENS,
    overlap_tokens: int = DEFAULT_OVERLAP_TOKENS,
    *,
    chunk_id_prefix: str = "",
) -> list[Chunk]:
    """Split a document into overlapping fixed-size token windows.

    Windows advance by ``max_chunk_tokens - overlap_tokens`` tokens; every
    chunk except the last spans exactly ``max_chunk_tokens`` tokens, and
    consecutive chunks share exactly ``overlap_tokens`` tokens. Boundaries
    fall on token edges so nothing is split mid-token, and the union of all
    char spans covers the whole document including inter-token whitespace.
    """
    if max_chunk_tokens < 1 or overlap_tokens < 0 or overlap_tokens >= max_chunk_tokens:
        raise InvalidChunkParams(
            f"need 0 <= overlap_tokens < max_chunk_tokens, "
            f"got overlap={overlap_tokens} max={max_chunk_tokens}"
        )

    raw = doc.raw_text
    spans = token_spans(raw)
    n = len(spans)
    if n == 0:
        return []

    stride = max_chunk_tokens - overlap_tokens
    windows: list[tuple[int, int]] = []
    start = 0
    while True:
        end = start + max_chunk_tokens
        if end >= n:
            windows.append((start, n))
            break
        windows.append((start, end))
        start += stride

    chunks: list[Chunk] = []
    for seq, (ts, te) in enumerate(windows):
        char_start = 0 if seq == 0 else spans[ts][0]
        if te == n:
            char_end = len(raw)
        else:
            # next window starts at token ts+stride; extend to its first
            # character when overlap is zero so no whitespace gap opens up
            char_end = max(spans[te - 1][1], spans[ts + stride][0])
        text = raw[char_start:char_end]
        chunks.append(
            Chunk(
                chunk_id=f"{chunk_id_prefix}{doc.doc_id}#{seq}",
                doc_id=doc.doc_id,
                seq=seq,
                text=text,
                token_count=te - ts,
                char_span=(char_start, char_end),
            )
        )
    return chunks


# --- chunk manifest (line-delimited JSON) ---

def write_chunk_manifest(chunks: Iterable[Chunk], path: str | Path) -> None:
    """One JSON record per chunk: chunk_id, doc_id, seq, char_start, char_end, token_count, text."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for c in chunks:
            rec = {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "seq": c.seq,
                "char_start": c.char_span[0],
                "char_end": c.char_span[1],
                "token_count": c.token_count,
                "text": c.text,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_chunk_manifest(path: str | Path) -> list[Chunk]:
    chunks = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=rec["chunk_id"],
                    doc_id=rec["doc_id"],
                    seq=rec["seq"],
                    text=rec["text"],
                    token_count=rec["token_count"],
                    char_span=(rec["char_start"], rec["char_end"]),
                )
            )
    return chunks


# --- upload helpers ---

def sniff_mime(filename: str) -> str:
    """Map a filename to a mime hint, raising UnsupportedFormat for unknown suffixes."""
    suffix = Path(filename).suffix.lower()
    try:
        return MIME_BY_SUFFIX[suffix]
    except KeyError:
        raise UnsupportedFormat(f"unsupported file type: {filename!r}") from None


def expand_upload(filename: str, data: bytes) -> list[tuple[str, bytes]]:
    """Expand an upload into (filename, bytes) pairs.

    ZIP archives are unpacked (supported members only, directories and junk
    like __MACOSX skipped); anything else passes through as a single file.
    """
    if filename.lower().endswith(".zip") or data[:4] == b"PK\x03\x04":
        out: list[tuple[str, bytes]] = []
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            for info in zf.infolist():
                if info.is_dir():
                    continue
                name = Path(info.filename).name
                if not name or name.startswith(".") or "__MACOSX" in info.filename:
                    continue
                if Path(name).suffix.lower() in MIME_BY_SUFFIX:
                    out.append((name, zf.read(info)))
        return out
    return [(filename, data)]


def iter_document_files(folder: str | Path) -> Iterator[tuple[str, bytes]]:
    """Yield (filename, bytes) for every supported file under a folder."""
    folder = Path(folder)
    for path in sorted(folder.rglob("*")):
        if path.is_file() and path.suffix.lower() in MIME_BY_SUFFIX:
            yield path.name, path.read_bytes()
