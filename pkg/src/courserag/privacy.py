"""Outbound privacy proxy: PII scrubbing and session-scoped pseudonyms.

Everything leaving for an LLM backend passes through scrub(); user identities
are replaced by random handles that live only in memory for the duration of
a session. The audit trail records counts, never content.
"""

from __future__ import annotations

import logging
import re
import secrets
import string
import threading
import time
from dataclasses import dataclass
from typing import Sequence

from .errors import NoActiveSession

EMAIL_PLACEHOLDER = "[email]"
PHONE_PLACEHOLDER = "[phone]"
ID_PLACEHOLDER = "[id]"

_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
# Seven or more digits, allowing up to three separator chars between digits
# and an optional leading plus or open parenthesis.
_PHONE_RE = re.compile(r"\+?\(?\d(?:[\s\-().]{0,3}\d){6,}\)?")

_HANDLE_ALPHABET = string.ascii_lowercase + string.digits
_HANDLE_LENGTH = 8

_audit_logger = logging.getLogger("courserag.audit")


@dataclass(frozen=True)
class ScrubResult:
    text: str
    redaction_count: int


class Scrubber:
    """Pattern-based redaction of emails, phone numbers, and institution IDs.

    Institution ID patterns run first, since student numbers often look like
    phone numbers and should be labeled [id], not [phone]. Patterns must not
    match the placeholder tokens themselves or idempotence breaks.
    """

    def __init__(self, id_patterns: Sequence[str] = ()):
        self._id_patterns = [re.compile(p) for p in id_patterns]

    def scrub(self, text: str) -> ScrubResult:
        count = 0
        for pattern in self._id_patterns:
            text, n = pattern.subn(ID_PLACEHOLDER, text)
            count += n
        text, n = _EMAIL_RE.subn(EMAIL_PLACEHOLDER, text)
        count += n
        text, n = _PHONE_RE.subn(PHONE_PLACEHOLDER, text)
        count += n
        return ScrubResult(text=text, redaction_count=count)


def scrub(text: str, id_patterns: Sequence[str] = ()) -> ScrubResult:
    return Scrubber(id_patterns).scrub(text)


class PseudonymSession:
    """In-memory injective map user_id -> random 8-char handle.

    Handles are drawn fresh per session and the map is purged on close;
    nothing is ever written to disk.
    """

    def __init__(self, session_id: str | None = None):
        self.session_id = session_id or secrets.token_hex(8)
        self.created_at = time.time()
        self._lock = threading.Lock()
        self._handles: dict[str, str] = {}
        self._taken: set[str] = set()
        self._active = True

    def _new_handle(self) -> str:
        while True:
            handle = "".join(
                secrets.choice(_HANDLE_ALPHABET) for _ in range(_HANDLE_LENGTH)
            )
            if handle not in self._taken:
                return handle

    def pseudonymize(self, user_id: str) -> str:
        with self._lock:
            if not self._active:
                raise NoActiveSession("pseudonym session is closed")
            handle = self._handles.get(user_id)
            if handle is None:
                handle = self._new_handle()
                self._handles[user_id] = handle
                self._taken.add(handle)
            return handle

    @property
    def active(self) -> bool:
        with self._lock:
            return self._active

    def close(self) -> None:
        with self._lock:
            self._active = False
            self._handles.clear()
            self._taken.clear()


def audit_request(pseudonym: str, redaction_count: int) -> None:
    """One audit line per request: who (pseudonym) and how much was redacted."""
    _audit_logger.info(
        "chat request pseudonym=%s redactions=%d", pseudonym, redaction_count
    )
