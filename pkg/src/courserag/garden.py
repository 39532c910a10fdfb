"""Interchangeable chat-completion backends behind one interface.

Each bot points at a profile in the garden; the profile can be swapped while
requests are in flight. A request is bound to a profile at admission time,
so in-flight completions finish on the profile they started with and every
request is attributed to exactly one profile.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from typing import Iterator, Mapping, Protocol, Sequence

import httpx

from .errors import (
    AuthFailure,
    BackendUnavailable,
    BotNotFound,
    ContextOverflow,
    UnknownProfile,
)
from .ingest import approx_token_count
from .prompting import PromptBundle, extract_source_tags

MIN_CONTEXT_BUDGET = 1024
DEFAULT_TIMEOUT = 120.0
DEFAULT_MAX_CONCURRENCY = 8
_STREAM_FRAGMENT_CHARS = 16

FALLBACK_REPLY = "I don't know."


@dataclass(frozen=True)
class ModelProfile:
    """One entry in the garden. Prices are micro-dollars per 1000 tokens."""

    profile_id: str
    display_name: str
    endpoint: str
    context_budget_tokens: int
    price_in_per_1k_micro: int = 0
    price_out_per_1k_micro: int = 0
    supports_streaming: bool = True

    def __post_init__(self) -> None:
        if not self.profile_id.strip():
            raise ValueError("profile_id must be non-empty")
        if self.context_budget_tokens < MIN_CONTEXT_BUDGET:
            raise ValueError(
                f"context_budget_tokens must be >= {MIN_CONTEXT_BUDGET}"
            )
        if self.price_in_per_1k_micro < 0 or self.price_out_per_1k_micro < 0:
            raise ValueError("prices must be >= 0")


@dataclass(frozen=True)
class Usage:
    tokens_in: int
    tokens_out: int


@dataclass(frozen=True)
class StreamChunk:
    """One streamed fragment; the final chunk has empty text and carries usage."""

    text: str
    usage: Usage | None = None


Message = Mapping[str, str]


def build_messages(
    bundle: PromptBundle, history: Sequence[Message] = ()
) -> list[dict[str, str]]:
    """Wire-shape messages: system role, prior turns, then the new message."""
    messages = [{"role": "system", "content": bundle.system_role}]
    messages.extend({"role": m["role"], "content": m["content"]} for m in history)
    messages.append({"role": "user", "content": bundle.user_message})
    return messages


def _messages_token_count(messages: Sequence[Message]) -> int:
    return sum(approx_token_count(m["content"]) for m in messages)


class ChatBackend(Protocol):
    def complete(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> tuple[str, Usage]: ...

    def stream(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> Iterator[StreamChunk]: ...


def mock_reply(bundle: PromptBundle) -> str:
    """Deterministic reply: echo the source tags present, or admit ignorance.

    Echoing "<title> #<seq>" for every included chunk lets tests verify
    end-to-end that answers are grounded in the retrieved material.
    """
    if bundle.fallback_active:
        return FALLBACK_REPLY
    labels: list[str] = []
    for title, seq in extract_source_tags(bundle.user_message):
        label = f"{title} #{seq}"
        if label not in labels:
            labels.append(label)
    if not labels:
        return FALLBACK_REPLY
    return "Drawing on " + ", ".join(labels) + "."


class MockChatBackend:
    """Offline backend with deterministic replies and approximate usage."""

    def __init__(self, max_concurrency: int = DEFAULT_MAX_CONCURRENCY):
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._fail_lock = threading.Lock()
        self._fail_times = 0

    def fail_next(self, times: int = 1) -> None:
        """Make the next ``times`` calls raise BackendUnavailable."""
        with self._fail_lock:
            self._fail_times = times

    def _maybe_fail(self, messages: Sequence[Message]) -> None:
        with self._fail_lock:
            if self._fail_times > 0:
                self._fail_times -= 1
                raise BackendUnavailable(
                    "mock backend failure injected",
                    usage=Usage(tokens_in=_messages_token_count(messages), tokens_out=0),
                )

    def complete(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> tuple[str, Usage]:
        with self._slots:
            messages = build_messages(bundle, history)
            self._maybe_fail(messages)
            reply = mock_reply(bundle)
            usage = Usage(
                tokens_in=_messages_token_count(messages),
                tokens_out=approx_token_count(reply),
            )
            return reply, usage

    def stream(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> Iterator[StreamChunk]:
        reply, usage = self.complete(bundle, history)
        for start in range(0, len(reply), _STREAM_FRAGMENT_CHARS):
            yield StreamChunk(text=reply[start : start + _STREAM_FRAGMENT_CHARS])
        yield StreamChunk(text="", usage=usage)


class HTTPChatBackend:
    """Chat-completion backend speaking the common JSON wire shape.

    Credentials come from the environment only; the request carries
    messages = [system, *history, user] and reads usage from the response.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "COURSERAG_CHAT_API_KEY",
        timeout: float = DEFAULT_TIMEOUT,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(
        self, bundle: PromptBundle, history: Sequence[Message], stream: bool
    ) -> dict:
        return {
            "model": self.model,
            "messages": build_messages(bundle, history),
            "stream": stream,
        }

    def _raise_for_status(self, response: httpx.Response, tokens_in: int) -> None:
        if response.status_code in (401, 403):
            raise AuthFailure(f"backend rejected credentials ({response.status_code})")
        if response.status_code == 400 and b"context" in response.content.lower():
            raise ContextOverflow(response.text)
        if response.status_code >= 400:
            raise BackendUnavailable(
                f"backend returned HTTP {response.status_code}",
                usage=Usage(tokens_in=tokens_in, tokens_out=0),
            )

    def complete(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> tuple[str, Usage]:
        with self._slots:
            messages = build_messages(bundle, history)
            tokens_in_estimate = _messages_token_count(messages)
            try:
                response = self._client.post(
                    self.endpoint,
                    json=self._payload(bundle, history, stream=False),
                    headers=self._headers(),
                )
            except httpx.HTTPError as exc:
                raise BackendUnavailable(
                    f"backend request failed: {exc}",
                    usage=Usage(tokens_in=tokens_in_estimate, tokens_out=0),
                ) from exc
            self._raise_for_status(response, tokens_in_estimate)
            body = response.json()
            reply = body["choices"][0]["message"]["content"]
            usage_obj = body.get("usage", {})
            usage = Usage(
                tokens_in=int(usage_obj.get("prompt_tokens", tokens_in_estimate)),
                tokens_out=int(usage_obj.get("completion_tokens", approx_token_count(reply))),
            )
            return reply, usage

    def stream(
        self, bundle: PromptBundle, history: Sequence[Message] = ()
    ) -> Iterator[StreamChunk]:
        with self._slots:
            messages = build_messages(bundle, history)
            tokens_in_estimate = _messages_token_count(messages)
            parts: list[str] = []
            try:
                with self._client.stream(
                    "POST",
                    self.endpoint,
                    json=self._payload(bundle, history, stream=True),
                    headers=self._headers(),
                ) as response:
                    if response.status_code >= 400:
                        response.read()
                        self._raise_for_status(response, tokens_in_estimate)
                    for line in response.iter_lines():
                        if not line.startswith("data:"):
                            continue
                        data = line[len("data:") :].strip()
                        if data == "[DONE]":
                            break
                        delta = (
                            json.loads(data)["choices"][0]
                            .get("delta", {})
                            .get("content", "")
                        )
                        if delta:
                            parts.append(delta)
                            yield StreamChunk(text=delta)
            except httpx.HTTPError as exc:
                raise BackendUnavailable(
                    f"backend stream failed: {exc}",
                    usage=Usage(tokens_in=tokens_in_estimate, tokens_out=0),
                ) from exc
            yield StreamChunk(
                text="",
                usage=Usage(
                    tokens_in=tokens_in_estimate,
                    tokens_out=approx_token_count("".join(parts)),
                ),
            )


def check_budget(bundle: PromptBundle, profile: ModelProfile) -> None:
    """Defensive guard; the prompt builder should prevent this upstream."""
    if bundle.total_tokens > profile.context_budget_tokens:
        raise ContextOverflow(
            f"bundle needs {bundle.total_tokens} tokens; "
            f"profile {profile.profile_id} allows {profile.context_budget_tokens}"
        )


class ModelGarden:
    """Registry of profiles and their backends, plus per-bot active profile.

    switch_profile and admit share one lock, so a request admitted before a
    switch completes on the old profile and one admitted after uses the new
    profile; no request sees a mixture.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._profiles: dict[str, tuple[ModelProfile, ChatBackend]] = {}
        self._active: dict[str, str] = {}

    def register_profile(self, profile: ModelProfile, backend: ChatBackend) -> None:
        with self._lock:
            self._profiles[profile.profile_id] = (profile, backend)

    def get_profile(self, profile_id: str) -> ModelProfile:
        with self._lock:
            if profile_id not in self._profiles:
                raise UnknownProfile(f"no profile {profile_id!r}")
            return self._profiles[profile_id][0]

    def profile_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._profiles)

    def set_active(self, bot_id: str, profile_id: str) -> str:
        """Bind (or rebind) a bot to a profile. Returns the active profile_id."""
        with self._lock:
            if profile_id not in self._profiles:
                raise UnknownProfile(f"no profile {profile_id!r}")
            self._active[bot_id] = profile_id
            return profile_id

    switch_profile = set_active

    def active_profile_id(self, bot_id: str) -> str:
        with self._lock:
            if bot_id not in self._active:
                raise BotNotFound(f"no bot {bot_id!r} in the garden")
            return self._active[bot_id]

    def admit(self, bot_id: str) -> tuple[ModelProfile, ChatBackend]:
        """Admission point: atomically snapshot the bot's current profile."""
        with self._lock:
            if bot_id not in self._active:
                raise BotNotFound(f"no bot {bot_id!r} in the garden")
            profile_id = self._active[bot_id]
            if profile_id not in self._profiles:
                raise UnknownProfile(f"no profile {profile_id!r}")
            return self._profiles[profile_id]

    def drop_bot(self, bot_id: str) -> None:
        with self._lock:
            self._active.pop(bot_id, None)
