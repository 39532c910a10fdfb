"""Prompt assembly: template expansion, source tags, and the token budget.

The user message embeds retrieved chunks directly; the system role carries
the course persona. When retrieval found nothing relevant, the builder
switches to a fallback bundle that instructs the model to admit ignorance
rather than improvise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .errors import BudgetTooSmall
from .ingest import approx_token_count

PROMPT_TEMPLATE = "Reply to [{prompt}] using the following background materials: {materials}"
SOURCE_TAG_TEMPLATE = "[source: {title} #{seq}]"
SOURCE_TAG_RE = re.compile(r"\[source: (.+?) #(\d+)\]")
BUDGET_MARGIN = 0.9

FALLBACK_INSTRUCTION = (
    "Answer only from the provided background materials. "
    "When no materials are provided or they do not cover the question, "
    "reply that you do not know."
)

DEFAULT_PERSONA = (
    "You are a course assistant. Answer the student's question using the "
    "background materials supplied with it, and cite nothing beyond them."
)


@dataclass(frozen=True)
class SourceChunk:
    """One retrieved chunk ready for prompt inclusion."""

    chunk_id: str
    title: str
    seq: int
    text: str

    @property
    def tag(self) -> str:
        return SOURCE_TAG_TEMPLATE.format(title=self.title, seq=self.seq)

    @property
    def block(self) -> str:
        return f"{self.tag}\n{self.text}"


@dataclass(frozen=True)
class PromptBundle:
    system_role: str
    user_message: str
    included_chunks: tuple[str, ...]
    total_tokens: int
    fallback_active: bool


def _render(user_prompt: str, materials: str) -> str:
    return PROMPT_TEMPLATE.format(prompt=user_prompt, materials=materials)


def build_prompt(
    user_prompt: str,
    sources: Sequence[SourceChunk],
    *,
    persona: str = DEFAULT_PERSONA,
    budget_tokens: int,
    relevant: bool = True,
    margin: float = BUDGET_MARGIN,
) -> PromptBundle:
    """Assemble the request bundle under ``margin * budget_tokens``.

    Sources must arrive in fused rank order; they are included as an
    order-preserving prefix, stopping before the first chunk that would
    push the bundle over budget (chunks are never truncated mid-text).
    With ``relevant=False`` no chunks are included, ``fallback_active`` is
    set, and the system role gains the admit-ignorance instruction.

    Raises BudgetTooSmall when even the chunk-free bundle exceeds budget.
    """
    if budget_tokens < 1:
        raise BudgetTooSmall("budget_tokens must be >= 1")
    limit = margin * budget_tokens

    if not relevant:
        system_role = f"{persona}\n\n{FALLBACK_INSTRUCTION}"
        user_message = user_prompt
        total = approx_token_count(system_role) + approx_token_count(user_message)
        if total > limit:
            raise BudgetTooSmall(
                f"fallback bundle needs {total} tokens; "
                f"budget allows {limit:.0f}"
            )
        return PromptBundle(
            system_role=system_role,
            user_message=user_message,
            included_chunks=(),
            total_tokens=total,
            fallback_active=True,
        )

    persona_tokens = approx_token_count(persona)
    base_total = persona_tokens + approx_token_count(_render(user_prompt, ""))
    if base_total > limit:
        raise BudgetTooSmall(
            f"prompt and persona alone need {base_total} tokens; "
            f"budget allows {limit:.0f}"
        )

    included: list[SourceChunk] = []
    blocks: list[str] = []
    total = base_total
    for source in sources:
        candidate = blocks + [source.block]
        message = _render(user_prompt, "\n\n".join(candidate))
        candidate_total = persona_tokens + approx_token_count(message)
        if candidate_total > limit:
            break
        blocks.append(source.block)
        included.append(source)
        total = candidate_total

    user_message = _render(user_prompt, "\n\n".join(blocks))
    return PromptBundle(
        system_role=persona,
        user_message=user_message,
        included_chunks=tuple(s.chunk_id for s in included),
        total_tokens=total,
        fallback_active=False,
    )


def extract_source_tags(text: str) -> list[tuple[str, int]]:
    """All (title, seq) source tags present in a rendered message."""
    return [(m.group(1), int(m.group(2))) for m in SOURCE_TAG_RE.finditer(text)]
