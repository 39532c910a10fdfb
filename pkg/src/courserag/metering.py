"""Usage metering with exact money arithmetic.

Costs are stored as integer micro-dollars so that per-user aggregates sum to
the total without rounding drift. One record is appended per completion
attempt, including failed ones (zero output tokens).
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable

MICRO_PER_DOLLAR = 1_000_000


def dollars_to_micro(amount: str | float | Decimal) -> int:
    """Parse a dollar amount into integer micro-dollars.

    Accepts strings to keep config round-trips exact; floats are tolerated
    for convenience and rounded to the nearest micro-dollar.
    """
    quantized = (Decimal(str(amount)) * MICRO_PER_DOLLAR).quantize(Decimal(1))
    return int(quantized)


def micro_to_dollars(micro: int) -> float:
    return micro / MICRO_PER_DOLLAR


def cost_micro(
    tokens_in: int, tokens_out: int, price_in_per_1k_micro: int, price_out_per_1k_micro: int
) -> int:
    """Integer cost: tokens/1000 at each price, floor division per leg."""
    return (
        tokens_in * price_in_per_1k_micro // 1000
        + tokens_out * price_out_per_1k_micro // 1000
    )


@dataclass(frozen=True)
class UsageRecord:
    timestamp: float
    bot_id: str
    pseudonym: str
    profile_id: str
    tokens_in: int
    tokens_out: int
    cost_micro: int


@dataclass(frozen=True)
class UsageReport:
    bot_id: str
    request_count: int
    tokens_in: int
    tokens_out: int
    total_cost_micro: int
    per_pseudonym_cost_micro: dict[str, int]
    cost_per_active_user_micro: int

    @property
    def total_cost_dollars(self) -> float:
        return micro_to_dollars(self.total_cost_micro)


class UsageLedger:
    """Append-only usage records, in memory and optionally mirrored to JSONL."""

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.Lock()
        self._records: list[UsageRecord] = []
        self._path = Path(path) if path is not None else None
        if self._path is not None and self._path.exists():
            self._load()

    def _load(self) -> None:
        assert self._path is not None
        with self._path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                self._records.append(UsageRecord(**json.loads(line)))

    def record(
        self,
        *,
        bot_id: str,
        pseudonym: str,
        profile_id: str,
        tokens_in: int,
        tokens_out: int,
        price_in_per_1k_micro: int,
        price_out_per_1k_micro: int,
        timestamp: float | None = None,
    ) -> UsageRecord:
        rec = UsageRecord(
            timestamp=time.time() if timestamp is None else timestamp,
            bot_id=bot_id,
            pseudonym=pseudonym,
            profile_id=profile_id,
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            cost_micro=cost_micro(
                tokens_in, tokens_out, price_in_per_1k_micro, price_out_per_1k_micro
            ),
        )
        self.append(rec)
        return rec

    def append(self, rec: UsageRecord) -> None:
        with self._lock:
            self._records.append(rec)
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(rec)) + "\n")
                    fh.flush()

    def records(
        self,
        bot_id: str | None = None,
        since: float | None = None,
        until: float | None = None,
    ) -> list[UsageRecord]:
        with self._lock:
            out = list(self._records)
        if bot_id is not None:
            out = [r for r in out if r.bot_id == bot_id]
        if since is not None:
            out = [r for r in out if r.timestamp >= since]
        if until is not None:
            out = [r for r in out if r.timestamp < until]
        return out

    def report(
        self,
        bot_id: str,
        since: float | None = None,
        until: float | None = None,
    ) -> UsageReport:
        """Aggregate a bot's records over a period.

        cost_per_active_user divides total cost by distinct pseudonyms seen,
        the per-student cost statistic; integer division keeps it in micro
        units (report consumers needing exactness should use per-pseudonym
        sums, which conserve the total by construction).
        """
        records = self.records(bot_id=bot_id, since=since, until=until)
        per_user: dict[str, int] = {}
        tokens_in = 0
        tokens_out = 0
        for rec in records:
            per_user[rec.pseudonym] = per_user.get(rec.pseudonym, 0) + rec.cost_micro
            tokens_in += rec.tokens_in
            tokens_out += rec.tokens_out
        total = sum(per_user.values())
        active_users = len(per_user)
        return UsageReport(
            bot_id=bot_id,
            request_count=len(records),
            tokens_in=tokens_in,
            tokens_out=tokens_out,
            total_cost_micro=total,
            per_pseudonym_cost_micro=per_user,
            cost_per_active_user_micro=total // active_users if active_users else 0,
        )


def verify_conservation(records: Iterable[UsageRecord]) -> bool:
    """True when per-pseudonym sums reproduce the grand total exactly."""
    per_user: dict[str, int] = {}
    total = 0
    for rec in records:
        per_user[rec.pseudonym] = per_user.get(rec.pseudonym, 0) + rec.cost_micro
        total += rec.cost_micro
    return sum(per_user.values()) == total
