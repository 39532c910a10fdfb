"""Integer money arithmetic, usage records, and the conservation invariant."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from courserag.metering import (
    MICRO_PER_DOLLAR,
    UsageLedger,
    UsageRecord,
    cost_micro,
    dollars_to_micro,
    micro_to_dollars,
    verify_conservation,
)


def _record(
    pseudonym="u1", tokens_in=1000, tokens_out=500, bot_id="bot-a",
    profile_id="mock-a", ts=1000.0,
):
    return UsageRecord(
        timestamp=ts,
        bot_id=bot_id,
        pseudonym=pseudonym,
        profile_id=profile_id,
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        cost_micro=cost_micro(tokens_in, tokens_out, 5000, 15000),
    )


class TestMoney:
    def test_dollars_to_micro(self):
        assert dollars_to_micro("0.005") == 5000
        assert dollars_to_micro("0.015") == 15000
        assert dollars_to_micro("7.50") == 7_500_000
        assert dollars_to_micro(0.0375) == 37500

    def test_micro_to_dollars(self):
        assert micro_to_dollars(37500) == 0.0375
        assert micro_to_dollars(MICRO_PER_DOLLAR) == 1.0

    def test_cost_single_request(self):
        assert cost_micro(1000, 500, 5000, 15000) == 12500

    def test_cost_rounds_down(self):
        assert cost_micro(1, 0, 5000, 15000) == 5
        assert cost_micro(333, 0, 5000, 15000) == 1665
        assert cost_micro(1, 0, 999, 0) == 0

    def test_zero_tokens_zero_cost(self):
        assert cost_micro(0, 0, 5000, 15000) == 0


class TestFrozenSpecExample:
    def test_three_requests_total(self):
        records = [_record(ts=float(i)) for i in range(3)]
        total = sum(r.cost_micro for r in records)
        assert total == 37500
        assert total == dollars_to_micro("0.0375")


class TestUsageLedger:
    def test_empty_report_all_zeros(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        report = ledger.report("bot-a")
        assert report.request_count == 0
        assert report.tokens_in == 0
        assert report.tokens_out == 0
        assert report.total_cost_micro == 0
        assert report.cost_per_active_user_micro == 0
        assert report.per_pseudonym_cost_micro == {}

    def test_report_aggregates(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        for i in range(3):
            ledger.append(_record(pseudonym=f"u{i % 2}", ts=float(i)))
        report = ledger.report("bot-a")
        assert report.request_count == 3
        assert report.tokens_in == 3000
        assert report.tokens_out == 1500
        assert report.total_cost_micro == 37500
        assert report.per_pseudonym_cost_micro == {"u0": 25000, "u1": 12500}
        assert report.cost_per_active_user_micro == 37500 // 2

    def test_conservation_exact(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        for i in range(7):
            ledger.append(_record(pseudonym=f"u{i % 3}", tokens_in=997 + i, ts=float(i)))
        report = ledger.report("bot-a")
        assert sum(report.per_pseudonym_cost_micro.values()) == report.total_cost_micro

    def test_equal_usage_equal_cost(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        ledger.append(_record(pseudonym="a", ts=1.0))
        ledger.append(_record(pseudonym="b", ts=2.0))
        report = ledger.report("bot-a")
        costs = report.per_pseudonym_cost_micro
        assert costs["a"] == costs["b"]
        assert costs["a"] + costs["b"] == report.total_cost_micro

    def test_filtered_by_bot(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        ledger.append(_record(bot_id="bot-a", ts=1.0))
        ledger.append(_record(bot_id="bot-b", ts=2.0))
        assert ledger.report("bot-a").request_count == 1
        assert ledger.report("bot-b").request_count == 1

    def test_time_window(self, tmp_path):
        ledger = UsageLedger(tmp_path / "usage.jsonl")
        for ts in (10.0, 20.0, 30.0):
            ledger.append(_record(ts=ts))
        assert len(ledger.records("bot-a", since=15.0)) == 2
        assert len(ledger.records("bot-a", since=15.0, until=25.0)) == 1
        assert ledger.report("bot-a", since=15.0, until=25.0).request_count == 1

    def test_jsonl_mirror_and_reload(self, tmp_path):
        path = tmp_path / "usage.jsonl"
        ledger = UsageLedger(path)
        for i in range(4):
            ledger.append(_record(pseudonym=f"u{i}", ts=float(i)))
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4
        parsed = json.loads(lines[0])
        assert set(parsed) == {
            "timestamp", "bot_id", "pseudonym", "profile_id",
            "tokens_in", "tokens_out", "cost_micro",
        }
        reloaded = UsageLedger(path)
        assert reloaded.report("bot-a").request_count == 4
        assert reloaded.records("bot-a") == ledger.records("bot-a")

    def test_in_memory_only_mode(self):
        ledger = UsageLedger()
        ledger.append(_record())
        assert ledger.report("bot-a").request_count == 1

    def test_verify_conservation_helper(self):
        records = [_record(pseudonym=f"u{i}", ts=float(i)) for i in range(5)]
        assert verify_conservation(records)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=5),
            st.integers(min_value=0, max_value=200_000),
            st.integers(min_value=0, max_value=200_000),
        ),
        max_size=30,
    )
)
def test_conservation_fuzz(rows):
    records = [
        _record(pseudonym=f"u{who}", tokens_in=ti, tokens_out=to, ts=float(i))
        for i, (who, ti, to) in enumerate(rows)
    ]
    total = sum(r.cost_micro for r in records)
    by_user: dict[str, int] = {}
    for r in records:
        by_user[r.pseudonym] = by_user.get(r.pseudonym, 0) + r.cost_micro
    assert sum(by_user.values()) == total
    assert verify_conservation(records)
