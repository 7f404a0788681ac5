from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpwatch.errors import ParseError
from pumpwatch.ingestion import (
    TradeFormat,
    infer_rush_orders,
    parse_trades,
    serialize_trades,
)
from pumpwatch.trade_model import Side, TradeBatch

from conftest import random_trades


class TestParseTrades:
    def test_single_row(self):
        batch = parse_trades("1536440400123,0.00012,350.0,buy\n")
        assert len(batch) == 1
        rec = batch.record(0)
        assert rec.timestamp == 1536440400123
        assert rec.price == Decimal("0.00012")
        assert rec.quantity == Decimal("350.0")
        assert rec.side is Side.BUY

    def test_empty_file(self):
        assert len(parse_trades("")) == 0

    def test_three_fields_rejected(self):
        with pytest.raises(ParseError) as exc:
            parse_trades("1000,0.1,1\n")
        assert exc.value.row == 1
        assert "4+ fields" in exc.value.reason

    def test_header_is_optional(self):
        text = "timestamp_ms,price,quantity,side\n1000,0.1,1,sell\n"
        assert len(parse_trades(text)) == 1

    def test_case_insensitive_side_and_extra_columns(self):
        batch = parse_trades("1000,0.1,1,BUY,extra,columns\n")
        assert batch.side[0] == 1

    def test_whole_file_rejected_on_late_error(self):
        text = "1000,0.1,1,buy\n2000,0.1,1,bad\n"
        with pytest.raises(ParseError) as exc:
            parse_trades(text)
        assert exc.value.row == 2

    def test_jsonl(self):
        text = '{"t": 1000, "p": "0.5", "q": 2, "s": "sell"}\n'
        batch = parse_trades(text, TradeFormat.JSON_LINES)
        assert batch.record(0).price == Decimal("0.5")
        assert batch.side[0] == 0

    def test_jsonl_round_trip(self, rng):
        batch = random_trades(rng, 100)
        text = serialize_trades(batch, TradeFormat.JSON_LINES)
        again = parse_trades(text, TradeFormat.JSON_LINES)
        assert (again.ts == batch.ts).all()
        assert (again.price_fp == batch.price_fp).all()


def rush_oracle(batch: TradeBatch):
    """Brute-force hash-grouping over (timestamp, side), insertion order."""
    groups: dict = {}
    for i in range(len(batch)):
        key = (int(batch.ts[i]), int(batch.side[i]))
        g = groups.setdefault(key, {"qty": 0, "count": 0, "notional": 0})
        g["qty"] += int(batch.qty_fp[i])
        g["count"] += 1
        g["notional"] += int(batch.price_fp[i]) * int(batch.qty_fp[i])
    out = []
    for (t, s), g in groups.items():
        if g["count"] >= 2:
            out.append((t, s, g["qty"], g["count"],
                        g["notional"] / (g["qty"] * 1e8)))
    return out


class TestInferRushOrders:
    def test_definition_applied_directly(self):
        batch = TradeBatch(
            ts=np.array([100, 100], dtype=np.int64),
            price_fp=np.array([10 * 10**8, 11 * 10**8], dtype=np.int64),
            qty_fp=np.array([1 * 10**8, 2 * 10**8], dtype=np.int64),
            side=np.array([1, 1], dtype=np.int8),
        )
        rush = infer_rush_orders(batch)
        assert len(rush) == 1
        r = rush.record(0)
        assert r.timestamp == 100
        assert r.side is Side.BUY
        assert r.total_quantity == Decimal(3)
        assert r.trade_count == 2
        assert r.vwap == pytest.approx(32 / 3, rel=1e-12)

    def test_different_milliseconds_never_merge(self):
        batch = TradeBatch(
            ts=np.array([100, 101], dtype=np.int64),
            price_fp=np.array([10**8, 10**8], dtype=np.int64),
            qty_fp=np.array([10**8, 10**8], dtype=np.int64),
            side=np.array([1, 1], dtype=np.int8),
        )
        assert len(infer_rush_orders(batch)) == 0

    def test_matches_hash_grouping_oracle(self, rng):
        for _ in range(20):
            n = int(rng.integers(100, 3000))
            batch = random_trades(rng, n, span_ms=int(rng.integers(50, 5000)))
            rush = infer_rush_orders(batch)
            expected = rush_oracle(batch)
            got = [(int(rush.ts[i]), int(rush.side[i]), int(rush.qty_fp[i]),
                    int(rush.count[i]), float(rush.vwap[i])) for i in range(len(rush))]
            assert len(got) == len(expected)
            for g, e in zip(got, expected):
                assert g[:4] == e[:4]
                assert g[4] == pytest.approx(e[4], rel=1e-9)

    def test_order_preserving(self, rng):
        batch = random_trades(rng, 2000, span_ms=500)
        rush = infer_rush_orders(batch)
        assert (np.diff(rush.ts) >= 0).all()

    def test_side_purity_and_volume_conservation(self, rng):
        batch = random_trades(rng, 2000, span_ms=300)
        rush = infer_rush_orders(batch)
        assert int(rush.qty_fp.sum()) <= int(batch.qty_fp.sum())
        # equality iff every trade belongs to a group of size >= 2
        key_counts: dict = {}
        for i in range(len(batch)):
            k = (int(batch.ts[i]), int(batch.side[i]))
            key_counts[k] = key_counts.get(k, 0) + 1
        singleton_qty = sum(int(batch.qty_fp[i]) for i in range(len(batch))
                            if key_counts[(int(batch.ts[i]), int(batch.side[i]))] < 2)
        assert int(rush.qty_fp.sum()) == int(batch.qty_fp.sum()) - singleton_qty

    @given(st.lists(st.tuples(st.integers(1, 50), st.booleans(),
                              st.integers(1, 10**9), st.integers(1, 10**9)),
                    min_size=0, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_conservation_property(self, rows):
        rows.sort(key=lambda r: r[0])
        batch = TradeBatch(
            ts=np.array([r[0] for r in rows], dtype=np.int64),
            price_fp=np.array([r[2] for r in rows], dtype=np.int64),
            qty_fp=np.array([r[3] for r in rows], dtype=np.int64),
            side=np.array([1 if r[1] else 0 for r in rows], dtype=np.int8),
        )
        rush = infer_rush_orders(batch)
        assert int(rush.qty_fp.sum()) <= int(batch.qty_fp.sum())
        if len(rush):
            assert (np.diff(rush.ts) >= 0).all()
            assert (rush.count >= 2).all()
