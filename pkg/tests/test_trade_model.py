from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pumpwatch.errors import NonMonotonicTimestamp, NonPositiveValue
from pumpwatch.features import WindowConfig, chunk_stream
from pumpwatch.ingestion import infer_rush_orders, parse_trades, serialize_trades
from pumpwatch.trade_model import (
    Side,
    TradeBatch,
    TradeRecord,
    format_fixed,
    from_fixed,
    to_fixed,
    validate_stream,
)

from conftest import random_trades


def make_batch(rows):
    return TradeBatch.from_records(
        [TradeRecord(t, Decimal(p), Decimal(q), Side.parse(s), "X") for t, p, q, s in rows]
    )


class TestFixedPoint:
    def test_round_trip(self):
        for text in ["0.00012", "350", "350.5", "0.00000001", "12345678.87654321"]:
            fp = to_fixed(text)
            assert to_fixed(format_fixed(fp)) == fp
            assert from_fixed(fp) == Decimal(text)

    def test_too_many_places_rejected(self):
        with pytest.raises(ValueError):
            to_fixed("0.000000001")

    def test_format_strips_zeros(self):
        assert format_fixed(to_fixed("350.0")) == "350"
        assert format_fixed(to_fixed("0.00012")) == "0.00012"


class TestValidateStream:
    def test_equal_timestamps_allowed(self):
        batch = make_batch([(1000, "0.1", "1", "buy"), (1000, "0.1", "2", "buy")])
        assert validate_stream(batch) is batch

    def test_decreasing_timestamp_reports_index(self):
        batch = make_batch([(2000, "0.1", "1", "buy"), (1000, "0.1", "1", "buy")])
        with pytest.raises(NonMonotonicTimestamp) as exc:
            validate_stream(batch)
        assert exc.value.index == 1

    def test_zero_price_rejected(self):
        batch = TradeBatch(
            ts=np.array([1000], dtype=np.int64),
            price_fp=np.array([0], dtype=np.int64),
            qty_fp=np.array([10**8], dtype=np.int64),
            side=np.array([1], dtype=np.int8),
        )
        with pytest.raises(NonPositiveValue):
            validate_stream(batch)

    def test_record_validate(self):
        with pytest.raises(NonPositiveValue):
            TradeRecord(0, Decimal(1), Decimal(1), Side.BUY).validate()
        with pytest.raises(NonPositiveValue):
            TradeRecord(1, Decimal(0), Decimal(1), Side.BUY).validate()


class TestCsvRoundTrip:
    def test_lossless_for_all_fields(self, rng):
        batch = random_trades(rng, 500)
        again = parse_trades(serialize_trades(batch), pair=batch.pair)
        assert (again.ts == batch.ts).all()
        assert (again.price_fp == batch.price_fp).all()
        assert (again.qty_fp == batch.qty_fp).all()
        assert (again.side == batch.side).all()

    @given(st.integers(1, 10**14), st.integers(1, 10**14))
    @settings(max_examples=50, deadline=None)
    def test_any_fixed_point_value_survives(self, price_fp, qty_fp):
        batch = TradeBatch(
            ts=np.array([1234], dtype=np.int64),
            price_fp=np.array([price_fp], dtype=np.int64),
            qty_fp=np.array([qty_fp], dtype=np.int64),
            side=np.array([1], dtype=np.int8),
        )
        again = parse_trades(serialize_trades(batch))
        assert again.price_fp[0] == price_fp and again.qty_fp[0] == qty_fp


class TestChunkTiling:
    def test_every_trade_in_exactly_one_chunk(self, rng):
        for _ in range(5):
            n = int(rng.integers(1, 2000))
            batch = random_trades(rng, n)
            cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
            origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
            chunks = chunk_stream(batch, infer_rush_orders(batch), cfg, origin)
            assert int(chunks.n_trades.sum()) == n
            # tiling: consecutive starts differ by exactly the duration
            starts = chunks.starts
            assert (np.diff(starts) == cfg.chunk_ms).all()

    def test_volume_sums_exact(self, rng):
        batch = random_trades(rng, 1000)
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        chunks = chunk_stream(batch, infer_rush_orders(batch), cfg, origin)
        total = int(chunks.buy_vol_fp.sum() + chunks.sell_vol_fp.sum())
        assert total == int(batch.qty_fp.sum())


def test_chunk_materialization_carries_decimals(rng):
    batch = random_trades(rng, 50)
    cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
    origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
    chunks = chunk_stream(batch, infer_rush_orders(batch), cfg, origin)
    c = chunks.chunk(0)
    assert c.start == origin
    assert c.low <= c.open <= c.high
    assert c.low <= c.close <= c.high
    assert 0 <= c.hour < 24 and 0 <= c.minute < 60
