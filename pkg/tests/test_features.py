import math

import numpy as np
import pytest

from pumpwatch.errors import MisalignedOrigin
from pumpwatch.features import (
    FEATURE_NAMES,
    WindowConfig,
    chunk_stream,
    compute_features,
    read_features_csv,
    write_features_csv,
)
from pumpwatch.ingestion import infer_rush_orders
from pumpwatch.trade_model import SCALE, RushOrderBatch, TradeBatch

from conftest import random_trades

T0 = 1_600_000_000_000  # aligned to every chunk grid used here


def approx_equal(a, b, rel=1e-9, abs_tol=1e-12):
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol)


def chunk_oracle(batch, rush, chunk_ms, origin, n_chunks):
    """Naive per-trade bucketing with explicit carry-forward."""
    agg = [dict(n=0, buy=0, sell=0, rush=0, nr=0, o=None, h=None, lo=None, c=None,
                first=None) for _ in range(n_chunks)]
    for i in range(len(batch)):
        c = (int(batch.ts[i]) - origin) // chunk_ms
        a = agg[c]
        p = int(batch.price_fp[i])
        if a["n"] == 0:
            a["o"] = a["h"] = a["lo"] = p
            a["first"] = int(batch.ts[i])
        a["h"] = max(a["h"], p)
        a["lo"] = min(a["lo"], p)
        a["c"] = p
        a["n"] += 1
        if batch.side[i] == 1:
            a["buy"] += int(batch.qty_fp[i])
        else:
            a["sell"] += int(batch.qty_fp[i])
    for i in range(len(rush.ts)):
        if rush.side[i] != 1:
            continue
        c = (int(rush.ts[i]) - origin) // chunk_ms
        agg[c]["rush"] += int(rush.qty_fp[i])
        agg[c]["nr"] += 1
    carry = None
    for a in agg:
        if a["n"] == 0:
            if carry is None:
                carry = next((b["o"] for b in agg if b["n"] > 0), 0)
            a["o"] = a["h"] = a["lo"] = a["c"] = carry
        else:
            carry = a["c"]
    return agg


class TestChunkStream:
    def test_empty_hour_span_gives_144_chunks(self):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.5)
        chunks = chunk_stream(TradeBatch.empty(), RushOrderBatch.empty(), cfg,
                              T0, end=T0 + 3_600_000)
        assert len(chunks) == 144
        assert (chunks.n_trades == 0).all()
        assert int(chunks.buy_vol_fp.sum()) == 0

    def test_half_open_boundary(self):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.5)
        batch = TradeBatch(
            ts=np.array([T0 + 25_000], dtype=np.int64),
            price_fp=np.array([10**8], dtype=np.int64),
            qty_fp=np.array([10**8], dtype=np.int64),
            side=np.array([1], dtype=np.int8),
        )
        chunks = chunk_stream(batch, RushOrderBatch.empty(), cfg, T0)
        assert len(chunks) == 2
        assert chunks.n_trades[0] == 0
        assert chunks.n_trades[1] == 1

    def test_misaligned_origin_rejected(self):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.5)
        with pytest.raises(MisalignedOrigin):
            chunk_stream(TradeBatch.empty(), RushOrderBatch.empty(), cfg,
                         T0 + 1, end=T0 + 50_000)

    def test_matches_bucketing_oracle(self, rng):
        for _ in range(5):
            n = int(rng.integers(50, 3000))
            batch = random_trades(rng, n, span_ms=int(rng.integers(10_000, 2_000_000)))
            rush = infer_rush_orders(batch)
            cfg = WindowConfig(chunk_seconds=5, window_hours=0.1)
            origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
            chunks = chunk_stream(batch, rush, cfg, origin)
            agg = chunk_oracle(batch, rush, cfg.chunk_ms, origin, len(chunks))
            for i, a in enumerate(agg):
                assert chunks.n_trades[i] == a["n"]
                assert chunks.buy_vol_fp[i] == a["buy"]
                assert chunks.sell_vol_fp[i] == a["sell"]
                assert chunks.rush_vol_fp[i] == a["rush"]
                assert chunks.n_rush[i] == a["nr"]
                assert chunks.open_fp[i] == a["o"]
                assert chunks.high_fp[i] == a["h"]
                assert chunks.low_fp[i] == a["lo"]
                assert chunks.close_fp[i] == a["c"]

    def test_empty_chunks_carry_previous_close(self, rng):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.5)
        batch = TradeBatch(
            ts=np.array([T0 + 1000, T0 + 200_000], dtype=np.int64),
            price_fp=np.array([5 * 10**8, 7 * 10**8], dtype=np.int64),
            qty_fp=np.array([10**8, 10**8], dtype=np.int64),
            side=np.array([1, 0], dtype=np.int8),
        )
        chunks = chunk_stream(batch, RushOrderBatch.empty(), cfg, T0)
        for i in range(1, 8):  # chunks between the two trades are empty
            assert chunks.n_trades[i] == 0
            assert chunks.close_fp[i] == 5 * 10**8
            assert chunks.open_fp[i] == chunks.high_fp[i] == chunks.low_fp[i] == 5 * 10**8


def features_oracle(chunks, cfg):
    """Brute-force window recomputation with reference numpy mean/std."""
    w = cfg.window_chunks
    n = len(chunks)
    X = np.zeros((n, len(FEATURE_NAMES)))
    series = {
        "rush": chunks.rush_vol_fp.astype(np.float64) / SCALE,
        "trades": chunks.n_trades.astype(np.float64),
        "vol": (chunks.buy_vol_fp + chunks.sell_vol_fp).astype(np.float64) / SCALE,
        "close": chunks.close_fp.astype(np.float64) / SCALE,
        "high": chunks.high_fp.astype(np.float64) / SCALE,
    }
    for i in range(w, n):
        win = {k: v[i - w:i] for k, v in series.items()}

        def std(v):
            m = np.mean(v)
            return math.sqrt(np.mean((v - m) ** 2))

        X[i, 0] = std(win["rush"])
        X[i, 1] = np.mean(win["rush"])
        X[i, 2] = std(win["trades"])
        X[i, 3] = std(win["vol"])
        X[i, 4] = np.mean(win["vol"])
        X[i, 5] = std(win["close"])
        X[i, 6] = np.mean(win["close"])
        X[i, 7] = np.mean(win["high"])
    hour = chunks.hour.astype(np.float64)
    minute = chunks.minute.astype(np.float64)
    X[:, 8] = np.sin(2 * math.pi * hour / 24)
    X[:, 9] = np.cos(2 * math.pi * hour / 24)
    X[:, 10] = np.sin(2 * math.pi * minute / 60)
    X[:, 11] = np.cos(2 * math.pi * minute / 60)
    return X


class TestComputeFeatures:
    def test_constant_series_has_zero_std(self):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
        n = 100
        c = 3 * 10**8
        ts = np.array([T0 + i * 25_000 for i in range(n)], dtype=np.int64)
        batch = TradeBatch(ts=ts,
                           price_fp=np.full(n, c, dtype=np.int64),
                           qty_fp=np.full(n, 2 * 10**8, dtype=np.int64),
                           side=np.ones(n, dtype=np.int8))
        chunks = chunk_stream(batch, RushOrderBatch.empty(), cfg, T0)
        frame = compute_features(chunks, cfg)
        live = ~frame.warmup
        for col, want in [("std_trades", 0.0), ("std_volumes", 0.0),
                          ("std_price", 0.0), ("std_rush_orders", 0.0)]:
            assert (frame.column(col)[live] == want).all()
        assert np.allclose(frame.column("avg_price")[live], 3.0)
        assert np.allclose(frame.column("avg_volumes")[live], 2.0)

    def test_midnight_utc_hour_encoding(self):
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
        midnight = (T0 // 86_400_000 + 1) * 86_400_000
        batch = TradeBatch(
            ts=np.array([midnight], dtype=np.int64),
            price_fp=np.array([10**8], dtype=np.int64),
            qty_fp=np.array([10**8], dtype=np.int64),
            side=np.array([1], dtype=np.int8),
        )
        chunks = chunk_stream(batch, RushOrderBatch.empty(), cfg, midnight)
        frame = compute_features(chunks, cfg)
        assert frame.column("hour_sin")[0] == pytest.approx(0.0, abs=1e-12)
        assert frame.column("hour_cos")[0] == pytest.approx(1.0, abs=1e-12)
        assert frame.column("minute_sin")[0] == pytest.approx(0.0, abs=1e-12)

    def test_unit_circle_invariant(self, rng):
        batch = random_trades(rng, 500, span_ms=7_200_000)
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.25)
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        frame = compute_features(
            chunk_stream(batch, infer_rush_orders(batch), cfg, origin), cfg)
        hs, hc = frame.column("hour_sin"), frame.column("hour_cos")
        ms_, mc = frame.column("minute_sin"), frame.column("minute_cos")
        assert np.abs(hs**2 + hc**2 - 1).max() < 1e-9
        assert np.abs(ms_**2 + mc**2 - 1).max() < 1e-9

    def test_matches_brute_force_oracle(self, rng):
        batch = random_trades(rng, 4000, span_ms=2_000 * 25_000)
        rush = infer_rush_orders(batch)
        cfg = WindowConfig(chunk_seconds=25, window_hours=0.5)
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        chunks = chunk_stream(batch, rush, cfg, origin)
        frame = compute_features(chunks, cfg)
        oracle = features_oracle(chunks, cfg)
        live = ~frame.warmup
        for col in range(12):
            got = frame.X[live, col]
            want = oracle[live, col]
            bad = [k for k in range(len(got))
                   if not approx_equal(got[k], want[k])]
            assert not bad, f"feature {FEATURE_NAMES[col]} differs at {bad[:5]}"

    def test_warmup_flags(self, rng):
        batch = random_trades(rng, 200, span_ms=500_000)
        cfg = WindowConfig(chunk_seconds=5, window_hours=0.05)  # W=36
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        frame = compute_features(
            chunk_stream(batch, infer_rush_orders(batch), cfg, origin), cfg)
        assert frame.warmup[:36].all()
        assert not frame.warmup[36:].any()

    def test_causality(self, rng):
        batch = random_trades(rng, 1500, span_ms=1_000_000)
        rush = infer_rush_orders(batch)
        cfg = WindowConfig(chunk_seconds=5, window_hours=0.05)
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        base = compute_features(chunk_stream(batch, rush, cfg, origin), cfg)
        k = len(batch) // 2
        i = (int(batch.ts[k]) - origin) // cfg.chunk_ms
        qty = batch.qty_fp.copy()
        qty[k] *= 1000
        perturbed = TradeBatch(batch.ts, batch.price_fp, qty, batch.side)
        frame2 = compute_features(
            chunk_stream(perturbed, infer_rush_orders(perturbed), cfg, origin), cfg)
        assert np.array_equal(base.X[:i], frame2.X[:i])
        assert not np.array_equal(base.X, frame2.X)

    def test_origin_translation(self, rng):
        batch = random_trades(rng, 800, span_ms=600_000)
        rush = infer_rush_orders(batch)
        cfg = WindowConfig(chunk_seconds=5, window_hours=0.05)
        origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        shift = 7
        f1 = compute_features(chunk_stream(batch, rush, cfg, origin), cfg)
        f2 = compute_features(
            chunk_stream(batch, rush, cfg, origin - shift * cfg.chunk_ms), cfg)
        # same values at shifted indices, wherever both are past warm-up
        w = cfg.window_chunks
        a = f1.X[w:]
        b = f2.X[w + shift:]
        m = min(len(a), len(b))
        assert np.array_equal(a[:m], b[:m])


def test_feature_csv_round_trip(rng):
    batch = random_trades(rng, 300, span_ms=300_000)
    cfg = WindowConfig(chunk_seconds=5, window_hours=0.05)
    origin = (int(batch.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
    frame = compute_features(
        chunk_stream(batch, infer_rush_orders(batch), cfg, origin), cfg)
    labels = np.zeros(len(frame), dtype=bool)
    labels[len(frame) // 2] = True
    import io

    buf = io.StringIO()
    write_features_csv(buf, frame, labels)
    again, labels2 = read_features_csv(buf.getvalue())
    assert np.array_equal(again.starts, frame.starts)
    assert np.array_equal(again.warmup, frame.warmup)
    assert np.array_equal(again.X, frame.X)  # repr round-trips floats exactly
    assert np.array_equal(labels2, labels)
    assert again.chunk_seconds == 5
