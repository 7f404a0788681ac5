#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the four hot kernels on realistic inputs, then the full streaming
pipeline (rush inference -> chunking -> features -> forest scoring), and
prints trades/second for both backends.

Usage: python benchmarks/bench_kernels.py [--trades N]
"""

import argparse
import time

import numpy as np

from pumpwatch import _pyfallback, kernels
from pumpwatch.classifiers import ForestConfig, train_forest
from pumpwatch.detectors import StreamingDetector, run_streaming
from pumpwatch.evaluation import training_rows_from_frame, label_chunks
from pumpwatch.features import WindowConfig, chunk_stream, compute_features
from pumpwatch.ingestion import infer_rush_orders
from pumpwatch.synth import PumpScenario, generate


def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(n):
    rng = np.random.default_rng(7)
    ts = np.sort(rng.integers(1_600_000_000_000, 1_600_086_400_000, n)).astype(np.int64)
    side = rng.integers(0, 2, n).astype(np.int8)
    price = rng.integers(10_000, 20_000, n).astype(np.int64)
    qty = rng.integers(1, 10**12, n).astype(np.int64)

    backends = [("python", _pyfallback)]
    if kernels.HAVE_NATIVE:
        from pumpwatch import _native

        backends.append(("native", _native))

    print(f"\n-- kernel micro-benchmarks ({n:,} trades) --")
    for name, mod in backends:
        t = timeit(lambda: mod.rush_groups(ts, side, price, qty))
        print(f"rush_groups      [{name:>6}]  {n / t / 1e6:8.2f} M trades/s")
    g = _pyfallback.rush_groups(ts, side, price, qty)
    origin = int(ts[0]) // 25000 * 25000
    n_chunks = (int(ts[-1]) - origin) // 25000 + 1
    for name, mod in backends:
        t = timeit(lambda: mod.aggregate_chunks(ts, side, price, qty, g[0], g[1],
                                                g[2], origin, 25000, n_chunks, -1))
        print(f"aggregate_chunks [{name:>6}]  {n / t / 1e6:8.2f} M trades/s")
    vals = rng.integers(0, 10**10, 200_000).astype(np.int64)
    for name, mod in backends:
        t = timeit(lambda: mod.rolling_stats(vals, 1008))
        print(f"rolling_stats    [{name:>6}]  {len(vals) / t / 1e6:8.2f} M chunks/s")


def bench_pipeline(n_target):
    # a busy synthetic day, scaled to roughly n_target trades
    tpm = max(60, int(n_target / 1440))
    sc = PumpScenario(span_seconds=86_400, trades_per_minute=tpm,
                      injection_time=PumpScenario.start_ms + 50_000_000)
    trades, event = generate(sc, seed=3)
    cfg = WindowConfig(chunk_seconds=5, window_hours=35 / 60)

    rush = infer_rush_orders(trades)
    origin = sc.start_ms
    chunks = chunk_stream(trades, rush, cfg, origin)
    frame = compute_features(chunks, cfg)
    labels = label_chunks(frame, [event.signal_timestamp], origin)
    X, y = training_rows_from_frame(frame, labels, cfg.window_chunks)
    model = train_forest(X, y, ForestConfig(n_trees=200, max_depth=5), seed=0)

    print(f"\n-- end-to-end streaming ({len(trades):,} trades, 5 s chunks, "
          f"35 min window, backend={kernels.BACKEND}) --")
    det = StreamingDetector(cfg, model=model, origin=origin)
    t0 = time.perf_counter()
    alerts = run_streaming(trades, det)
    dt = time.perf_counter() - t0
    print(f"ingest->features->predict: {len(trades) / dt:,.0f} trades/s "
          f"({len(alerts)} alerts)")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--trades", type=int, default=1_000_000)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.trades)
    bench_pipeline(args.trades)
