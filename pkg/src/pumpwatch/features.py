"""Chunking and moving-window feature computation.

A trade stream is split into chunks of `chunk_seconds`; for each chunk,
statistics are computed over the trailing window of the previous
`window_chunks` chunks — strictly causal, the current chunk is excluded,
so a burst cannot suppress its own anomaly score. The first
`window_chunks` chunks of a series are warm-up: emitted but flagged, and
excluded from training and detection.

Window statistics treat empty chunks as zero counts/volumes with
carried-forward prices; standard deviation is the population form
(divide by n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from . import kernels
from .errors import MisalignedOrigin, ParseError
from .trade_model import SCALE, ChunkSeries, FeatureVector, RushOrderBatch, TradeBatch

FEATURE_NAMES = (
    "std_rush_orders",
    "avg_rush_orders",
    "std_trades",
    "std_volumes",
    "avg_volumes",
    "std_price",
    "avg_price",
    "avg_price_max",
    "hour_sin",
    "hour_cos",
    "minute_sin",
    "minute_cos",
)

TIME_FEATURE_NAMES = ("hour_sin", "hour_cos", "minute_sin", "minute_cos")

# Feature set for the crowd-pump model: everything except the time encodings.
CROWD_FEATURE_NAMES = tuple(n for n in FEATURE_NAMES if n not in TIME_FEATURE_NAMES)


@dataclass(frozen=True)
class WindowConfig:
    """Chunk size s (seconds) and moving-window length w (hours).

    The paper-grade settings: best F1 at s=25, w=7; best speed at s=5,
    w=35/60.
    """

    chunk_seconds: int = 25
    window_hours: float = 7.0

    def __post_init__(self):
        if self.chunk_seconds <= 0:
            raise ValueError("chunk_seconds must be positive")
        if self.window_chunks < 2:
            raise ValueError("window must span at least 2 chunks")

    @property
    def window_chunks(self) -> int:
        return int(self.window_hours * 3600 // self.chunk_seconds)

    @property
    def chunk_ms(self) -> int:
        return self.chunk_seconds * 1000


def chunk_stream(trades: TradeBatch, rush: RushOrderBatch, cfg: WindowConfig,
                 origin: int, end: Optional[int] = None) -> ChunkSeries:
    """Bucket a time-ordered stream into gap-free tiled chunks.

    Chunks are half-open intervals [start, start + s*1000); the series runs
    from origin through the chunk containing the last trade (or through
    `end` when given). origin must sit on the chunk grid.
    """
    if origin % cfg.chunk_ms != 0:
        raise MisalignedOrigin(f"origin {origin} not aligned to {cfg.chunk_ms} ms grid")
    last = end - 1 if end is not None else (int(trades.ts[-1]) if len(trades) else None)
    if last is None:
        n_chunks = 0
    else:
        n_chunks = (last - origin) // cfg.chunk_ms + 1
    if n_chunks < 0:
        raise ValueError("end precedes origin")

    (ntr, buy_fp, sell_fp, rush_fp, n_rush,
     open_fp, high_fp, low_fp, close_fp, first_ts) = kernels.aggregate_chunks(
        trades.ts, trades.side, trades.price_fp, trades.qty_fp,
        rush.ts, rush.side, rush.qty_fp,
        origin, cfg.chunk_ms, n_chunks, -1,
    )
    hour, minute = _wallclock_columns(first_ts, origin, cfg.chunk_ms)
    return ChunkSeries(
        origin=origin, duration_s=cfg.chunk_seconds, pair=trades.pair,
        n_trades=ntr, buy_vol_fp=buy_fp, sell_vol_fp=sell_fp,
        rush_vol_fp=rush_fp, n_rush=n_rush,
        open_fp=open_fp, high_fp=high_fp, low_fp=low_fp, close_fp=close_fp,
        hour=hour, minute=minute,
    )


def _wallclock_columns(first_ts: np.ndarray, origin: int, chunk_ms: int):
    """UTC hour/minute of each chunk's first trade, carried forward over
    empty chunks; chunks before any trade use their own start time."""
    n = len(first_ts)
    filled = first_ts >= 0
    last = np.where(filled, np.arange(n), -1)
    np.maximum.accumulate(last, out=last)
    starts = origin + np.arange(n, dtype=np.int64) * chunk_ms
    eff = np.where(last >= 0, first_ts[np.maximum(last, 0)], starts)
    minutes_of_day = (eff // 60_000) % 1440
    hour = (minutes_of_day // 60).astype(np.int8)
    minute = (minutes_of_day % 60).astype(np.int8)
    return hour, minute


@dataclass(frozen=True)
class FeatureFrame:
    """Per-chunk feature rows, one row per chunk of the source series.

    X columns follow FEATURE_NAMES. Rows with warmup=True precede a full
    trailing window and must not reach training or detection.
    """

    starts: np.ndarray  # int64 ms
    warmup: np.ndarray  # bool
    X: np.ndarray  # float64 (n, 12)
    pair: str
    chunk_seconds: int

    def __len__(self) -> int:
        return len(self.starts)

    def vector(self, i: int) -> FeatureVector:
        return FeatureVector(*(float(v) for v in self.X[i]))

    def column(self, name: str) -> np.ndarray:
        return self.X[:, FEATURE_NAMES.index(name)]

    def select(self, names: Iterable[str]) -> np.ndarray:
        idx = [FEATURE_NAMES.index(n) for n in names]
        return self.X[:, idx]


def compute_features(chunks: ChunkSeries, cfg: WindowConfig) -> FeatureFrame:
    """Compute the 12 features for every chunk of a tiled series.

    Moving mean/std (population) over the trailing `window_chunks` chunks,
    current chunk excluded, of: buy-side rush-order volume, trade count,
    total traded volume, close, and high; plus sine/cosine encodings of the
    current chunk's first-trade hour and minute.
    """
    w = cfg.window_chunks
    n = len(chunks)
    X = np.zeros((n, len(FEATURE_NAMES)), dtype=np.float64)
    warmup = np.arange(n) < w
    if n:
        rush_mean, rush_std = kernels.rolling_stats(chunks.rush_vol_fp, w)
        _, trades_std = kernels.rolling_stats(chunks.n_trades, w)
        vol_mean, vol_std = kernels.rolling_stats(chunks.buy_vol_fp + chunks.sell_vol_fp, w)
        price_mean, price_std = kernels.rolling_stats(chunks.close_fp, w)
        high_mean, _ = kernels.rolling_stats(chunks.high_fp, w)

        X[:, 0] = rush_std / SCALE
        X[:, 1] = rush_mean / SCALE
        X[:, 2] = trades_std
        X[:, 3] = vol_std / SCALE
        X[:, 4] = vol_mean / SCALE
        X[:, 5] = price_std / SCALE
        X[:, 6] = price_mean / SCALE
        X[:, 7] = high_mean / SCALE

        hour = chunks.hour.astype(np.float64)
        minute = chunks.minute.astype(np.float64)
        X[:, 8] = np.sin(2 * math.pi * hour / 24)
        X[:, 9] = np.cos(2 * math.pi * hour / 24)
        X[:, 10] = np.sin(2 * math.pi * minute / 60)
        X[:, 11] = np.cos(2 * math.pi * minute / 60)

    return FeatureFrame(starts=chunks.starts, warmup=warmup, X=X,
                        pair=chunks.pair, chunk_seconds=chunks.duration_s)


# ---------------------------------------------------------------------------
# Feature dump format: CSV consumed by the evaluation module and external
# analysis. Columns: chunk_start_ms, warmup, the 12 features, label.


def write_features_csv(out: TextIO, frame: FeatureFrame,
                       labels: Optional[np.ndarray] = None) -> None:
    cols = ["chunk_start_ms", "warmup", *FEATURE_NAMES, "label"]
    out.write(",".join(cols) + "\n")
    for i in range(len(frame)):
        row = [str(int(frame.starts[i])), str(int(frame.warmup[i]))]
        row += [repr(float(v)) for v in frame.X[i]]
        row.append(str(int(labels[i])) if labels is not None else "")
        out.write(",".join(row) + "\n")


def read_features_csv(stream: Union[TextIO, str], pair: str = "",
                      chunk_seconds: int = 0):
    """Returns (FeatureFrame, labels-or-None). Inverse of write_features_csv."""
    text = stream if isinstance(stream, str) else stream.read()
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if not lines:
        return FeatureFrame(np.empty(0, dtype=np.int64), np.empty(0, dtype=bool),
                            np.zeros((0, len(FEATURE_NAMES))), pair, chunk_seconds), None
    header = lines[0].split(",")
    expected = ["chunk_start_ms", "warmup", *FEATURE_NAMES, "label"]
    if header != expected:
        raise ParseError(1, f"bad feature header {header!r}")
    starts, warm, rows, labels = [], [], [], []
    has_labels = True
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(expected):
            raise ParseError(k, f"expected {len(expected)} fields")
        starts.append(int(parts[0]))
        warm.append(bool(int(parts[1])))
        rows.append([float(v) for v in parts[2:-1]])
        if parts[-1] == "":
            has_labels = False
        else:
            labels.append(bool(int(parts[-1])))
    if chunk_seconds == 0 and len(starts) >= 2:
        chunk_seconds = (starts[1] - starts[0]) // 1000
    frame = FeatureFrame(
        starts=np.array(starts, dtype=np.int64),
        warmup=np.array(warm, dtype=bool),
        X=np.array(rows, dtype=np.float64),
        pair=pair,
        chunk_seconds=chunk_seconds,
    )
    return frame, (np.array(labels, dtype=bool) if has_labels else None)
