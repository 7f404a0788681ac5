"""Core domain types shared by every other module.

Prices and quantities are fixed-point decimals: integers counting 1e-8
units (the finest granularity Binance-style spot markets quote). Exact
integer aggregation makes volume-conservation invariants testable;
feature math converts to floating point at the last moment.

Scalar types (`TradeRecord`, `RushOrder`, `Chunk`, ...) are immutable
values, safe to share between threads. Bulk data lives in columnar
containers (`TradeBatch`, `RushOrderBatch`, `ChunkSeries`) backed by
numpy arrays; the scalar types are materialized views into them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import NonMonotonicTimestamp, NonPositiveValue

# Fixed-point scale: 8 decimal places.
SCALE = 10**8
_SCALE_DEC = Decimal(SCALE)


def to_fixed(value) -> int:
    """Convert a decimal-like value to fixed-point 1e-8 units, exactly.

    Accepts Decimal, int, or numeric string. Raises ValueError if the value
    needs more than 8 decimal places (it would not survive a round-trip).
    """
    d = value if isinstance(value, Decimal) else Decimal(str(value))
    scaled = d * _SCALE_DEC
    fp = int(scaled)
    if scaled != fp:
        raise ValueError(f"{value!r} has more than 8 decimal places")
    return fp


def from_fixed(fp: int) -> Decimal:
    """Convert fixed-point units back to an exact Decimal."""
    return Decimal(int(fp)) / _SCALE_DEC


def format_fixed(fp: int) -> str:
    """Shortest plain-decimal string for a fixed-point value.

    No exponent notation, no trailing zeros: 12000 -> "0.00012",
    35000000000 -> "350". Round-trips through `to_fixed` exactly.
    """
    sign = "-" if fp < 0 else ""
    fp = abs(int(fp))
    whole, frac = divmod(fp, SCALE)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:08d}".rstrip("0")


class Side(enum.Enum):
    """Taker side of a fill: the order that crossed the spread."""

    BUY = "buy"
    SELL = "sell"

    @property
    def code(self) -> int:
        return 1 if self is Side.BUY else 0

    @classmethod
    def from_code(cls, code: int) -> "Side":
        return cls.BUY if code else cls.SELL

    @classmethod
    def parse(cls, text: str) -> "Side":
        t = text.strip().lower()
        if t == "buy":
            return cls.BUY
        if t == "sell":
            return cls.SELL
        raise ValueError(f"unknown side {text!r}")


@dataclass(frozen=True, slots=True)
class TradeRecord:
    """One executed trade tick.

    timestamp is integer milliseconds since the Unix epoch; price is in
    quote currency, quantity in base currency, both exact decimals.
    """

    timestamp: int
    price: Decimal
    quantity: Decimal
    side: Side
    pair: str = ""

    def validate(self) -> "TradeRecord":
        if self.timestamp <= 0:
            raise NonPositiveValue(f"timestamp {self.timestamp} must be > 0")
        if self.price <= 0:
            raise NonPositiveValue(f"price {self.price} must be > 0")
        if self.quantity <= 0:
            raise NonPositiveValue(f"quantity {self.quantity} must be > 0")
        return self


@dataclass(frozen=True, slots=True)
class RushOrder:
    """Aggregate of >= 2 same-millisecond, same-side fills.

    total_quantity is the exact sum of constituent quantities; vwap is the
    volume-weighted average fill price (float — not part of the exactness
    contract).
    """

    timestamp: int
    side: Side
    total_quantity: Decimal
    trade_count: int
    vwap: float


@dataclass(frozen=True, slots=True)
class Chunk:
    """Fixed-duration bucket of trades with raw aggregates.

    Empty chunks carry forward the previous close as open=high=low=close
    and keep the previous chunk's hour/minute, so downstream window math
    never sees an undefined price.
    """

    start: int
    duration: int
    n_trades: int
    buy_volume: Decimal
    sell_volume: Decimal
    rush_order_volume: Decimal
    n_rush_orders: int
    open: Decimal
    high: Decimal
    low: Decimal
    close: Decimal
    hour: int
    minute: int


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """The 12 moving-window features for one chunk."""

    std_rush_orders: float
    avg_rush_orders: float
    std_trades: float
    std_volumes: float
    avg_volumes: float
    std_price: float
    avg_price: float
    avg_price_max: float
    hour_sin: float
    hour_cos: float
    minute_sin: float
    minute_cos: float

    def as_tuple(self) -> tuple:
        return (
            self.std_rush_orders,
            self.avg_rush_orders,
            self.std_trades,
            self.std_volumes,
            self.avg_volumes,
            self.std_price,
            self.avg_price,
            self.avg_price_max,
            self.hour_sin,
            self.hour_cos,
            self.minute_sin,
            self.minute_cos,
        )


@dataclass(frozen=True, slots=True)
class LabeledChunk:
    features: FeatureVector
    label: bool
    pair: str
    chunk_start: int


class DetectorKind(enum.Enum):
    THRESHOLD = "threshold"
    RANDOM_FOREST = "random_forest"
    ADABOOST = "adaboost"
    KAMPS = "kamps"
    CROWD_PUMP = "crowd_pump"


@dataclass(frozen=True, slots=True)
class AlertEvent:
    """Detector output for one chunk. score is a vote fraction in [0, 1]
    (1.0 for threshold-style detectors)."""

    pair: str
    chunk_start: int
    detector: DetectorKind
    score: float


# ---------------------------------------------------------------------------
# Columnar containers


def _as_i64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int64)


def _as_i8(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.int8)


@dataclass(frozen=True)
class TradeBatch:
    """Column-oriented trade stream: the hot-path representation.

    side uses Side codes (1 = buy, 0 = sell). Arrays are parallel and
    time-ordered (enforce with `validate_stream`).
    """

    ts: np.ndarray  # int64 ms
    price_fp: np.ndarray  # int64, 1e-8 units
    qty_fp: np.ndarray  # int64, 1e-8 units
    side: np.ndarray  # int8
    pair: str = ""

    def __len__(self) -> int:
        return len(self.ts)

    def record(self, i: int) -> TradeRecord:
        return TradeRecord(
            timestamp=int(self.ts[i]),
            price=from_fixed(int(self.price_fp[i])),
            quantity=from_fixed(int(self.qty_fp[i])),
            side=Side.from_code(int(self.side[i])),
            pair=self.pair,
        )

    def __iter__(self) -> Iterator[TradeRecord]:
        return (self.record(i) for i in range(len(self)))

    def slice(self, start: int, stop: int) -> "TradeBatch":
        return TradeBatch(
            self.ts[start:stop],
            self.price_fp[start:stop],
            self.qty_fp[start:stop],
            self.side[start:stop],
            self.pair,
        )

    def time_window(self, start_ms: int, end_ms: int) -> "TradeBatch":
        """Trades with start_ms <= ts < end_ms (stream must be ordered)."""
        lo = int(np.searchsorted(self.ts, start_ms, side="left"))
        hi = int(np.searchsorted(self.ts, end_ms, side="left"))
        return self.slice(lo, hi)

    @classmethod
    def from_records(cls, records: Iterable[TradeRecord], pair: str = "") -> "TradeBatch":
        recs = list(records)
        if recs and not pair:
            pair = recs[0].pair
        return cls(
            ts=_as_i64([r.timestamp for r in recs]),
            price_fp=_as_i64([to_fixed(r.price) for r in recs]),
            qty_fp=_as_i64([to_fixed(r.quantity) for r in recs]),
            side=_as_i8([r.side.code for r in recs]),
            pair=pair,
        )

    @classmethod
    def empty(cls, pair: str = "") -> "TradeBatch":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.empty(0, dtype=np.int8), pair)

    @classmethod
    def concat(cls, batches: Sequence["TradeBatch"]) -> "TradeBatch":
        if not batches:
            return cls.empty()
        return cls(
            np.concatenate([b.ts for b in batches]),
            np.concatenate([b.price_fp for b in batches]),
            np.concatenate([b.qty_fp for b in batches]),
            np.concatenate([b.side for b in batches]),
            batches[0].pair,
        )


@dataclass(frozen=True)
class RushOrderBatch:
    """Columnar rush orders, time-ordered, side-pure per row."""

    ts: np.ndarray  # int64 ms
    side: np.ndarray  # int8
    qty_fp: np.ndarray  # int64
    count: np.ndarray  # int64
    vwap: np.ndarray  # float64, natural price units

    def __len__(self) -> int:
        return len(self.ts)

    def record(self, i: int) -> RushOrder:
        return RushOrder(
            timestamp=int(self.ts[i]),
            side=Side.from_code(int(self.side[i])),
            total_quantity=from_fixed(int(self.qty_fp[i])),
            trade_count=int(self.count[i]),
            vwap=float(self.vwap[i]),
        )

    def __iter__(self) -> Iterator[RushOrder]:
        return (self.record(i) for i in range(len(self)))

    def buys(self) -> "RushOrderBatch":
        m = self.side == Side.BUY.code
        return RushOrderBatch(self.ts[m], self.side[m], self.qty_fp[m], self.count[m], self.vwap[m])

    @classmethod
    def empty(cls) -> "RushOrderBatch":
        z = np.empty(0, dtype=np.int64)
        return cls(z, np.empty(0, dtype=np.int8), z.copy(), z.copy(), np.empty(0, dtype=np.float64))


@dataclass(frozen=True)
class ChunkSeries:
    """Gap-free tiled chunks: start of chunk i is origin + i*duration_s*1000."""

    origin: int
    duration_s: int
    pair: str
    n_trades: np.ndarray  # int64
    buy_vol_fp: np.ndarray  # int64
    sell_vol_fp: np.ndarray  # int64
    rush_vol_fp: np.ndarray  # int64, buy-side rush-order quantity
    n_rush: np.ndarray  # int64, buy-side rush-order count
    open_fp: np.ndarray  # int64
    high_fp: np.ndarray  # int64
    low_fp: np.ndarray  # int64
    close_fp: np.ndarray  # int64
    hour: np.ndarray  # int8, from first trade in chunk (carried forward)
    minute: np.ndarray  # int8

    def __len__(self) -> int:
        return len(self.n_trades)

    @property
    def starts(self) -> np.ndarray:
        return self.origin + np.arange(len(self), dtype=np.int64) * (self.duration_s * 1000)

    def start(self, i: int) -> int:
        return self.origin + i * self.duration_s * 1000

    def chunk(self, i: int) -> Chunk:
        return Chunk(
            start=self.start(i),
            duration=self.duration_s,
            n_trades=int(self.n_trades[i]),
            buy_volume=from_fixed(int(self.buy_vol_fp[i])),
            sell_volume=from_fixed(int(self.sell_vol_fp[i])),
            rush_order_volume=from_fixed(int(self.rush_vol_fp[i])),
            n_rush_orders=int(self.n_rush[i]),
            open=from_fixed(int(self.open_fp[i])),
            high=from_fixed(int(self.high_fp[i])),
            low=from_fixed(int(self.low_fp[i])),
            close=from_fixed(int(self.close_fp[i])),
            hour=int(self.hour[i]),
            minute=int(self.minute[i]),
        )

    def __iter__(self) -> Iterator[Chunk]:
        return (self.chunk(i) for i in range(len(self)))


def validate_stream(trades: TradeBatch) -> TradeBatch:
    """Check TradeRecord invariants and time ordering over a whole batch.

    Returns the input unchanged when valid. Raises NonPositiveValue or
    NonMonotonicTimestamp (with the offending index) otherwise.
    """
    if len(trades) == 0:
        return trades
    if int(trades.ts[0]) <= 0:
        raise NonPositiveValue("timestamps must be > 0")
    bad = np.nonzero(np.diff(trades.ts) < 0)[0]
    if bad.size:
        raise NonMonotonicTimestamp(int(bad[0]) + 1)
    if int(trades.price_fp.min(initial=1)) <= 0:
        raise NonPositiveValue("prices must be > 0")
    if int(trades.qty_fp.min(initial=1)) <= 0:
        raise NonPositiveValue("quantities must be > 0")
    return trades
