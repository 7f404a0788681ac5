"""Detection runtimes.

Batch detectors score a finished FeatureFrame; `StreamingDetector` is the
incremental runtime that accepts trades in arbitrary batch splits and
produces the identical alert sequence (replay determinism is a tested
contract). All detectors share the cooldown rule: after an alert at chunk
start T, nothing fires again before T + cooldown.

Boundary conventions, pinned by tests: the single-feature detector fires
on `value > threshold` (strictly); vote-based detectors fire on
`score >= 0.5`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional, TextIO

import numpy as np

from . import kernels
from .classifiers import Model, predict
from .errors import ConfigError
from .features import (
    FEATURE_NAMES,
    FeatureFrame,
    WindowConfig,
    chunk_stream,
    compute_features,
)
from .ingestion import infer_rush_orders
from .trade_model import SCALE, AlertEvent, ChunkSeries, DetectorKind, RushOrderBatch, TradeBatch

DEFAULT_COOLDOWN_S = 1800
CROWD_COOLDOWN_S = 21600
CROWD_CHUNK_S = 600
DEFAULT_RUSH_THRESHOLD = 12.8


def _cooldown_scan(starts: np.ndarray, fire: np.ndarray, scores: np.ndarray,
                   cooldown_ms: int, kind: DetectorKind, pair: str) -> list[AlertEvent]:
    alerts: list[AlertEvent] = []
    cooldown_until = 0
    for i in np.nonzero(fire)[0]:
        t = int(starts[i])
        if t >= cooldown_until:
            alerts.append(AlertEvent(pair=pair, chunk_start=t, detector=kind,
                                     score=float(scores[i])))
            cooldown_until = t + cooldown_ms
    return alerts


def detect_stream(frame: FeatureFrame, model: Model,
                  cooldown_seconds: int = DEFAULT_COOLDOWN_S,
                  kind: Optional[DetectorKind] = None) -> list[AlertEvent]:
    """Run an ensemble model over a feature frame with cooldown.

    Warm-up rows never fire. The model's feature_names choose the columns,
    so crowd models (time features removed) pass through unchanged.
    """
    if kind is None:
        kind = (DetectorKind.RANDOM_FOREST if model.kind == "random_forest"
                else DetectorKind.ADABOOST)
    live = ~frame.warmup
    scores = np.zeros(len(frame))
    if live.any():
        scores[live] = predict(model, frame.select(model.feature_names)[live])
    return _cooldown_scan(frame.starts, live & (scores >= 0.5), scores,
                          cooldown_seconds * 1000, kind, frame.pair)


def detect_threshold(frame: FeatureFrame,
                     threshold: float = DEFAULT_RUSH_THRESHOLD,
                     cooldown_seconds: int = DEFAULT_COOLDOWN_S) -> list[AlertEvent]:
    """Single-feature detector: fire when the rush-order moving-std feature
    strictly exceeds the threshold. Equality does not alert."""
    values = frame.column("std_rush_orders")
    fire = ~frame.warmup & (values > threshold)
    return _cooldown_scan(frame.starts, fire, np.ones(len(frame)),
                          cooldown_seconds * 1000, DetectorKind.THRESHOLD, frame.pair)


def detect_crowd_pump(trades: TradeBatch, model: Model,
                      window_hours: Optional[float] = None,
                      origin: Optional[int] = None,
                      chunk_seconds: int = CROWD_CHUNK_S,
                      cooldown_seconds: int = CROWD_COOLDOWN_S) -> list[AlertEvent]:
    """Crowd-pump mode: same model, coarser inference chunks.

    The model is trained on standard 25 s chunks without the time
    features; inference re-chunks at 10 minutes (collapsing multi-wave
    buying into one spike) and pauses 6 hours after each alert. The
    moving-window length in hours is preserved.
    """
    if window_hours is None:
        window_hours = float(model.meta.get("window_hours", 7.0))
    cfg = WindowConfig(chunk_seconds=chunk_seconds, window_hours=window_hours)
    if origin is None:
        if len(trades) == 0:
            return []
        origin = (int(trades.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
    rush = infer_rush_orders(trades)
    chunks = chunk_stream(trades, rush, cfg, origin)
    frame = compute_features(chunks, cfg)
    return detect_stream(frame, model, cooldown_seconds,
                         kind=DetectorKind.CROWD_PUMP)


# ---------------------------------------------------------------------------
# Kamps adaptive-threshold baseline (1-hour candles)


class KampsLevel(enum.Enum):
    INITIAL = "initial"
    BALANCED = "balanced"
    STRICT = "strict"


@dataclass(frozen=True)
class KampsConfig:
    """Adaptive-threshold parameters for one named configuration.

    An hourly candle is anomalous when volume exceeds volume_multiplier
    times its trailing moving average AND the candle high exceeds
    price_multiplier times the trailing average high. Numeric defaults
    live in baselines/kamps.toml and are deliberately tunable; only the
    three level names and their strictness ordering are fixed.
    """

    level: KampsLevel
    volume_multiplier: float
    price_multiplier: float
    candle_hours: int = 1
    volume_window_hours: int = 12
    price_window_hours: int = 12
    cooldown_seconds: int = 0

    def __post_init__(self):
        if self.volume_multiplier <= 1 or self.price_multiplier <= 1:
            raise ConfigError("Kamps multipliers must be > 1")


KAMPS_DEFAULTS = {
    KampsLevel.INITIAL: KampsConfig(KampsLevel.INITIAL, 3.0, 1.05),
    KampsLevel.BALANCED: KampsConfig(KampsLevel.BALANCED, 4.0, 1.075),
    KampsLevel.STRICT: KampsConfig(KampsLevel.STRICT, 5.0, 1.10),
}


def kamps_config(level: KampsLevel, toml_dict: Optional[dict] = None) -> KampsConfig:
    """Build a config for one level, optionally overridden from a parsed
    kamps.toml mapping like {"initial": {"volume_multiplier": ...}, ...}."""
    base = KAMPS_DEFAULTS[level]
    if not toml_dict:
        return base
    section = toml_dict.get(level.value, {})
    kwargs = {
        "volume_multiplier": section.get("volume_multiplier", base.volume_multiplier),
        "price_multiplier": section.get("price_multiplier", base.price_multiplier),
        "candle_hours": section.get("candle_hours", base.candle_hours),
        "volume_window_hours": section.get("volume_window_hours", base.volume_window_hours),
        "price_window_hours": section.get("price_window_hours", base.price_window_hours),
        "cooldown_seconds": section.get("cooldown_seconds", base.cooldown_seconds),
    }
    return KampsConfig(level=level, **kwargs)


def candles_from_trades(trades: TradeBatch, origin: int,
                        candle_hours: int = 1,
                        end: Optional[int] = None) -> ChunkSeries:
    """Hourly OHLCV candles are just coarse chunks."""
    cfg = WindowConfig(chunk_seconds=candle_hours * 3600, window_hours=candle_hours * 2)
    return chunk_stream(trades, RushOrderBatch.empty(), cfg, origin, end=end)


def detect_kamps(candles: ChunkSeries, cfg: KampsConfig) -> list[AlertEvent]:
    """Adaptive-threshold baseline over gap-free hourly candles.

    Moving averages are trailing and exclude the current candle; candles
    without a full window never fire.
    """
    vol_fp = candles.buy_vol_fp + candles.sell_vol_fp
    vw = max(2, cfg.volume_window_hours // cfg.candle_hours)
    pw = max(2, cfg.price_window_hours // cfg.candle_hours)
    vol_mean, _ = kernels.rolling_stats(vol_fp, vw)
    high_mean, _ = kernels.rolling_stats(candles.high_fp, pw)
    n = len(candles)
    idx = np.arange(n)
    ready = idx >= max(vw, pw)
    vol = vol_fp.astype(np.float64)
    high = candles.high_fp.astype(np.float64)
    fire = ready & (vol > cfg.volume_multiplier * vol_mean) \
        & (high > cfg.price_multiplier * high_mean) & (vol_mean > 0)
    return _cooldown_scan(candles.starts, fire, np.ones(n),
                          cfg.cooldown_seconds * 1000, DetectorKind.KAMPS,
                          candles.pair)


# ---------------------------------------------------------------------------
# Alert stream format: JSON lines, stable field names.


def format_alert(alert: AlertEvent) -> str:
    ms = alert.chunk_start
    stamp = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    iso = stamp.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"
    return json.dumps({
        "time": iso,
        "chunk_start_ms": ms,
        "pair": alert.pair,
        "detector": alert.detector.value,
        "score": alert.score,
    }, sort_keys=True, separators=(",", ":"))


def write_alerts(out: TextIO, alerts: Iterable[AlertEvent]) -> None:
    for a in alerts:
        out.write(format_alert(a) + "\n")


def parse_alerts(text: str) -> list[AlertEvent]:
    alerts = []
    for line in text.split("\n"):
        if not line.strip():
            continue
        d = json.loads(line)
        alerts.append(AlertEvent(pair=d["pair"], chunk_start=int(d["chunk_start_ms"]),
                                 detector=DetectorKind(d["detector"]),
                                 score=float(d["score"])))
    return alerts


# ---------------------------------------------------------------------------
# Incremental runtime


class _ExactRolling:
    """Trailing-window mean/std over exact integer values (see kernels)."""

    __slots__ = ("window", "vals", "s1", "s2", "_head")

    def __init__(self, window: int):
        self.window = window
        self.vals: list[int] = []
        self.s1 = 0
        self.s2 = 0
        self._head = 0

    def stats(self) -> tuple[float, float]:
        w = self.window
        num = w * self.s2 - self.s1 * self.s1
        # float conversions ordered exactly as the batch kernels'
        mean = float(self.s1) / float(w)
        std = math.sqrt(float(num) / (float(w) * float(w))) if num > 0 else 0.0
        return mean, std

    def push(self, v: int) -> None:
        v = int(v)
        self.s1 += v
        self.s2 += v * v
        vals = self.vals
        if len(vals) - self._head >= self.window:
            u = vals[self._head]
            self.s1 -= u
            self.s2 -= u * u
            self._head += 1
            if self._head > 4 * self.window:
                del vals[: self._head]
                self._head = 0
        vals.append(v)


class StreamingDetector:
    """Feed trades in any batch sizes; alerts match the batch pipeline.

    One instance owns one (pair, detector) stream and must be driven by a
    single consumer; input must be time-ordered. Same-millisecond trades
    are held back until a later timestamp arrives so rush-order groups
    never split across batches; the chunk containing the newest trade
    stays open until `finish()`.
    """

    def __init__(self, cfg: WindowConfig,
                 model: Optional[Model] = None,
                 threshold: Optional[float] = None,
                 cooldown_seconds: int = DEFAULT_COOLDOWN_S,
                 origin: Optional[int] = None,
                 pair: str = "",
                 kind: Optional[DetectorKind] = None):
        if (model is None) == (threshold is None):
            raise ValueError("exactly one of model/threshold required")
        if origin is not None and origin % cfg.chunk_ms != 0:
            from .errors import MisalignedOrigin

            raise MisalignedOrigin(f"origin {origin} not on the {cfg.chunk_ms} ms grid")
        self.cfg = cfg
        self.model = model
        self.threshold = threshold
        self.cooldown_ms = cooldown_seconds * 1000
        self.origin = origin
        self.pair = pair
        if kind is None:
            if model is None:
                kind = DetectorKind.THRESHOLD
            else:
                kind = (DetectorKind.RANDOM_FOREST if model.kind == "random_forest"
                        else DetectorKind.ADABOOST)
        self.kind = kind
        self._col_idx = (None if model is None else
                         [FEATURE_NAMES.index(n) for n in model.feature_names])

        w = cfg.window_chunks
        self._rush = _ExactRolling(w)
        self._trades = _ExactRolling(w)
        self._vol = _ExactRolling(w)
        self._close = _ExactRolling(w)
        self._high = _ExactRolling(w)
        self._chunks_seen = 0
        self._cur: Optional[int] = None
        self._partial: Optional[dict] = None
        if origin is not None:
            self._cur = 0
            self._partial = self._blank_partial()
        self._carry_close = -1
        self._carry_hour = -1
        self._carry_minute = -1
        self._cooldown_until = 0
        self._pending: Optional[TradeBatch] = None
        self._saw_trades = False
        self._finished = False

    # -- internals ---------------------------------------------------------

    @staticmethod
    def _blank_partial() -> dict:
        return {"n": 0, "buy": 0, "sell": 0, "rush": 0, "n_rush": 0,
                "open": -1, "high": -1, "low": -1, "close": -1, "first_ts": -1}

    def _feature_row(self, start: int, first_ts: int) -> np.ndarray:
        if first_ts >= 0:
            mod = (first_ts // 60_000) % 1440
            self._carry_hour = int(mod // 60)
            self._carry_minute = int(mod % 60)
        elif self._carry_hour < 0:
            mod = (start // 60_000) % 1440
            self._carry_hour = int(mod // 60)
            self._carry_minute = int(mod % 60)
        rush_m, rush_s = self._rush.stats()
        _, trades_s = self._trades.stats()
        vol_m, vol_s = self._vol.stats()
        close_m, close_s = self._close.stats()
        high_m, _ = self._high.stats()
        h, m = self._carry_hour, self._carry_minute
        return np.array([
            rush_s / SCALE, rush_m / SCALE, trades_s, vol_s / SCALE,
            vol_m / SCALE, close_s / SCALE, close_m / SCALE, high_m / SCALE,
            math.sin(2 * math.pi * h / 24), math.cos(2 * math.pi * h / 24),
            math.sin(2 * math.pi * m / 60), math.cos(2 * math.pi * m / 60),
        ])

    def _finalize_chunk(self, idx: int, p: dict, alerts: list[AlertEvent]) -> None:
        start = self.origin + idx * self.cfg.chunk_ms
        if p["n"] > 0 or p["close"] >= 0:
            close = p["close"]
            self._carry_close = close
        elif self._carry_close >= 0:
            close = self._carry_close
        else:
            close = 0
        high = p["high"] if p["n"] > 0 else close

        ready = self._chunks_seen >= self.cfg.window_chunks
        if ready:
            # Window stats exclude this chunk: compute before pushing.
            if self.threshold is not None:
                _, rush_std = self._rush.stats()
                if rush_std / SCALE > self.threshold and start >= self._cooldown_until:
                    alerts.append(AlertEvent(self.pair, start, self.kind, 1.0))
                    self._cooldown_until = start + self.cooldown_ms
            else:
                row = self._feature_row(start, p["first_ts"])
                score = float(predict(self.model, row[self._col_idx]))
                if score >= 0.5 and start >= self._cooldown_until:
                    alerts.append(AlertEvent(self.pair, start, self.kind, score))
                    self._cooldown_until = start + self.cooldown_ms
        elif self.threshold is None:
            # keep the hour/minute carry in sync through warm-up
            self._feature_row(start, p["first_ts"])

        self._rush.push(p["rush"])
        self._trades.push(p["n"])
        self._vol.push(p["buy"] + p["sell"])
        self._close.push(close)
        self._high.push(high)
        self._chunks_seen += 1

    def _ingest_complete(self, part: TradeBatch, alerts: list[AlertEvent],
                         closing_ts: Optional[int]) -> None:
        """Fold fully-known trades into chunks; finalize every chunk that
        can no longer receive trades (strictly before the one holding
        closing_ts, or everything open when closing_ts is None)."""
        cm = self.cfg.chunk_ms
        if len(part):
            self._saw_trades = True
            if self.origin is None:
                self.origin = (int(part.ts[0]) // cm) * cm
                self._cur = 0
                self._partial = self._blank_partial()
            g = kernels.rush_groups(part.ts, part.side, part.price_fp, part.qty_fp)
            last_idx = (int(part.ts[-1]) - self.origin) // cm
            span = last_idx - self._cur + 1
            seed = self._partial["close"] if self._partial["n"] > 0 else self._carry_close
            (ntr, buy, sell, rush, n_rush, opn, high, low, close,
             first_ts) = kernels.aggregate_chunks(
                part.ts, part.side, part.price_fp, part.qty_fp,
                g[0], g[1], g[2],
                self.origin + self._cur * cm, cm, span, seed)
            p = self._partial
            for j in range(span):
                if ntr[j] > 0:
                    if p["n"] == 0:
                        p["open"] = int(opn[j])
                        p["high"] = int(high[j])
                        p["low"] = int(low[j])
                        p["first_ts"] = int(first_ts[j])
                    else:
                        p["high"] = max(p["high"], int(high[j]))
                        p["low"] = min(p["low"], int(low[j]))
                    p["close"] = int(close[j])
                    p["n"] += int(ntr[j])
                    p["buy"] += int(buy[j])
                    p["sell"] += int(sell[j])
                elif p["n"] == 0 and p["close"] < 0:
                    # kernel carry (or first-trade backfill) for an empty chunk
                    p["close"] = int(close[j])
                p["rush"] += int(rush[j])
                p["n_rush"] += int(n_rush[j])
                if j < span - 1:
                    self._finalize_chunk(self._cur, p, alerts)
                    self._cur += 1
                    p = self._blank_partial()
            self._partial = p

        if closing_ts is None:
            if self._cur is not None and self._saw_trades:
                self._finalize_chunk(self._cur, self._partial, alerts)
                self._cur = None
                self._partial = None
        elif self._cur is not None and self._saw_trades:
            final_upto = (closing_ts - self.origin) // cm
            while self._cur < final_upto:
                self._finalize_chunk(self._cur, self._partial, alerts)
                self._cur += 1
                self._partial = self._blank_partial()

    # -- public API ----------------------------------------------------------

    def process_batch(self, batch: TradeBatch) -> list[AlertEvent]:
        if self._finished:
            raise RuntimeError("detector already finished")
        if len(batch) == 0:
            return []
        merged = batch if self._pending is None or len(self._pending) == 0 \
            else TradeBatch.concat([self._pending, batch])
        if not self.pair:
            self.pair = merged.pair
        last_ts = int(merged.ts[-1])
        cut = int(np.searchsorted(merged.ts, last_ts, side="left"))
        self._pending = merged.slice(cut, len(merged))
        alerts: list[AlertEvent] = []
        self._ingest_complete(merged.slice(0, cut), alerts, closing_ts=last_ts)
        return alerts

    def finish(self) -> list[AlertEvent]:
        if self._finished:
            return []
        self._finished = True
        alerts: list[AlertEvent] = []
        tail = self._pending if self._pending is not None else TradeBatch.empty()
        self._pending = None
        self._ingest_complete(tail, alerts, closing_ts=None)
        return alerts


def run_streaming(trades: TradeBatch, detector: StreamingDetector,
                  batch_size: int = 65536) -> list[AlertEvent]:
    """Drive a StreamingDetector over a full batch in fixed-size slices."""
    alerts: list[AlertEvent] = []
    for lo in range(0, len(trades), batch_size):
        alerts.extend(detector.process_batch(trades.slice(lo, lo + batch_size)))
    alerts.extend(detector.finish())
    return alerts
