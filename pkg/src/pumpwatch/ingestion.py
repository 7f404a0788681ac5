"""Trade-file parsing, exchange-API fetching, and rush-order inference.

File formats
------------
CSV: optional header, columns ``timestamp_ms,price,quantity,side`` with
side in {buy, sell} (case-insensitive), UTF-8, LF line endings, plain
decimal numbers (no exponents, no thousands separators). Extra columns
are ignored.

JSON lines: one object per line with keys ``t`` (ms), ``p``, ``q``
(numbers or decimal strings), ``s`` ("buy"/"sell").

A malformed row rejects the whole file with its 1-based row number.
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from typing import Callable, IO, Iterable, Optional, Union

import numpy as np
import requests

from . import kernels
from .errors import ConfigError, GapDetected, NetworkError, ParseError, RateLimited
from .trade_model import (
    RushOrderBatch,
    Side,
    TradeBatch,
    format_fixed,
    validate_stream,
)


class TradeFormat(enum.Enum):
    CSV = "csv"
    JSON_LINES = "jsonl"


_CSV_HEADER = "timestamp_ms,price,quantity,side"


def _parse_fixed(text: str, row: int, what: str) -> int:
    """Parse a plain decimal string to 1e-8 fixed point, exactly."""
    t = text.strip()
    neg = t.startswith("-")
    if neg:
        t = t[1:]
    whole, dot, frac = t.partition(".")
    frac = frac.rstrip("0")
    if not whole.isdigit() or (dot and frac and not frac.isdigit()) or (not dot and frac):
        raise ParseError(row, f"bad {what} {text!r}")
    if len(frac) > 8:
        raise ParseError(row, f"{what} {text!r} exceeds 8 decimal places")
    fp = int(whole) * 10**8 + (int(frac) * 10 ** (8 - len(frac)) if frac else 0)
    return -fp if neg else fp


def _parse_side(text: str, row: int) -> int:
    t = text.strip().lower()
    if t == "buy":
        return 1
    if t == "sell":
        return 0
    raise ParseError(row, f"bad side {text!r}")


def parse_trades(stream: Union[IO[bytes], IO[str], bytes, str],
                 fmt: TradeFormat = TradeFormat.CSV,
                 pair: str = "") -> TradeBatch:
    """Parse a whole trade file into a validated, time-ordered batch.

    Rejects the entire input on the first malformed row (ParseError carries
    the 1-based row number). Timestamp/positivity/ordering violations are
    delegated to validate_stream.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        raw = stream.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    ts: list[int] = []
    price: list[int] = []
    qty: list[int] = []
    side: list[int] = []

    lines = text.split("\n")
    start = 0
    if fmt is TradeFormat.CSV and lines and lines[0].strip().lower().startswith("timestamp"):
        start = 1
    for lineno in range(start, len(lines)):
        line = lines[lineno].strip()
        if not line:
            continue
        row = lineno + 1
        if fmt is TradeFormat.CSV:
            parts = line.split(",")
            if len(parts) < 4:
                raise ParseError(row, f"expected 4+ fields, got {len(parts)}")
            t_txt, p_txt, q_txt, s_txt = parts[0], parts[1], parts[2], parts[3]
        else:
            try:
                obj = json.loads(line)
                t_txt = str(obj["t"])
                p_txt = str(obj["p"])
                q_txt = str(obj["q"])
                s_txt = str(obj["s"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(row, f"bad json object: {exc}") from exc
        try:
            ts.append(int(t_txt))
        except ValueError:
            raise ParseError(row, f"bad timestamp {t_txt!r}") from None
        price.append(_parse_fixed(p_txt, row, "price"))
        qty.append(_parse_fixed(q_txt, row, "quantity"))
        side.append(_parse_side(s_txt, row))

    batch = TradeBatch(
        ts=np.array(ts, dtype=np.int64),
        price_fp=np.array(price, dtype=np.int64),
        qty_fp=np.array(qty, dtype=np.int64),
        side=np.array(side, dtype=np.int8),
        pair=pair,
    )
    return validate_stream(batch)


def serialize_trades(batch: TradeBatch, fmt: TradeFormat = TradeFormat.CSV,
                     header: bool = True) -> str:
    """Inverse of parse_trades; CSV round-trips every field losslessly."""
    out: list[str] = []
    if fmt is TradeFormat.CSV:
        if header:
            out.append(_CSV_HEADER)
        for i in range(len(batch)):
            out.append(
                f"{int(batch.ts[i])},{format_fixed(int(batch.price_fp[i]))},"
                f"{format_fixed(int(batch.qty_fp[i]))},"
                f"{'buy' if batch.side[i] else 'sell'}"
            )
    else:
        for i in range(len(batch)):
            out.append(json.dumps({
                "t": int(batch.ts[i]),
                "p": format_fixed(int(batch.price_fp[i])),
                "q": format_fixed(int(batch.qty_fp[i])),
                "s": "buy" if batch.side[i] else "sell",
            }))
    return "\n".join(out) + ("\n" if out else "")


def infer_rush_orders(trades: TradeBatch) -> RushOrderBatch:
    """Reconstruct probable market orders from same-millisecond fills.

    All trades sharing (timestamp, side) merge into one rush order;
    groups of a single fill are dropped — a market order filled by the
    first ask alone is indistinguishable from a limit fill, so we accept
    missing those. vwap is the quantity-weighted mean fill price.
    """
    g_ts, g_side, g_qty, g_count, g_vwap = kernels.rush_groups(
        trades.ts, trades.side, trades.price_fp, trades.qty_fp
    )
    return RushOrderBatch(ts=g_ts, side=g_side, qty_fp=g_qty, count=g_count, vwap=g_vwap)


# ---------------------------------------------------------------------------
# Exchange REST client


@dataclass(frozen=True)
class ExchangeConfig:
    """Connection settings for a Binance-style historical-trades endpoint.

    path_template is formatted with {pair}, {limit}, and either {from_id}
    (cursor pages) or {start_ms} (first page). The endpoint must return a
    JSON array of objects with keys id, t, p, q, s, ordered by id, ids
    contiguous per pair.
    """

    base_url: str
    path_template: str = "/trades?symbol={pair}&limit={limit}&fromId={from_id}"
    first_page_template: str = "/trades?symbol={pair}&limit={limit}&startTime={start_ms}"
    api_key_header: str = "X-API-KEY"
    api_key: str = ""
    page_size: int = 1000
    requests_per_minute: int = 1200
    max_retries: int = 5
    backoff_base_seconds: float = 0.5
    backoff_cap_seconds: float = 30.0

    @classmethod
    def from_dict(cls, d: dict) -> "ExchangeConfig":
        if "base_url" not in d:
            raise ConfigError("exchange config needs base_url")
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class FetchManifest:
    """Provenance record for one fetch: what, when, and a payload checksum."""

    pair: str
    window_start: int
    window_end: int
    source: str
    checksum: str


class ExchangeClient:
    """Paginating, rate-limited client for historical trades.

    Retries transient failures with capped exponential backoff plus jitter;
    a 429 waits for the server-provided Retry-After. sleep/rng are
    injectable so tests run instantly and deterministically.
    """

    def __init__(self, config: ExchangeConfig,
                 session: Optional[requests.Session] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 rng: Optional[random.Random] = None):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random(0)
        self._min_interval = 60.0 / config.requests_per_minute
        self._last_request = float("-inf")

    def _throttle(self) -> None:
        now = time.monotonic()
        wait = self._min_interval - (now - self._last_request)
        if wait > 0:
            self._sleep(wait)
        self._last_request = time.monotonic()

    def _get(self, url: str) -> list:
        headers = {}
        if self.config.api_key:
            headers[self.config.api_key_header] = self.config.api_key
        retries = 0
        while True:
            self._throttle()
            try:
                resp = self.session.get(url, headers=headers, timeout=30)
            except requests.RequestException as exc:
                resp = None
                err = str(exc)
            else:
                if resp.status_code == 429:
                    retries += 1
                    if retries > self.config.max_retries:
                        raise RateLimited(f"still throttled after {retries} attempts")
                    wait = float(resp.headers.get("Retry-After", "1"))
                    self._sleep(wait)
                    continue
                if resp.status_code == 200:
                    return resp.json()
                err = f"HTTP {resp.status_code}"
            retries += 1
            if retries > self.config.max_retries:
                raise NetworkError(f"giving up after {retries} attempts: {err}")
            backoff = min(self.config.backoff_base_seconds * 2 ** (retries - 1),
                          self.config.backoff_cap_seconds)
            self._sleep(backoff * (0.5 + self._rng.random()))

    def fetch_page(self, pair: str, from_id: Optional[int], start_ms: int) -> list:
        cfg = self.config
        if from_id is None:
            path = cfg.first_page_template.format(pair=pair, limit=cfg.page_size,
                                                  start_ms=start_ms)
        else:
            path = cfg.path_template.format(pair=pair, limit=cfg.page_size,
                                            from_id=from_id)
        return self._get(cfg.base_url.rstrip("/") + path)


def fetch_historical(pair: str, start: int, end: int,
                     client: ExchangeClient) -> tuple[TradeBatch, FetchManifest]:
    """Fetch all trades with start <= t < end, paging by trade-id cursor.

    Idempotent: identical inputs yield an identical checksum. Raises
    GapDetected if a page's ids are not contiguous with the cursor.
    """
    if end <= start:
        raise ValueError("end must be > start")
    rows: list[dict] = []
    digest = hashlib.sha256()
    from_id: Optional[int] = None
    done = False
    while not done:
        page = client.fetch_page(pair, from_id, start)
        if not page:
            break
        ids = [int(r["id"]) for r in page]
        if from_id is not None:
            if ids[0] != from_id:
                raise GapDetected(f"page starts at id {ids[0]}, expected {from_id}")
        for k in range(1, len(ids)):
            if ids[k] != ids[k - 1] + 1:
                raise GapDetected(f"hole between ids {ids[k-1]} and {ids[k]}")
        for r in page:
            t = int(r["t"])
            if t >= end:
                done = True
                break
            if t >= start:
                rows.append(r)
                digest.update(
                    f"{r['id']},{t},{r['p']},{r['q']},{r['s']}\n".encode()
                )
        if len(page) < client.config.page_size:
            break
        from_id = ids[-1] + 1

    batch = TradeBatch(
        ts=np.array([int(r["t"]) for r in rows], dtype=np.int64),
        price_fp=np.array([_parse_fixed(str(r["p"]), 0, "price") for r in rows],
                          dtype=np.int64),
        qty_fp=np.array([_parse_fixed(str(r["q"]), 0, "quantity") for r in rows],
                        dtype=np.int64),
        side=np.array([_parse_side(str(r["s"]), 0) for r in rows], dtype=np.int8),
        pair=pair,
    )
    manifest = FetchManifest(pair=pair, window_start=start, window_end=end,
                             source="exchange_api", checksum=digest.hexdigest())
    return validate_stream(batch), manifest
