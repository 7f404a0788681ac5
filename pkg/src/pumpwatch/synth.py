"""Synthetic trade-stream generator with injectable pump events.

Ground truth by construction: the returned PumpEvent timestamp is the
injection instant, so detector latency and recall are measurable without
any human labeling. Baseline trades come from a seeded exponential point
process with log-normal volumes and a small log-price random walk; a
pump injects clustered same-millisecond multi-fill buy bursts (so rush
order inference reconstructs them), a multiplicative price ramp,
arbitrage-like small sells at rising prices, and a decaying dump.

Crowd mode spreads the bursts over several waves minutes apart: a gradual
rise with small spikes instead of one cliff.

Baseline and pump randomness come from separate child seeds, so a
scenario with no pump volume is byte-identical to its pure baseline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidScenario
from .evaluation import PumpEvent
from .timefmt import parse_time_ms
from .trade_model import TradeBatch, validate_stream


class PumpMode(enum.Enum):
    STANDARD = "standard"
    CROWD = "crowd"


@dataclass(frozen=True)
class PumpScenario:
    """Everything needed to generate one labeled synthetic stream.

    Burst tuples are ranked tiers: burst_delays_s[j] seconds after the
    injection instant, burst_volumes[j] in quote currency, split into
    burst_fills[j] same-millisecond fills. The default two-tier shape
    (19 s / 21 s, 65 / 26 quote units) mirrors the VIP-then-members
    anatomy of observed schemes.
    """

    pair: str = "SYNBTC"
    start_ms: int = 1_609_459_200_000  # 2021-01-01T00:00:00Z
    span_seconds: int = 86_400
    # baseline
    trades_per_minute: float = 30.0
    base_price: float = 0.00012
    volume_mu: float = 4.0  # ln of base-coin quantity
    volume_sigma: float = 1.2
    buy_fraction: float = 0.5
    price_jitter: float = 1e-4
    # pump shape
    injection_time: int = 1_609_459_200_000 + 15 * 3_600_000
    burst_volumes: tuple = (65.0, 26.0)
    burst_delays_s: tuple = (19.0, 21.0)
    burst_fills: tuple = (24, 12)
    price_ramp: float = 1.6
    dump_decay_seconds: int = 600
    # optional insider accumulation before the public signal
    pre_pump_lead_seconds: int = 0
    pre_pump_quote_volume: float = 0.0
    # crowd mode
    mode: PumpMode = PumpMode.STANDARD
    wave_count: int = 6
    wave_spacing_s: tuple = (120.0, 300.0)

    def validate(self) -> "PumpScenario":
        if self.span_seconds <= 0 or self.trades_per_minute <= 0:
            raise InvalidScenario("span and baseline rate must be positive")
        if self.base_price <= 0:
            raise InvalidScenario("base_price must be positive")
        end = self.start_ms + self.span_seconds * 1000
        if not (self.start_ms <= self.injection_time < end):
            raise InvalidScenario("injection_time outside the generated span")
        if not (len(self.burst_volumes) == len(self.burst_delays_s) == len(self.burst_fills)):
            raise InvalidScenario("burst tuples must have equal length")
        if any(v < 0 for v in self.burst_volumes):
            raise InvalidScenario("burst volumes must be >= 0")
        if any(f < 2 for f in self.burst_fills):
            raise InvalidScenario("bursts need >= 2 fills to form a rush order")
        if self.mode is PumpMode.CROWD and self.wave_count < 2:
            raise InvalidScenario("crowd mode needs >= 2 waves")
        return self

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.span_seconds * 1000

    def has_pump(self) -> bool:
        return (sum(self.burst_volumes) > 0 or self.pre_pump_quote_volume > 0)


def _baseline(sc: PumpScenario, rng: np.random.Generator):
    rate_ms = sc.trades_per_minute / 60_000.0
    ts: list[np.ndarray] = []
    total = 0.0
    span = sc.span_seconds * 1000.0
    while True:
        n = max(64, int((span - total) * rate_ms * 1.2) + 32)
        gaps = rng.exponential(1.0 / rate_ms, n)
        arr = total + np.cumsum(gaps)
        ts.append(arr)
        total = float(arr[-1])
        if total >= span:
            break
    offs = np.concatenate(ts)
    offs = offs[offs < span]
    n = len(offs)
    t = sc.start_ms + offs.astype(np.int64)
    steps = rng.normal(0.0, sc.price_jitter, n)
    price = sc.base_price * np.exp(np.cumsum(steps))
    qty = rng.lognormal(sc.volume_mu, sc.volume_sigma, n)
    side = (rng.random(n) < sc.buy_fraction).astype(np.int8)
    return t, price, qty, side


class _TradeSink:
    def __init__(self, start_ms: int, end_ms: int):
        self.start_ms = start_ms
        self.end_ms = end_ms
        self.ts: list[int] = []
        self.price: list[float] = []
        self.qty: list[float] = []
        self.side: list[int] = []

    def add(self, t: int, price: float, qty: float, side: int) -> None:
        if qty <= 0 or price <= 0 or not (self.start_ms <= t < self.end_ms):
            return
        self.ts.append(int(t))
        self.price.append(price)
        self.qty.append(qty)
        self.side.append(side)


def _inject_pump(sc: PumpScenario, rng: np.random.Generator, sink: _TradeSink) -> None:
    if sc.mode is PumpMode.CROWD:
        spacing = rng.uniform(sc.wave_spacing_s[0], sc.wave_spacing_s[1],
                              sc.wave_count - 1)
        wave_times = sc.injection_time + np.concatenate(
            [[0.0], np.cumsum(spacing) * 1000.0]).astype(np.int64)
        scale = 1.0 / sc.wave_count
    else:
        wave_times = np.array([sc.injection_time], dtype=np.int64)
        scale = 1.0

    if sc.pre_pump_quote_volume > 0 and sc.pre_pump_lead_seconds > 0:
        lead_ms = sc.pre_pump_lead_seconds * 1000
        n_pre = max(3, sc.pre_pump_lead_seconds // 8)
        offs = np.sort(rng.uniform(0, lead_ms, n_pre)).astype(np.int64)
        per = sc.pre_pump_quote_volume / n_pre
        for o in offs:
            p = sc.base_price * (1 + 0.02 * rng.random())
            sink.add(sc.injection_time - lead_ms + int(o), p, per / p, 1)

    total_quote = sum(sc.burst_volumes) * scale * len(wave_times)
    if total_quote <= 0:
        return

    peak = sc.base_price * sc.price_ramp
    n_stages = len(wave_times) * max(1, len(sc.burst_volumes))
    stage = 0
    last_t = sc.injection_time
    for w, wt in enumerate(wave_times):
        for j, (qv, delay, fills) in enumerate(
                zip(sc.burst_volumes, sc.burst_delays_s, sc.burst_fills)):
            qv = qv * scale
            if qv <= 0:
                continue
            t = int(wt + delay * 1000)
            last_t = max(last_t, t)
            lo = sc.base_price + (peak - sc.base_price) * (stage / n_stages)
            hi = sc.base_price + (peak - sc.base_price) * ((stage + 1) / n_stages)
            stage += 1
            # one market order sweeping the book: ascending fills, one ms
            frac = rng.dirichlet(np.ones(fills))
            prices = np.linspace(lo, hi, fills)
            for f in range(fills):
                sink.add(t, prices[f], qv * frac[f] / prices[f], 1)
            # arbitrage echo: many small sells at incremental values
            n_arb = int(rng.integers(3, 7))
            for a in range(n_arb):
                at = t + 120 + int(rng.integers(0, 800))
                ap = lo * (1 + 0.002 * (a + 1))
                sink.add(at, ap, qv * 0.01 / ap, 0)

    # the dump: decaying sells back toward the base price
    if sc.dump_decay_seconds > 0:
        n_dump = max(4, sc.dump_decay_seconds // 10)
        offs = np.sort(rng.uniform(0, sc.dump_decay_seconds * 1000, n_dump))
        per = total_quote / n_dump
        for k in range(n_dump):
            frac_done = offs[k] / (sc.dump_decay_seconds * 1000)
            p = sc.base_price + (peak - sc.base_price) * math.exp(-4.0 * frac_done)
            t = last_t + 1000 + int(offs[k])
            if t < sc.end_ms:
                sink.add(t, p, per / p, 0)


def generate(scenario: PumpScenario, seed: int) -> tuple[TradeBatch, PumpEvent]:
    """Deterministically generate (trades, ground-truth event) for a scenario."""
    sc = scenario.validate()
    base_ss, pump_ss = np.random.SeedSequence(seed).spawn(2)
    t, price, qty, side = _baseline(sc, np.random.Generator(np.random.PCG64(base_ss)))

    sink = _TradeSink(sc.start_ms, sc.end_ms)
    if sc.has_pump():
        _inject_pump(sc, np.random.Generator(np.random.PCG64(pump_ss)), sink)
    if sink.ts:
        t = np.concatenate([t, np.array(sink.ts, dtype=np.int64)])
        price = np.concatenate([price, np.array(sink.price)])
        qty = np.concatenate([qty, np.array(sink.qty)])
        side = np.concatenate([side, np.array(sink.side, dtype=np.int8)])
    order = np.argsort(t, kind="stable")

    price_fp = np.maximum(np.rint(price * 1e8).astype(np.int64), 1)
    qty_fp = np.maximum(np.rint(qty * 1e8).astype(np.int64), 1)
    batch = TradeBatch(ts=t[order], price_fp=price_fp[order],
                       qty_fp=qty_fp[order], side=side[order], pair=sc.pair)
    event = PumpEvent(pair=sc.pair, signal_timestamp=sc.injection_time,
                      exchange="synthetic")
    return validate_stream(batch), event


# ---------------------------------------------------------------------------
# Scenario files (TOML)


def scenario_from_dict(d: dict) -> PumpScenario:
    """Build a scenario from a parsed TOML document (see configs/)."""
    base = d.get("baseline", {})
    pump = d.get("pump", {})
    pre = d.get("pre_pump", {})
    crowd = d.get("crowd", {})
    kwargs: dict = {}
    if "pair" in d:
        kwargs["pair"] = d["pair"]
    if "start" in d:
        kwargs["start_ms"] = parse_time_ms(d["start"])
    if "span_seconds" in d:
        kwargs["span_seconds"] = int(d["span_seconds"])
    start_ms = kwargs.get("start_ms", PumpScenario.start_ms)
    if "injection_time" in d:
        kwargs["injection_time"] = parse_time_ms(d["injection_time"])
    elif "injection_offset_seconds" in d:
        kwargs["injection_time"] = start_ms + int(d["injection_offset_seconds"]) * 1000

    for src, name in ((base, "trades_per_minute"), (base, "base_price"),
                      (base, "volume_mu"), (base, "volume_sigma"),
                      (base, "buy_fraction"), (base, "price_jitter")):
        if name in src:
            kwargs[name] = float(src[name])
    if "burst_volumes" in pump:
        kwargs["burst_volumes"] = tuple(float(v) for v in pump["burst_volumes"])
    if "burst_delays_s" in pump:
        kwargs["burst_delays_s"] = tuple(float(v) for v in pump["burst_delays_s"])
    if "burst_fills" in pump:
        kwargs["burst_fills"] = tuple(int(v) for v in pump["burst_fills"])
    if "price_ramp" in pump:
        kwargs["price_ramp"] = float(pump["price_ramp"])
    if "dump_decay_seconds" in pump:
        kwargs["dump_decay_seconds"] = int(pump["dump_decay_seconds"])
    if "lead_seconds" in pre:
        kwargs["pre_pump_lead_seconds"] = int(pre["lead_seconds"])
    if "quote_volume" in pre:
        kwargs["pre_pump_quote_volume"] = float(pre["quote_volume"])
    if crowd.get("enabled"):
        kwargs["mode"] = PumpMode.CROWD
        if "waves" in crowd:
            kwargs["wave_count"] = int(crowd["waves"])
        if "wave_spacing_s" in crowd:
            lo, hi = crowd["wave_spacing_s"]
            kwargs["wave_spacing_s"] = (float(lo), float(hi))
    return PumpScenario(**kwargs).validate()


def load_scenario(path) -> PumpScenario:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return scenario_from_dict(tomllib.load(fh))
