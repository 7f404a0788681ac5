import numpy as np
import pytest

from pumpwatch.trade_model import TradeBatch


def random_trades(rng: np.random.Generator, n: int, t0: int = 1_600_000_000_000,
                  span_ms: int = 3_600_000, max_price_fp: int = 10**6,
                  max_qty_fp: int = 10**12, pair: str = "TESTBTC") -> TradeBatch:
    """Uniform random time-ordered trades; dense enough for ms collisions."""
    ts = np.sort(rng.integers(t0, t0 + span_ms, n)).astype(np.int64)
    return TradeBatch(
        ts=ts,
        price_fp=rng.integers(1, max_price_fp, n).astype(np.int64),
        qty_fp=rng.integers(1, max_qty_fp, n).astype(np.int64),
        side=rng.integers(0, 2, n).astype(np.int8),
        pair=pair,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20210128)
