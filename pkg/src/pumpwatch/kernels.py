"""Hot-kernel dispatch: compiled extension when available, numpy fallback
otherwise.

Set PUMPWATCH_FORCE_FALLBACK=1 to ignore the compiled extension (used by
the benchmark and the backend-equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import _pyfallback

try:
    if os.environ.get("PUMPWATCH_FORCE_FALLBACK") == "1":
        _native = None
    else:
        from . import _native  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on build host
    _native = None

HAVE_NATIVE = _native is not None
BACKEND = "native" if HAVE_NATIVE else "python"

# Above this, the 128-bit variance numerator window*S2 - S1^2 could overflow
# (needs (window*max|v|)^2 < 2^127); such inputs reroute to exact big ints.
_I128_SAFE_PRODUCT = int(9.2e18)


def rush_groups(ts, side, price_fp, qty_fp):
    if HAVE_NATIVE:
        return _native.rush_groups(ts, side, price_fp, qty_fp)
    return _pyfallback.rush_groups(ts, side, price_fp, qty_fp)


def aggregate_chunks(ts, side, price_fp, qty_fp, r_ts, r_side, r_qty_fp,
                     origin, chunk_ms, n_chunks, seed_close_fp=-1):
    if HAVE_NATIVE:
        return _native.aggregate_chunks(ts, side, price_fp, qty_fp,
                                        r_ts, r_side, r_qty_fp,
                                        origin, chunk_ms, n_chunks, seed_close_fp)
    return _pyfallback.aggregate_chunks(ts, side, price_fp, qty_fp,
                                        r_ts, r_side, r_qty_fp,
                                        origin, chunk_ms, n_chunks, seed_close_fp)


def rolling_stats(values, window):
    values = np.ascontiguousarray(values, dtype=np.int64)
    if HAVE_NATIVE and len(values):
        peak = int(np.abs(values).max())
        if peak * int(window) <= _I128_SAFE_PRODUCT:
            return _native.rolling_stats(values, window)
    return _pyfallback.rolling_stats(values, window)


def ensemble_score(feat, thr, left, right, leaf, roots, weights, X):
    if HAVE_NATIVE:
        return _native.ensemble_score(feat, thr, left, right, leaf, roots, weights, X)
    return _pyfallback.ensemble_score(feat, thr, left, right, leaf, roots, weights, X)
