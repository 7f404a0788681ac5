"""Pure-Python/numpy implementations of the hot kernels.

Selected by `pumpwatch.kernels` when the compiled extension is missing (or
forced off). Interfaces and results match `pumpwatch._native`; rolling
moments use arbitrary-precision integer sums, so they are exact for any
input magnitude.
"""

from __future__ import annotations

import math

import numpy as np

SCALE = 10**8


def rush_groups(ts, side, price_fp, qty_fp):
    """Merge all same-millisecond same-side trades; keep groups of >= 2.

    The input is time-ordered, so a (timestamp, side) group is contained
    in one millisecond run but may be interleaved with the opposite side.
    Groups are emitted in order of their first trade. Returns
    (ts, side, qty_fp, count, vwap) arrays; qty sums are exact, vwap is
    float64.
    """
    n = len(ts)
    if n == 0:
        z = np.empty(0, dtype=np.int64)
        return z, np.empty(0, dtype=np.int8), z.copy(), z.copy(), np.empty(0)
    run_id = np.concatenate([[0], np.cumsum(ts[1:] != ts[:-1])])
    order = np.lexsort((np.arange(n), side, run_id))  # stable within group
    starts = np.nonzero(np.concatenate(
        [[True], (run_id[order][1:] != run_id[order][:-1])
         | (side[order][1:] != side[order][:-1])]))[0]
    ends = np.append(starts[1:], n)
    counts = ends - starts
    first_idx = order[starts]

    qty_sums = np.add.reduceat(qty_fp[order], starts)
    notional = (price_fp.astype(np.float64) / SCALE) * (qty_fp.astype(np.float64) / SCALE)
    notional_sums = np.add.reduceat(notional[order], starts)

    keep = counts >= 2
    emit = np.argsort(first_idx[keep], kind="stable")
    g_qty = qty_sums[keep][emit]
    g_vwap = notional_sums[keep][emit] / (g_qty.astype(np.float64) / SCALE)
    return (
        ts[first_idx[keep][emit]].astype(np.int64),
        side[first_idx[keep][emit]].astype(np.int8),
        g_qty.astype(np.int64),
        counts[keep][emit].astype(np.int64),
        g_vwap,
    )


def aggregate_chunks(
    ts,
    side,
    price_fp,
    qty_fp,
    r_ts,
    r_side,
    r_qty_fp,
    origin,
    chunk_ms,
    n_chunks,
    seed_close_fp,
):
    """Bucket trades and buy-side rush orders into tiled chunks.

    All trade/rush timestamps must fall in [origin, origin + n_chunks*chunk_ms).
    Empty chunks carry the previous close forward as open=high=low=close;
    leading empties use seed_close_fp, or the first trade's price when
    seed_close_fp < 0. first_ts is -1 for chunks with no trades.
    """
    n_chunks = int(n_chunks)
    ntr = np.zeros(n_chunks, dtype=np.int64)
    buy_fp = np.zeros(n_chunks, dtype=np.int64)
    sell_fp = np.zeros(n_chunks, dtype=np.int64)
    open_fp = np.zeros(n_chunks, dtype=np.int64)
    high_fp = np.zeros(n_chunks, dtype=np.int64)
    low_fp = np.zeros(n_chunks, dtype=np.int64)
    close_fp = np.zeros(n_chunks, dtype=np.int64)
    first_ts = np.full(n_chunks, -1, dtype=np.int64)

    if len(ts):
        idx = (ts - origin) // chunk_ms
        if int(idx[0]) < 0 or int(idx[-1]) >= n_chunks:
            raise ValueError("trade outside chunk range")
        bounds = np.searchsorted(idx, np.arange(n_chunks + 1))
        ntr = (bounds[1:] - bounds[:-1]).astype(np.int64)
        filled = np.nonzero(ntr > 0)[0]
        # Segments between consecutive filled-chunk starts contain no other
        # trades, so reduceat over those starts sums exactly per chunk.
        seg_starts = bounds[filled]
        seg_ends = bounds[filled + 1] - 1
        first_ts[filled] = ts[seg_starts]
        buy_fp[filled] = np.add.reduceat(np.where(side == 1, qty_fp, 0), seg_starts)
        sell_fp[filled] = np.add.reduceat(np.where(side == 0, qty_fp, 0), seg_starts)
        open_fp[filled] = price_fp[seg_starts]
        close_fp[filled] = price_fp[seg_ends]
        high_fp[filled] = np.maximum.reduceat(price_fp, seg_starts)
        low_fp[filled] = np.minimum.reduceat(price_fp, seg_starts)

    # Carry-forward for empty chunks.
    empty = ntr == 0
    last_filled = np.where(~empty, np.arange(n_chunks), -1)
    np.maximum.accumulate(last_filled, out=last_filled)
    seed = int(seed_close_fp)
    if seed < 0:
        seed = int(open_fp[~empty][0]) if (~empty).any() else 0
    carried = np.where(last_filled >= 0, close_fp[np.maximum(last_filled, 0)], seed)
    for arr in (open_fp, high_fp, low_fp, close_fp):
        arr[empty] = carried[empty]

    n_rush = np.zeros(n_chunks, dtype=np.int64)
    rush_fp = np.zeros(n_chunks, dtype=np.int64)
    if len(r_ts):
        bm = r_side == 1
        b_ts = r_ts[bm]
        b_qty = r_qty_fp[bm]
        if len(b_ts):
            ridx = (b_ts - origin) // chunk_ms
            if int(ridx[0]) < 0 or int(ridx[-1]) >= n_chunks:
                raise ValueError("rush order outside chunk range")
            n_rush = np.bincount(ridx, minlength=n_chunks).astype(np.int64)
            rfilled = np.nonzero(n_rush > 0)[0]
            rbounds = np.searchsorted(ridx, np.arange(n_chunks + 1))
            rush_fp[rfilled] = np.add.reduceat(b_qty, rbounds[rfilled])

    return (ntr, buy_fp, sell_fp, rush_fp, n_rush, open_fp, high_fp, low_fp, close_fp, first_ts)


def rolling_stats(values, window):
    """Trailing-window mean and population std, current element excluded.

    For index i >= window the statistics cover values[i-window : i]; below
    that both outputs are 0 (those rows are warm-up). Sums are exact Python
    integers, so the variance numerator n*S2 - S1^2 carries no cancellation
    error regardless of magnitude.
    """
    n = len(values)
    w = int(window)
    mean = np.zeros(n, dtype=np.float64)
    std = np.zeros(n, dtype=np.float64)
    vals = [int(v) for v in values]
    s1 = 0
    s2 = 0
    lo = 0
    wf = float(w)
    ww = wf * wf
    for i in range(n):
        if i >= w:
            # float conversions ordered exactly as the compiled kernel's
            num = w * s2 - s1 * s1
            mean[i] = float(s1) / wf
            if num > 0:
                std[i] = math.sqrt(float(num) / ww)
        v = vals[i]
        s1 += v
        s2 += v * v
        if i - lo + 1 > w:
            u = vals[lo]
            s1 -= u
            s2 -= u * u
            lo += 1
    return mean, std


def ensemble_score(feat, thr, left, right, leaf, roots, weights, X):
    """Weighted hard-vote score of a flattened tree ensemble.

    feat < 0 marks a leaf; a leaf votes positive when its value >= 0.5.
    Returns sum_t weights[t] * vote_t per row of X.
    """
    n = X.shape[0]
    if n <= 4:
        # plain traversal: numpy per-level dispatch costs more than it saves
        fl, tl, ll, rl, vl = (feat.tolist(), thr.tolist(), left.tolist(),
                              right.tolist(), leaf.tolist())
        out = np.zeros(n, dtype=np.float64)
        for i in range(n):
            row = X[i].tolist()
            s = 0.0
            for t in range(len(roots)):
                node = int(roots[t])
                f = fl[node]
                while f >= 0:
                    node = ll[node] if row[f] <= tl[node] else rl[node]
                    f = fl[node]
                if vl[node] >= 0.5:
                    s += weights[t]
            out[i] = s
        return out
    score = np.zeros(n, dtype=np.float64)
    for t in range(len(roots)):
        node = np.full(n, roots[t], dtype=np.int64)
        f = feat[node]
        while True:
            internal = np.nonzero(f >= 0)[0]
            if internal.size == 0:
                break
            nd = node[internal]
            go_left = X[internal, f[internal]] <= thr[nd]
            node[internal] = np.where(go_left, left[nd], right[nd])
            f = feat[node]
        score += weights[t] * (leaf[node] >= 0.5)
    return score
