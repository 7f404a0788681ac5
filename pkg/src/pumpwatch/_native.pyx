# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: rush-order grouping, chunk aggregation, rolling
window moments, and ensemble scoring.

Mirrors `pumpwatch._pyfallback`. Rolling moments accumulate in 128-bit
integers; the caller guarantees window * max|value| <= ~9.2e18 so the
variance numerator cannot overflow (pumpwatch.kernels enforces this and
reroutes oversized inputs to the fallback).
"""

import numpy as np

from libc.math cimport sqrt

cdef extern from *:
    ctypedef long long i128 "__int128"


def rush_groups(const long long[::1] ts, const signed char[::1] side,
                const long long[::1] price_fp, const long long[::1] qty_fp):
    cdef Py_ssize_t n = ts.shape[0]
    cdef Py_ssize_t cap = n // 2 + 1
    out_ts_a = np.empty(cap, dtype=np.int64)
    out_side_a = np.empty(cap, dtype=np.int8)
    out_qty_a = np.empty(cap, dtype=np.int64)
    out_cnt_a = np.empty(cap, dtype=np.int64)
    out_vwap_a = np.empty(cap, dtype=np.float64)
    cdef long long[::1] out_ts = out_ts_a
    cdef signed char[::1] out_side = out_side_a
    cdef long long[::1] out_qty = out_qty_a
    cdef long long[::1] out_cnt = out_cnt_a
    cdef double[::1] out_vwap = out_vwap_a

    # All trades in a (timestamp, side) group share one millisecond run but
    # may interleave with the opposite side; aggregate per run and side,
    # emitting groups in first-trade order.
    cdef Py_ssize_t i = 0, j, k, m = 0
    cdef long long qsum[2]
    cdef long long cnt[2]
    cdef Py_ssize_t first[2]
    cdef i128 notional[2]
    cdef int s, a, b
    while i < n:
        j = i + 1
        while j < n and ts[j] == ts[i]:
            j += 1
        qsum[0] = qsum[1] = 0
        cnt[0] = cnt[1] = 0
        notional[0] = notional[1] = 0
        first[0] = first[1] = -1
        for k in range(i, j):
            s = 1 if side[k] == 1 else 0
            if first[s] < 0:
                first[s] = k
            qsum[s] += qty_fp[k]
            cnt[s] += 1
            notional[s] += <i128> price_fp[k] * <i128> qty_fp[k]
        a = 0 if (first[0] >= 0 and (first[1] < 0 or first[0] < first[1])) else 1
        for b in (a, 1 - a):
            if cnt[b] >= 2:
                out_ts[m] = ts[i]
                out_side[m] = <signed char> b
                out_qty[m] = qsum[b]
                out_cnt[m] = cnt[b]
                out_vwap[m] = <double> notional[b] / (<double> qsum[b] * 1e8)
                m += 1
        i = j
    return (out_ts_a[:m], out_side_a[:m], out_qty_a[:m], out_cnt_a[:m], out_vwap_a[:m])


def aggregate_chunks(const long long[::1] ts, const signed char[::1] side,
                     const long long[::1] price_fp, const long long[::1] qty_fp,
                     const long long[::1] r_ts, const signed char[::1] r_side,
                     const long long[::1] r_qty_fp,
                     long long origin, long long chunk_ms, Py_ssize_t n_chunks,
                     long long seed_close_fp):
    ntr_a = np.zeros(n_chunks, dtype=np.int64)
    buy_a = np.zeros(n_chunks, dtype=np.int64)
    sell_a = np.zeros(n_chunks, dtype=np.int64)
    rush_a = np.zeros(n_chunks, dtype=np.int64)
    nrush_a = np.zeros(n_chunks, dtype=np.int64)
    open_a = np.zeros(n_chunks, dtype=np.int64)
    high_a = np.zeros(n_chunks, dtype=np.int64)
    low_a = np.zeros(n_chunks, dtype=np.int64)
    close_a = np.zeros(n_chunks, dtype=np.int64)
    fts_a = np.full(n_chunks, -1, dtype=np.int64)
    cdef long long[::1] ntr = ntr_a, buy = buy_a, sell = sell_a
    cdef long long[::1] rush = rush_a, nrush = nrush_a
    cdef long long[::1] opn = open_a, high = high_a, low = low_a, close = close_a
    cdef long long[::1] fts = fts_a

    cdef Py_ssize_t n = ts.shape[0], k
    cdef long long c
    for k in range(n):
        c = (ts[k] - origin) // chunk_ms
        if c < 0 or c >= n_chunks:
            raise ValueError("trade outside chunk range")
        if ntr[c] == 0:
            fts[c] = ts[k]
            opn[c] = price_fp[k]
            high[c] = price_fp[k]
            low[c] = price_fp[k]
        else:
            if price_fp[k] > high[c]:
                high[c] = price_fp[k]
            if price_fp[k] < low[c]:
                low[c] = price_fp[k]
        close[c] = price_fp[k]
        ntr[c] += 1
        if side[k] == 1:
            buy[c] += qty_fp[k]
        else:
            sell[c] += qty_fp[k]

    cdef Py_ssize_t rn = r_ts.shape[0]
    for k in range(rn):
        if r_side[k] != 1:
            continue
        c = (r_ts[k] - origin) // chunk_ms
        if c < 0 or c >= n_chunks:
            raise ValueError("rush order outside chunk range")
        nrush[c] += 1
        rush[c] += r_qty_fp[k]

    cdef long long carry = seed_close_fp
    if carry < 0:
        carry = 0
        for k in range(n_chunks):
            if ntr[k] > 0:
                carry = opn[k]
                break
    for k in range(n_chunks):
        if ntr[k] == 0:
            opn[k] = carry
            high[k] = carry
            low[k] = carry
            close[k] = carry
        else:
            carry = close[k]
    return (ntr_a, buy_a, sell_a, rush_a, nrush_a, open_a, high_a, low_a, close_a, fts_a)


def rolling_stats(const long long[::1] values, Py_ssize_t window):
    cdef Py_ssize_t n = values.shape[0]
    mean_a = np.zeros(n, dtype=np.float64)
    std_a = np.zeros(n, dtype=np.float64)
    cdef double[::1] mean = mean_a
    cdef double[::1] std = std_a
    cdef i128 s1 = 0, s2 = 0, v, u, num
    cdef Py_ssize_t i, lo = 0
    cdef double wd = <double> window
    for i in range(n):
        if i >= window:
            num = window * s2 - s1 * s1
            mean[i] = <double> s1 / wd
            if num > 0:
                std[i] = sqrt(<double> num / (wd * wd))
        v = values[i]
        s1 += v
        s2 += v * v
        if i - lo + 1 > window:
            u = values[lo]
            s1 -= u
            s2 -= u * u
            lo += 1
    return mean_a, std_a


def ensemble_score(const int[::1] feat, const double[::1] thr,
                   const int[::1] left, const int[::1] right,
                   const double[::1] leaf,
                   const long long[::1] roots, const double[::1] weights,
                   const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0], T = roots.shape[0]
    out_a = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_a
    cdef Py_ssize_t i, t
    cdef long long node
    cdef int f
    cdef double s
    for i in range(n):
        s = 0.0
        for t in range(T):
            node = roots[t]
            f = feat[node]
            while f >= 0:
                if X[i, f] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
                f = feat[node]
            if leaf[node] >= 0.5:
                s += weights[t]
        out[i] = s
    return out_a
