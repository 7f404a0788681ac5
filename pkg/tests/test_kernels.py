"""Backend equivalence: compiled kernels must match the pure-Python lane."""

import numpy as np
import pytest

from pumpwatch import _pyfallback, kernels

from conftest import random_trades

native = pytest.importorskip("pumpwatch._native") if kernels.HAVE_NATIVE else None
pytestmark = pytest.mark.skipif(not kernels.HAVE_NATIVE,
                                reason="compiled extension not built")


def test_rush_groups_equivalence(rng):
    for _ in range(10):
        n = int(rng.integers(10, 5000))
        b = random_trades(rng, n, span_ms=int(rng.integers(20, 10_000)))
        a = _pyfallback.rush_groups(b.ts, b.side, b.price_fp, b.qty_fp)
        c = native.rush_groups(b.ts, b.side, b.price_fp, b.qty_fp)
        for x, y in zip(a[:4], c[:4]):
            assert np.array_equal(x, y)
        assert np.allclose(a[4], c[4], rtol=1e-12)


def test_aggregate_chunks_equivalence(rng):
    for _ in range(10):
        n = int(rng.integers(2, 3000))
        b = random_trades(rng, n, span_ms=int(rng.integers(5_000, 500_000)))
        g = _pyfallback.rush_groups(b.ts, b.side, b.price_fp, b.qty_fp)
        origin = (int(b.ts[0]) // 5000) * 5000 - 10_000  # leading empties
        n_chunks = (int(b.ts[-1]) - origin) // 5000 + 3  # trailing empties
        args = (b.ts, b.side, b.price_fp, b.qty_fp, g[0], g[1], g[2],
                origin, 5000, n_chunks, -1)
        a = _pyfallback.aggregate_chunks(*args)
        c = native.aggregate_chunks(*args)
        for x, y in zip(a, c):
            assert np.array_equal(x, y)


def test_rolling_stats_equivalence(rng):
    for w in (2, 3, 17, 240):
        vals = rng.integers(0, 10**12, 3000).astype(np.int64)
        m1, s1 = _pyfallback.rolling_stats(vals, w)
        m2, s2 = native.rolling_stats(vals, w)
        assert np.array_equal(m1, m2)  # identical float ops -> bit equal
        assert np.array_equal(s1, s2)


def test_rolling_stats_overflow_guard_reroutes(rng):
    # window * max|v| beyond the int128-safe product must still be exact
    vals = np.full(300, 9 * 10**17, dtype=np.int64)
    vals[150] = 8 * 10**17
    window = 100
    assert window * int(np.abs(vals).max()) > kernels._I128_SAFE_PRODUCT
    mean, std = kernels.rolling_stats(vals, window)
    ref_m, ref_s = _pyfallback.rolling_stats(vals, window)
    assert np.array_equal(mean, ref_m)
    assert np.array_equal(std, ref_s)
    assert std[151] > 0  # the outlier is visible, not swamped by overflow


def test_ensemble_score_equivalence(rng):
    # a random flat forest over random inputs
    n_nodes, n_trees, d = 0, 20, 6
    feats, thrs, lefts, rights, leaves, roots = [], [], [], [], [], []
    for _ in range(n_trees):
        roots.append(n_nodes)
        # depth-2 complete tree: 3 internal, 4 leaves
        for k in range(7):
            if k < 3:
                feats.append(int(rng.integers(0, d)))
                thrs.append(float(rng.normal()))
            else:
                feats.append(-1)
                thrs.append(0.0)
            leaves.append(float(rng.random()))
        lefts += [n_nodes + 1, n_nodes + 3, n_nodes + 5, -1, -1, -1, -1]
        rights += [n_nodes + 2, n_nodes + 4, n_nodes + 6, -1, -1, -1, -1]
        n_nodes += 7
    args = (np.array(feats, dtype=np.int32), np.array(thrs),
            np.array(lefts, dtype=np.int32), np.array(rights, dtype=np.int32),
            np.array(leaves), np.array(roots, dtype=np.int64),
            np.full(n_trees, 1.0 / n_trees), None)
    for rows in (1, 3, 500):
        X = np.ascontiguousarray(rng.normal(size=(rows, d)))
        a = _pyfallback.ensemble_score(*args[:7], X)
        c = native.ensemble_score(*args[:7], X)
        assert np.allclose(a, c, rtol=0, atol=0)
