"""Dataset slicing, labeling, K-fold evaluation, and the threshold study.

The evaluation protocol: per pump event, a 3-day slice (the day of the
fraud, the day before, the day after, UTC); overlapping slices on one
pair merge with duplicate days dropped. Each signal labels exactly the
chunk whose half-open interval contains it. Cross-validation folds split
BY EVENT SLICE, never by chunk, so near-duplicate windows cannot leak
between train and test; metrics are micro-averaged over pooled confusion
counts.

A detection counts as a true positive when the alert lands on the labeled
position or within `match_tolerance_chunks` (default 2) positions after
it, in the detector's own granularity.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .classifiers import (
    ClassWeighting,
    ForestConfig,
    Model,
    pr_threshold_select,
    train_adaboost,
    train_forest,
)
from .detectors import (
    DEFAULT_COOLDOWN_S,
    KampsConfig,
    candles_from_trades,
    detect_kamps,
    detect_stream,
    detect_threshold,
)
from .errors import ConfigError, InsufficientCoverage, ParseError, TooFewEvents
from .features import (
    CROWD_FEATURE_NAMES,
    FEATURE_NAMES,
    FeatureFrame,
    WindowConfig,
    chunk_stream,
    compute_features,
)
from .ingestion import infer_rush_orders
from .trade_model import ChunkSeries, TradeBatch

DAY_MS = 86_400_000


@dataclass(frozen=True)
class PumpEvent:
    """One confirmed pump-and-dump signal."""

    pair: str
    signal_timestamp: int
    exchange: str = "binance"
    group_id: Optional[str] = None

    def __post_init__(self):
        if self.signal_timestamp <= 0:
            raise ValueError("signal_timestamp must be > 0")


# Event manifest: CSV pair,signal_timestamp_ms,exchange with optional
# trailing group_id column.


def read_events_csv(stream: Union[TextIO, str]) -> list[PumpEvent]:
    text = stream if isinstance(stream, str) else stream.read()
    events = []
    lines = [ln for ln in text.split("\n") if ln.strip()]
    start = 1 if lines and lines[0].lower().startswith("pair") else 0
    for k, line in enumerate(lines[start:], start=start + 1):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 3:
            raise ParseError(k, "expected pair,signal_timestamp_ms,exchange")
        events.append(PumpEvent(
            pair=parts[0],
            signal_timestamp=int(parts[1]),
            exchange=parts[2],
            group_id=parts[3] if len(parts) > 3 and parts[3] else None,
        ))
    return events


def write_events_csv(out: TextIO, events: Iterable[PumpEvent]) -> None:
    out.write("pair,signal_timestamp_ms,exchange\n")
    for e in events:
        out.write(f"{e.pair},{e.signal_timestamp},{e.exchange}\n")


@dataclass
class SliceData:
    """One merged 3-day-per-event window, chunked and featurized."""

    pair: str
    origin: int
    end: int
    trades: TradeBatch
    chunks: ChunkSeries
    frame: FeatureFrame
    labels: np.ndarray  # bool per chunk
    events: list[PumpEvent]


@dataclass
class SliceDataset:
    slices: list[SliceData]
    cfg: WindowConfig

    @property
    def n_events(self) -> int:
        return sum(len(s.events) for s in self.slices)

    def pooled_rows(self, which: Sequence[int],
                    feature_names: Sequence[str] = FEATURE_NAMES):
        """Stack non-warm-up rows of the given slices into (X, y)."""
        xs, ys = [], []
        for i in which:
            s = self.slices[i]
            live = ~s.frame.warmup
            xs.append(s.frame.select(feature_names)[live])
            ys.append(s.labels[live])
        if not xs:
            return (np.zeros((0, len(feature_names))), np.zeros(0, dtype=bool))
        return np.concatenate(xs), np.concatenate(ys)


def _event_days(e: PumpEvent) -> set[int]:
    d = e.signal_timestamp // DAY_MS
    return {d - 1, d, d + 1}


def training_rows_from_frame(frame: FeatureFrame, labels: np.ndarray,
                             window_chunks: int,
                             feature_names: Sequence[str] = FEATURE_NAMES,
                             label_shift: int = 1):
    """Detector-facing training rows for one labeled frame.

    The trailing window is strictly causal, so the chunk holding a signal
    cannot see its own burst; the first row whose window contains the
    event is the next one. Positives therefore shift forward by
    `label_shift` chunks. The window_chunks rows after a shifted positive
    still carry the burst in their windows — teaching those as negatives
    would contradict the positive, so they are dropped, mirroring the
    detector's post-alert cooldown. Warm-up rows are dropped too.
    """
    n = len(frame)
    y = np.zeros(n, dtype=bool)
    keep = ~frame.warmup
    for i in np.nonzero(labels)[0]:
        j = i + label_shift
        if j < n:
            y[j] = True
        keep = keep.copy()
        keep[j + 1: min(n, j + 1 + window_chunks)] = False
    keep = keep | y
    return frame.select(feature_names)[keep], y[keep]


def label_chunks(frame: FeatureFrame, signals: Iterable[int],
                 origin: int) -> np.ndarray:
    """Label the chunk whose half-open interval holds each signal."""
    labels = np.zeros(len(frame), dtype=bool)
    chunk_ms = frame.chunk_seconds * 1000
    for sig in signals:
        idx = (int(sig) - origin) // chunk_ms
        if 0 <= idx < len(labels):
            labels[idx] = True
    return labels


def build_slices(events: Sequence[PumpEvent],
                 trades_by_pair: dict[str, TradeBatch],
                 cfg: WindowConfig,
                 require_coverage: bool = True) -> SliceDataset:
    """Slice, chunk, featurize, and label the dataset around each event."""
    if DAY_MS % cfg.chunk_ms != 0:
        raise ConfigError(f"chunk size {cfg.chunk_seconds}s must divide a day")
    by_pair: dict[str, list[PumpEvent]] = {}
    for e in events:
        by_pair.setdefault(e.pair, []).append(e)

    slices: list[SliceData] = []
    for pair, evs in by_pair.items():
        batch = trades_by_pair.get(pair)
        if batch is None:
            raise InsufficientCoverage(evs[0], "no trades for pair")
        days = sorted(set().union(*[_event_days(e) for e in evs]))
        if require_coverage:
            for e in evs:
                for d in sorted(_event_days(e)):
                    lo = int(np.searchsorted(batch.ts, d * DAY_MS, side="left"))
                    hi = int(np.searchsorted(batch.ts, (d + 1) * DAY_MS, side="left"))
                    if hi == lo:
                        raise InsufficientCoverage(e, f"no trades on day {d}")
        # contiguous day runs -> one merged slice each
        runs: list[list[int]] = [[days[0]]]
        for d in days[1:]:
            if d == runs[-1][-1] + 1:
                runs[-1].append(d)
            else:
                runs.append([d])
        for run in runs:
            origin = run[0] * DAY_MS
            end = (run[-1] + 1) * DAY_MS
            run_events = [e for e in evs
                          if origin <= e.signal_timestamp < end
                          and (e.signal_timestamp // DAY_MS) in run]
            window = batch.time_window(origin, end)
            rush = infer_rush_orders(window)
            chunks = chunk_stream(window, rush, cfg, origin, end=end)
            frame = compute_features(chunks, cfg)
            labels = label_chunks(frame, [e.signal_timestamp for e in run_events], origin)
            slices.append(SliceData(pair=pair, origin=origin, end=end,
                                    trades=window, chunks=chunks, frame=frame,
                                    labels=labels, events=run_events))
    return SliceDataset(slices=slices, cfg=cfg)


# ---------------------------------------------------------------------------
# Detector adapters for evaluation


class ForestEvalDetector:
    """Trains a fresh random forest per fold, detects with cooldown."""

    name = "random_forest"

    def __init__(self, cfg: ForestConfig = ForestConfig(), seed: int = 0,
                 cooldown_seconds: int = DEFAULT_COOLDOWN_S,
                 feature_names: Sequence[str] = FEATURE_NAMES):
        self.cfg = cfg
        self.seed = seed
        self.cooldown_seconds = cooldown_seconds
        self.feature_names = tuple(feature_names)
        self.model: Optional[Model] = None

    def fingerprint(self) -> dict:
        return {"detector": self.name, "n_trees": self.cfg.n_trees,
                "max_depth": self.cfg.max_depth,
                "class_weighting": self.cfg.class_weighting.value,
                "seed": self.seed, "cooldown_seconds": self.cooldown_seconds,
                "features": list(self.feature_names)}

    def _training_matrix(self, dataset: SliceDataset, train_idx: Sequence[int]):
        xs, ys = [], []
        for i in train_idx:
            s = dataset.slices[i]
            X, y = training_rows_from_frame(s.frame, s.labels,
                                            dataset.cfg.window_chunks,
                                            self.feature_names)
            xs.append(X)
            ys.append(y)
        return np.concatenate(xs), np.concatenate(ys)

    def fit(self, dataset: SliceDataset, train_idx: Sequence[int]) -> None:
        X, y = self._training_matrix(dataset, train_idx)
        self.model = train_forest(X, y, self.cfg, self.seed,
                                  feature_names=self.feature_names,
                                  meta={"window_hours": dataset.cfg.window_hours,
                                        "chunk_seconds": dataset.cfg.chunk_seconds})

    def granularity_ms(self, dataset: SliceDataset) -> int:
        return dataset.cfg.chunk_ms

    def alerts(self, s: SliceData) -> list[int]:
        return [a.chunk_start for a in
                detect_stream(s.frame, self.model, self.cooldown_seconds)]


class AdaBoostEvalDetector(ForestEvalDetector):
    name = "adaboost"

    def __init__(self, n_rounds: int = 50, max_depth: int = 5, seed: int = 0,
                 cooldown_seconds: int = DEFAULT_COOLDOWN_S,
                 class_weighting: ClassWeighting = ClassWeighting.BALANCED,
                 feature_names: Sequence[str] = FEATURE_NAMES):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.seed = seed
        self.cooldown_seconds = cooldown_seconds
        self.class_weighting = class_weighting
        self.feature_names = tuple(feature_names)
        self.model = None

    def fingerprint(self) -> dict:
        return {"detector": self.name, "n_rounds": self.n_rounds,
                "max_depth": self.max_depth, "seed": self.seed,
                "class_weighting": self.class_weighting.value,
                "cooldown_seconds": self.cooldown_seconds,
                "features": list(self.feature_names)}

    def fit(self, dataset: SliceDataset, train_idx: Sequence[int]) -> None:
        X, y = self._training_matrix(dataset, train_idx)
        self.model = train_adaboost(X, y, self.n_rounds, self.seed,
                                    self.max_depth, self.class_weighting,
                                    feature_names=self.feature_names,
                                    meta={"window_hours": dataset.cfg.window_hours,
                                          "chunk_seconds": dataset.cfg.chunk_seconds})


class ThresholdEvalDetector:
    """PR-curve threshold selection on the train fold, strict-> detection."""

    name = "threshold"

    def __init__(self, threshold: Optional[float] = None,
                 cooldown_seconds: int = DEFAULT_COOLDOWN_S):
        self.fixed_threshold = threshold
        self.threshold = threshold
        self.cooldown_seconds = cooldown_seconds

    def fingerprint(self) -> dict:
        return {"detector": self.name, "threshold": self.fixed_threshold,
                "cooldown_seconds": self.cooldown_seconds}

    def fit(self, dataset: SliceDataset, train_idx: Sequence[int]) -> None:
        if self.fixed_threshold is not None:
            return
        xs, ys = [], []
        for i in train_idx:
            s = dataset.slices[i]
            X, y = training_rows_from_frame(s.frame, s.labels,
                                            dataset.cfg.window_chunks,
                                            ("std_rush_orders",))
            xs.append(X)
            ys.append(y)
        choice = pr_threshold_select(np.concatenate(xs)[:, 0], np.concatenate(ys))
        self.threshold = choice.threshold

    def granularity_ms(self, dataset: SliceDataset) -> int:
        return dataset.cfg.chunk_ms

    def alerts(self, s: SliceData) -> list[int]:
        return [a.chunk_start for a in
                detect_threshold(s.frame, self.threshold, self.cooldown_seconds)]


class KampsEvalDetector:
    """The adaptive-threshold baseline; no training, 1-hour candles."""

    name = "kamps"

    def __init__(self, cfg: KampsConfig):
        self.cfg = cfg

    def fingerprint(self) -> dict:
        return {"detector": self.name, "level": self.cfg.level.value,
                "volume_multiplier": self.cfg.volume_multiplier,
                "price_multiplier": self.cfg.price_multiplier,
                "volume_window_hours": self.cfg.volume_window_hours,
                "price_window_hours": self.cfg.price_window_hours}

    def fit(self, dataset: SliceDataset, train_idx: Sequence[int]) -> None:
        pass

    def granularity_ms(self, dataset: SliceDataset) -> int:
        return self.cfg.candle_hours * 3_600_000

    def alerts(self, s: SliceData) -> list[int]:
        candles = candles_from_trades(s.trades, s.origin, self.cfg.candle_hours,
                                      end=s.end)
        return [a.chunk_start for a in detect_kamps(candles, self.cfg)]


# ---------------------------------------------------------------------------
# Metrics and the K-fold driver


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    detector: str
    k: int
    per_fold: list[dict]
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    config_fingerprint: str
    chunk_seconds: int
    window_hours: float
    match_tolerance_chunks: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2)

    def table(self) -> str:
        lines = [
            f"detector={self.detector}  chunk={self.chunk_seconds}s  "
            f"window={self.window_hours}h  folds={self.k}",
            f"{'fold':>4}  {'tp':>5}  {'fp':>5}  {'fn':>5}  "
            f"{'precision':>9}  {'recall':>9}  {'f1':>9}",
        ]
        for i, f in enumerate(self.per_fold):
            lines.append(f"{i:>4}  {f['tp']:>5}  {f['fp']:>5}  {f['fn']:>5}  "
                         f"{f['precision']:>9.3f}  {f['recall']:>9.3f}  {f['f1']:>9.3f}")
        lines.append(f"{'all':>4}  {self.tp:>5}  {self.fp:>5}  {self.fn:>5}  "
                     f"{self.precision:>9.3f}  {self.recall:>9.3f}  {self.f1:>9.3f}")
        return "\n".join(lines)


def _match_alerts(s: SliceData, alert_times: list[int], granularity: int,
                  tolerance: int) -> tuple[int, int, int]:
    """Confusion counts for one slice: an alert is TP when it falls on an
    event's labeled position or within `tolerance` positions after it."""
    windows = []
    for e in s.events:
        pos = s.origin + ((e.signal_timestamp - s.origin) // granularity) * granularity
        windows.append((pos, pos + (tolerance + 1) * granularity))
    tp = 0
    fp = 0
    detected = [False] * len(windows)
    for t in alert_times:
        hit = False
        for i, (lo, hi) in enumerate(windows):
            if lo <= t < hi:
                detected[i] = True
                hit = True
        if hit:
            tp += 1
        else:
            fp += 1
    fn = detected.count(False)
    return tp, fp, fn


def assign_folds(n_slices: int, k: int, seed: int) -> list[list[int]]:
    """Deterministic event-level fold assignment: shuffle, round-robin."""
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n_slices)
    folds: list[list[int]] = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(int(idx))
    return folds


def kfold_evaluate(dataset: SliceDataset, detector, k: int = 5, seed: int = 0,
                   match_tolerance_chunks: int = 2) -> EvalReport:
    """K-fold cross validation with event-slice granularity folds.

    Trains on k-1 folds, streams the held-out slices through the full
    detector (cooldown included), and micro-averages pooled confusion
    counts. Kamps-style detectors that don't train simply score every
    fold's slices.
    """
    n = len(dataset.slices)
    if dataset.n_events < k:
        raise TooFewEvents(f"{dataset.n_events} events < {k} folds")
    folds = assign_folds(n, k, seed)
    per_fold = []
    tot_tp = tot_fp = tot_fn = 0
    for fi in range(k):
        test_idx = folds[fi]
        train_idx = [i for fj in range(k) if fj != fi for i in folds[fj]]
        detector.fit(dataset, train_idx)
        g = detector.granularity_ms(dataset)
        tp = fp = fn = 0
        for si in test_idx:
            s = dataset.slices[si]
            a, b, c = _match_alerts(s, detector.alerts(s), g, match_tolerance_chunks)
            tp += a
            fp += b
            fn += c
        p, r, f1 = _prf(tp, fp, fn)
        per_fold.append({"tp": tp, "fp": fp, "fn": fn,
                         "precision": p, "recall": r, "f1": f1})
        tot_tp += tp
        tot_fp += fp
        tot_fn += fn
    p, r, f1 = _prf(tot_tp, tot_fp, tot_fn)
    fingerprint = hashlib.sha256(json.dumps(
        {**detector.fingerprint(), "k": k, "seed": seed,
         "match_tolerance_chunks": match_tolerance_chunks,
         "chunk_seconds": dataset.cfg.chunk_seconds,
         "window_hours": dataset.cfg.window_hours},
        sort_keys=True).encode()).hexdigest()[:16]
    return EvalReport(detector=detector.name, k=k, per_fold=per_fold,
                      tp=tot_tp, fp=tot_fp, fn=tot_fn,
                      precision=p, recall=r, f1=f1,
                      config_fingerprint=fingerprint,
                      chunk_seconds=dataset.cfg.chunk_seconds,
                      window_hours=dataset.cfg.window_hours,
                      match_tolerance_chunks=match_tolerance_chunks)


# ---------------------------------------------------------------------------
# Rush-order threshold study


@dataclass
class ThresholdStudy:
    threshold: float
    train_precision: float
    train_recall: float
    test_precision: float
    test_recall: float
    curve_thresholds: np.ndarray
    curve_precision: np.ndarray
    curve_recall: np.ndarray


def rush_threshold_study(dataset: SliceDataset, seed: int = 0) -> ThresholdStudy:
    """Random 50/50 event split; PR curve on train; pick the max-F1
    threshold; report chunk-level precision/recall on both halves."""
    n = len(dataset.slices)
    if n < 2:
        raise TooFewEvents("need at least 2 event slices to split 50/50")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    half = n // 2
    train_idx = [int(i) for i in order[:half]]
    test_idx = [int(i) for i in order[half:]]
    Xtr, ytr = dataset.pooled_rows(train_idx, ("std_rush_orders",))
    Xte, yte = dataset.pooled_rows(test_idx, ("std_rush_orders",))
    choice = pr_threshold_select(Xtr[:, 0], ytr)

    def prf(values, labels):
        pred = values > choice.threshold
        tp = int((pred & labels).sum())
        fp = int((pred & ~labels).sum())
        fn = int((~pred & labels).sum())
        p, r, _ = _prf(tp, fp, fn)
        return p, r

    p_tr, r_tr = prf(Xtr[:, 0], ytr)
    p_te, r_te = prf(Xte[:, 0], yte)
    return ThresholdStudy(threshold=choice.threshold,
                          train_precision=p_tr, train_recall=r_tr,
                          test_precision=p_te, test_recall=r_te,
                          curve_thresholds=choice.curve.thresholds,
                          curve_precision=choice.curve.precision,
                          curve_recall=choice.curve.recall)
