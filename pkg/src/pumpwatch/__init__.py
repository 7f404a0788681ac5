"""Streaming detection of cryptocurrency pump-and-dump manipulations.

The pipeline: raw trade ticks -> rush-order inference -> fixed-duration
chunks -> moving-window features -> tree-ensemble / threshold / adaptive
baseline detectors, with a synthetic-market generator and a K-fold
evaluation harness around it.
"""

__version__ = "0.1.0"

from .trade_model import (  # noqa: F401
    SCALE,
    AlertEvent,
    Chunk,
    ChunkSeries,
    DetectorKind,
    FeatureVector,
    LabeledChunk,
    RushOrder,
    RushOrderBatch,
    Side,
    TradeBatch,
    TradeRecord,
    from_fixed,
    to_fixed,
    validate_stream,
)
