"""Command-line entry point.

Exit codes: 0 ok, 2 usage, 3 data error, 4 network error. Failures print
one machine-readable JSON object on stderr. Time flags accept epoch-ms or
ISO-8601 UTC. A TOML config file (flag --config on the group, or the
PUMPWATCH_CONFIG env var) supplies defaults; explicit flags win.
"""

from __future__ import annotations

import functools
import json
import sys
import time as _time
from pathlib import Path

import click
import numpy as np

from . import errors as errs
from .classifiers import (
    ClassWeighting,
    ForestConfig,
    load_model,
    save_model,
    train_adaboost,
    train_forest,
)
from .detectors import (
    CROWD_CHUNK_S,
    CROWD_COOLDOWN_S,
    DEFAULT_COOLDOWN_S,
    KampsLevel,
    StreamingDetector,
    detect_crowd_pump,
    format_alert,
    kamps_config,
)
from .evaluation import (
    AdaBoostEvalDetector,
    ForestEvalDetector,
    KampsEvalDetector,
    ThresholdEvalDetector,
    build_slices,
    kfold_evaluate,
    read_events_csv,
    training_rows_from_frame,
    write_events_csv,
)
from .features import (
    CROWD_FEATURE_NAMES,
    FEATURE_NAMES,
    WindowConfig,
    chunk_stream,
    compute_features,
    read_features_csv,
    write_features_csv,
)
from .ingestion import (
    ExchangeClient,
    ExchangeConfig,
    TradeFormat,
    fetch_historical,
    infer_rush_orders,
    parse_trades,
    serialize_trades,
)
from .evaluation import label_chunks
from .synth import generate, load_scenario
from .timefmt import parse_time_ms
from .trade_model import TradeBatch

_DATA_ERRORS = (errs.ParseError, errs.NonMonotonicTimestamp, errs.NonPositiveValue,
                errs.MisalignedOrigin, errs.EmptyTrainingSet, errs.TooFewEvents,
                errs.InsufficientCoverage, errs.InvalidScenario,
                errs.ModelFormatError, errs.ConfigError, errs.SingleClassInput,
                errs.FeatureDimensionMismatch, FileNotFoundError, ValueError)
_NETWORK_ERRORS = (errs.NetworkError, errs.RateLimited, errs.GapDetected)


def _fail(code: int, exc: Exception) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)})
                     + "\n")
    sys.exit(code)


def wrap_errors(fn):
    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NETWORK_ERRORS as exc:
            _fail(4, exc)
        except _DATA_ERRORS as exc:
            _fail(3, exc)

    return inner


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _parse_window_hours(text: str) -> float:
    t = text.strip().lower()
    if t.endswith("h"):
        return float(t[:-1])
    if t.endswith("m"):
        return float(t[:-1]) / 60.0
    if t.endswith("s"):
        return float(t[:-1]) / 3600.0
    return float(t)


@click.group()
@click.option("--config", "config_path", envvar="PUMPWATCH_CONFIG",
              type=click.Path(exists=True), default=None,
              help="TOML file with default settings.")
@click.pass_context
def main(ctx, config_path):
    """Pump-and-dump detection over exchange trade ticks."""
    ctx.obj = _load_toml(config_path) if config_path else {}


def _default(ctx, section: str, key: str, value, fallback):
    if value is not None:
        return value
    return (ctx.obj or {}).get(section, {}).get(key, fallback)


@main.command()
@click.option("--pair", required=True)
@click.option("--start", required=True, help="epoch-ms or ISO-8601 UTC")
@click.option("--end", required=True, help="epoch-ms or ISO-8601 UTC")
@click.option("--config", "exchange_config", type=click.Path(exists=True),
              help="exchange TOML (base_url, page_size, rate limit, ...)")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
@wrap_errors
def fetch(ctx, pair, start, end, exchange_config, out_path):
    """Fetch historical trades from the exchange API into a CSV."""
    if exchange_config:
        cfg_dict = _load_toml(exchange_config)
    else:
        cfg_dict = (ctx.obj or {}).get("exchange")
        if not cfg_dict:
            raise errs.ConfigError("no exchange config (--config or [exchange] section)")
    client = ExchangeClient(ExchangeConfig.from_dict(cfg_dict))
    batch, manifest = fetch_historical(pair, parse_time_ms(start),
                                       parse_time_ms(end), client)
    Path(out_path).write_text(serialize_trades(batch), encoding="utf-8")
    click.echo(json.dumps({"pair": manifest.pair, "trades": len(batch),
                           "checksum": manifest.checksum}))


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--chunk", "chunk_seconds", type=int, default=None)
@click.option("--window", default=None, help="e.g. 7h, 35m, or hours as a number")
@click.option("--features-out", required=True, type=click.Path())
@click.option("--events", "events_path", type=click.Path(exists=True), default=None,
              help="optional pump manifest; labels the feature rows")
@click.option("--pair", default="")
@click.pass_context
@wrap_errors
def ingest(ctx, in_path, chunk_seconds, window, features_out, events_path, pair):
    """Parse a trade file, chunk it, and dump the moving-window features."""
    chunk_seconds = int(_default(ctx, "ingest", "chunk_seconds", chunk_seconds, 25))
    window = _default(ctx, "ingest", "window", window, "7h")
    cfg = WindowConfig(chunk_seconds=chunk_seconds,
                       window_hours=_parse_window_hours(str(window)))
    text = Path(in_path).read_text(encoding="utf-8")
    fmt = TradeFormat.JSON_LINES if in_path.endswith((".jsonl", ".ndjson")) else TradeFormat.CSV
    trades = parse_trades(text, fmt, pair=pair)
    if len(trades) == 0:
        frame = compute_features(
            chunk_stream(trades, infer_rush_orders(trades), cfg, 0), cfg)
        labels = None
    else:
        origin = (int(trades.ts[0]) // cfg.chunk_ms) * cfg.chunk_ms
        rush = infer_rush_orders(trades)
        chunks = chunk_stream(trades, rush, cfg, origin)
        frame = compute_features(chunks, cfg)
        labels = None
        if events_path:
            events = read_events_csv(Path(events_path).read_text(encoding="utf-8"))
            signals = [e.signal_timestamp for e in events
                       if not pair or e.pair == pair]
            labels = label_chunks(frame, signals, origin)
    with open(features_out, "w", encoding="utf-8") as fh:
        write_features_csv(fh, frame, labels)
    click.echo(json.dumps({"chunks": len(frame), "trades": len(trades)}))


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--truth", "truth_path", required=True, type=click.Path())
@wrap_errors
def synth(scenario_path, seed, out_path, truth_path):
    """Generate a synthetic stream plus its ground-truth event manifest."""
    sc = load_scenario(scenario_path)
    batch, event = generate(sc, seed)
    Path(out_path).write_text(serialize_trades(batch), encoding="utf-8")
    with open(truth_path, "w", encoding="utf-8") as fh:
        write_events_csv(fh, [event])
    click.echo(json.dumps({"trades": len(batch), "pair": sc.pair,
                           "injection_time": sc.injection_time}))


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--events", "events_path", type=click.Path(exists=True), default=None)
@click.option("--model", "model_kind", type=click.Choice(["rf", "ada"]), default="rf")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pair", default="")
@click.option("--crowd", is_flag=True, help="drop time features (crowd-pump model)")
@click.option("--trees", type=int, default=200)
@click.option("--depth", type=int, default=5)
@click.option("--rounds", type=int, default=50)
@click.option("--window", default="7h", help="window used when features were made")
@wrap_errors
def train(features_path, events_path, model_kind, seed, out_path, pair, crowd,
          trees, depth, rounds, window):
    """Train a detector model from a labeled feature dump."""
    frame, labels = read_features_csv(Path(features_path).read_text(encoding="utf-8"),
                                      pair=pair)
    if events_path:
        events = read_events_csv(Path(events_path).read_text(encoding="utf-8"))
        signals = [e.signal_timestamp for e in events if not pair or e.pair == pair]
        labels = label_chunks(frame, signals, int(frame.starts[0]) if len(frame) else 0)
    if labels is None:
        raise errs.ConfigError("no labels: pass --events or a labeled feature file")
    window_hours = _parse_window_hours(str(window))
    names = CROWD_FEATURE_NAMES if crowd else FEATURE_NAMES
    wc = WindowConfig(chunk_seconds=frame.chunk_seconds or 25, window_hours=window_hours)
    X, y = training_rows_from_frame(frame, labels, wc.window_chunks, names)
    meta = {"window_hours": window_hours, "chunk_seconds": wc.chunk_seconds,
            "crowd": bool(crowd)}
    if model_kind == "rf":
        model = train_forest(X, y, ForestConfig(n_trees=trees, max_depth=depth),
                             seed, feature_names=names, meta=meta)
    else:
        model = train_adaboost(X, y, rounds, seed, depth, feature_names=names,
                               meta=meta)
    save_model(model, out_path)
    click.echo(json.dumps({"kind": model.kind, "rows": int(len(y)),
                           "positives": int(y.sum()), "out": str(out_path)}))


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--trades-dir", required=True, type=click.Path(exists=True))
@click.option("--model", "model_kind",
              type=click.Choice(["rf", "ada", "threshold", "kamps"]), default="rf")
@click.option("--k", type=int, default=5)
@click.option("--chunk", "chunk_seconds", type=int, default=25)
@click.option("--window", default="7h")
@click.option("--seed", type=int, default=0)
@click.option("--trees", type=int, default=200)
@click.option("--depth", type=int, default=5)
@click.option("--rounds", type=int, default=50)
@click.option("--cooldown", type=int, default=DEFAULT_COOLDOWN_S)
@click.option("--match-tolerance-chunks", type=int, default=2)
@click.option("--kamps-level", type=click.Choice(["initial", "balanced", "strict"]),
              default="strict")
@click.option("--kamps-config", "kamps_toml", type=click.Path(exists=True), default=None)
@click.option("--json-out", type=click.Path(), default=None)
@wrap_errors
def evaluate(events_path, trades_dir, model_kind, k, chunk_seconds, window, seed,
             trees, depth, rounds, cooldown, match_tolerance_chunks,
             kamps_level, kamps_toml, json_out):
    """K-fold cross-validated detector evaluation over an event manifest.

    trades-dir holds one <PAIR>.csv per trading pair.
    """
    events = read_events_csv(Path(events_path).read_text(encoding="utf-8"))
    cfg = WindowConfig(chunk_seconds=chunk_seconds,
                       window_hours=_parse_window_hours(str(window)))
    trades_by_pair = {}
    for pair in sorted({e.pair for e in events}):
        path = Path(trades_dir) / f"{pair}.csv"
        if not path.exists():
            raise errs.InsufficientCoverage(pair, f"missing {path}")
        trades_by_pair[pair] = parse_trades(path.read_text(encoding="utf-8"),
                                            TradeFormat.CSV, pair=pair)
    dataset = build_slices(events, trades_by_pair, cfg)
    if model_kind == "rf":
        det = ForestEvalDetector(ForestConfig(n_trees=trees, max_depth=depth),
                                 seed=seed, cooldown_seconds=cooldown)
    elif model_kind == "ada":
        det = AdaBoostEvalDetector(n_rounds=rounds, max_depth=depth, seed=seed,
                                   cooldown_seconds=cooldown)
    elif model_kind == "threshold":
        det = ThresholdEvalDetector(cooldown_seconds=cooldown)
    else:
        toml_dict = _load_toml(kamps_toml) if kamps_toml else None
        det = KampsEvalDetector(kamps_config(KampsLevel(kamps_level), toml_dict))
    report = kfold_evaluate(dataset, det, k=k, seed=seed,
                            match_tolerance_chunks=match_tolerance_chunks)
    click.echo(report.table())
    if json_out:
        Path(json_out).write_text(report.to_json(), encoding="utf-8")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--threshold", type=float, default=None,
              help="run the single-feature detector instead of a model")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--crowd", is_flag=True, help="10-minute chunks, 6-hour cooldown")
@click.option("--cooldown", type=int, default=None)
@click.option("--chunk", "chunk_seconds", type=int, default=None)
@click.option("--window", default=None)
@click.option("--alerts-out", type=click.Path(), default=None)
@click.option("--replay-speed", type=float, default=0.0,
              help="replay at N x wall-clock speed (0 = as fast as possible)")
@click.option("--pair", default="")
@wrap_errors
def detect(model_path, threshold, in_path, crowd, cooldown, chunk_seconds,
           window, alerts_out, replay_speed, pair):
    """Replay a trade file through a detector; alerts stream out as JSONL."""
    if (model_path is None) == (threshold is None):
        raise errs.ConfigError("pass exactly one of --model / --threshold")
    text = Path(in_path).read_text(encoding="utf-8")
    fmt = TradeFormat.JSON_LINES if in_path.endswith((".jsonl", ".ndjson")) else TradeFormat.CSV
    trades = parse_trades(text, fmt, pair=pair)

    model = load_model(model_path) if model_path else None
    meta = model.meta if model else {}
    window_hours = (_parse_window_hours(str(window)) if window
                    else float(meta.get("window_hours", 7.0)))
    if crowd:
        chunk_s = chunk_seconds or CROWD_CHUNK_S
        cooldown_s = cooldown if cooldown is not None else CROWD_COOLDOWN_S
    else:
        chunk_s = chunk_seconds or int(meta.get("chunk_seconds", 25))
        cooldown_s = cooldown if cooldown is not None else DEFAULT_COOLDOWN_S
    cfg = WindowConfig(chunk_seconds=chunk_s, window_hours=window_hours)

    det = StreamingDetector(cfg, model=model, threshold=threshold,
                            cooldown_seconds=cooldown_s, pair=pair or trades.pair)
    out = open(alerts_out, "w", encoding="utf-8") if alerts_out else sys.stdout
    try:
        n_alerts = 0

        def emit(alerts):
            nonlocal n_alerts
            for a in alerts:
                out.write(format_alert(a) + "\n")
                n_alerts += 1

        if replay_speed > 0 and len(trades):
            step_ms = cfg.chunk_ms
            t0 = int(trades.ts[0])
            t_end = int(trades.ts[-1])
            wall0 = _time.monotonic()
            for lo_ts in range(t0, t_end + step_ms, step_ms):
                batch = trades.time_window(lo_ts, lo_ts + step_ms)
                if len(batch):
                    emit(det.process_batch(batch))
                target = ((lo_ts + step_ms - t0) / 1000.0) / replay_speed
                delay = target - (_time.monotonic() - wall0)
                if delay > 0:
                    _time.sleep(delay)
        else:
            for lo in range(0, len(trades), 65536):
                emit(det.process_batch(trades.slice(lo, lo + 65536)))
        emit(det.finish())
    finally:
        if alerts_out:
            out.close()
    if alerts_out:
        click.echo(json.dumps({"alerts": n_alerts, "trades": len(trades)}))


if __name__ == "__main__":
    main()
