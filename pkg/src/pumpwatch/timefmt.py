"""Epoch-ms <-> ISO-8601 helpers. Everything internal is epoch-ms UTC."""

from __future__ import annotations

from datetime import datetime, timezone
from typing import Union


def parse_time_ms(value: Union[int, float, str]) -> int:
    """Accept epoch milliseconds or an ISO-8601 UTC timestamp."""
    if isinstance(value, (int, float)):
        return int(value)
    text = value.strip()
    if text.isdigit() or (text.startswith("-") and text[1:].isdigit()):
        return int(text)
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def to_iso(ms: int) -> str:
    stamp = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"
