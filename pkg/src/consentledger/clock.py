"""Injected wall clocks. Instants are integer seconds since the Unix epoch, UTC."""

from __future__ import annotations

import time
from datetime import datetime, timezone
from typing import Protocol

HOUR = 3600
DAY = 86400


class Clock(Protocol):
    def now(self) -> int: ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class FixedClock:
    """Manually driven clock for tests and replayable runs."""

    def __init__(self, start: int | str = 0) -> None:
        self._t = parse_instant(start) if isinstance(start, str) else int(start)

    def now(self) -> int:
        return self._t

    def set(self, instant: int | str) -> None:
        self._t = parse_instant(instant) if isinstance(instant, str) else int(instant)

    def advance(self, seconds: int = 1) -> int:
        self._t += int(seconds)
        return self._t


def parse_instant(text: str) -> int:
    """Parse an ISO-8601 instant (``Z`` or offset suffix; naive means UTC)."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        raise ValueError(f"not an ISO-8601 instant: {text!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_instant(instant: int) -> str:
    return datetime.fromtimestamp(instant, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
