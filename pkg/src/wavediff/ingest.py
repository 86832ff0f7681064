"""Minute-bar ingestion: CSV parsing, day validation, and channel derivation.

A trading day is 390 one-minute bars covering 09:30 through 15:59 local
exchange time. Days with missing minutes are rejected rather than repaired,
so everything downstream can assume fixed-length, gap-free series.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DataError

MINUTES_PER_DAY = 390
SESSION_OPEN = time(9, 30)
SESSION_LAST = time(15, 59)


@dataclass(frozen=True, slots=True)
class MinuteBar:
    """One minute of quotes and traded volume (closing snapshot of the bar)."""

    timestamp: datetime
    bid_close: float
    ask_close: float
    volume: float
    bid_open: float | None = None
    bid_high: float | None = None
    bid_low: float | None = None
    ask_open: float | None = None
    ask_high: float | None = None
    ask_low: float | None = None

    def check(self) -> None:
        if not (np.isfinite(self.bid_close) and self.bid_close > 0):
            raise DataError(f"bid_close must be finite and > 0, got {self.bid_close}")
        if not (np.isfinite(self.ask_close) and self.ask_close > 0):
            raise DataError(f"ask_close must be finite and > 0, got {self.ask_close}")
        if self.ask_close < self.bid_close:
            raise DataError(
                f"ask {self.ask_close} < bid {self.bid_close} at {self.timestamp}"
            )
        if not (np.isfinite(self.volume) and self.volume >= 0):
            raise DataError(f"volume must be finite and >= 0, got {self.volume}")


@dataclass(frozen=True)
class TradingDay:
    """Exactly 390 valid bars, one per session minute, strictly increasing."""

    date: date
    bars: tuple[MinuteBar, ...]

    def check(self) -> None:
        if len(self.bars) != MINUTES_PER_DAY:
            raise DataError(
                f"{self.date}: expected {MINUTES_PER_DAY} bars, got {len(self.bars)}"
            )
        expected = session_minutes(self.date)
        for bar, want in zip(self.bars, expected):
            if bar.timestamp != want:
                raise DataError(f"{self.date}: bar at {bar.timestamp}, expected {want}")
            bar.check()

    @classmethod
    def from_arrays(
        cls,
        day: date,
        bid_close: np.ndarray,
        ask_close: np.ndarray,
        volume: np.ndarray,
    ) -> "TradingDay":
        stamps = session_minutes(day)
        bars = tuple(
            MinuteBar(ts, float(b), float(a), float(v))
            for ts, b, a, v in zip(stamps, bid_close, ask_close, volume)
        )
        return cls(day, bars)


@dataclass(frozen=True)
class DaySeries:
    """The three derived channels of one trading day."""

    date: date
    mid: np.ndarray
    spread: np.ndarray
    volume: np.ndarray

    def check(self) -> None:
        n = len(self.mid)
        if not (len(self.spread) == len(self.volume) == n == MINUTES_PER_DAY):
            raise DataError(f"{self.date}: channel lengths differ or != {MINUTES_PER_DAY}")
        if not np.all(self.mid > 0):
            raise DataError(f"{self.date}: mid prices must be > 0")


@dataclass(frozen=True)
class ColumnMap:
    """Names of the required CSV columns; OHLC extensions are optional."""

    timestamp: str = "timestamp"
    bid_close: str = "bid_close"
    ask_close: str = "ask_close"
    volume: str = "volume"


@dataclass(frozen=True, slots=True)
class RowError:
    line: int
    reason: str


@dataclass(frozen=True, slots=True)
class Rejection:
    date: date
    reason: str


@dataclass
class ParseResult:
    days: list[TradingDay] = field(default_factory=list)
    row_errors: list[RowError] = field(default_factory=list)


def session_minutes(day: date) -> list[datetime]:
    start = datetime.combine(day, SESSION_OPEN)
    return [start + timedelta(minutes=i) for i in range(MINUTES_PER_DAY)]


def _parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.strip())


_OPTIONAL_COLUMNS = (
    "bid_open", "bid_high", "bid_low", "ask_open", "ask_high", "ask_low",
)


def parse_minute_bars(
    source: str | Path | TextIO | bytes,
    schema: ColumnMap | None = None,
) -> ParseResult:
    """Parse a minute-bar CSV into trading-day candidates.

    Rows outside the 09:30-15:59 session are discarded silently; rows that are
    present but invalid (bad numbers, ask < bid, negative volume) are recorded
    in ``row_errors`` and dropped. Candidate days may still be incomplete;
    run :func:`filter_complete_days` afterwards.
    """
    schema = schema or ColumnMap()
    if isinstance(source, bytes):
        stream: TextIO = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, (str, Path)):
        stream = open(source, "r", newline="")
    else:
        stream = source

    try:
        reader = csv.DictReader(stream)
        header = reader.fieldnames
        required = [schema.timestamp, schema.bid_close, schema.ask_close, schema.volume]
        if header is None or any(col not in header for col in required):
            raise DataError(
                f"CSV header {header} is missing required columns {required}"
            )
        has_optional = {c for c in _OPTIONAL_COLUMNS if c in header}

        result = ParseResult()
        per_day: dict[date, list[MinuteBar]] = {}
        for line_no, row in enumerate(reader, start=2):
            try:
                ts = _parse_timestamp(row[schema.timestamp])
                bid = float(row[schema.bid_close])
                ask = float(row[schema.ask_close])
                vol = float(row[schema.volume])
                extras = {c: float(row[c]) for c in has_optional if row.get(c)}
                bar = MinuteBar(ts, bid, ask, vol, **extras)
                bar.check()
            except (ValueError, KeyError, TypeError) as exc:
                result.row_errors.append(RowError(line_no, f"malformed row: {exc}"))
                continue
            except DataError as exc:
                result.row_errors.append(RowError(line_no, str(exc)))
                continue
            if not (SESSION_OPEN <= ts.time() <= SESSION_LAST):
                continue
            per_day.setdefault(ts.date(), []).append(bar)

        for day in sorted(per_day):
            bars = sorted(per_day[day], key=lambda b: b.timestamp)
            result.days.append(TradingDay(day, tuple(bars)))
        return result
    finally:
        if isinstance(source, (str, Path, bytes)):
            stream.close()


def filter_complete_days(
    days: Iterable[TradingDay],
) -> tuple[list[TradingDay], list[Rejection]]:
    """Keep only days with exactly one valid bar per session minute.

    A minute with zero volume but valid quotes counts as present; only
    minutes absent from the feed (or duplicated) invalidate the day.
    """
    kept: list[TradingDay] = []
    rejected: list[Rejection] = []
    for day in days:
        stamps = [b.timestamp for b in day.bars]
        if len(day.bars) != MINUTES_PER_DAY:
            rejected.append(
                Rejection(day.date, f"{len(day.bars)} of {MINUTES_PER_DAY} minutes present")
            )
            continue
        if stamps != session_minutes(day.date):
            rejected.append(Rejection(day.date, "irregular or duplicated minutes"))
            continue
        try:
            day.check()
        except DataError as exc:
            rejected.append(Rejection(day.date, str(exc)))
            continue
        kept.append(day)
    return kept, rejected


def derive_series(day: TradingDay) -> DaySeries:
    """Mid = (bid+ask)/2, spread = ask-bid, volume copied through."""
    bid = np.array([b.bid_close for b in day.bars], dtype=np.float64)
    ask = np.array([b.ask_close for b in day.bars], dtype=np.float64)
    vol = np.array([b.volume for b in day.bars], dtype=np.float64)
    return DaySeries(day.date, mid=(bid + ask) / 2.0, spread=ask - bid, volume=vol)


def write_minute_bars(
    path: str | Path,
    days: Sequence[TradingDay],
    schema: ColumnMap | None = None,
) -> None:
    """Write trading days back out in the ingest CSV schema."""
    schema = schema or ColumnMap()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.timestamp, schema.bid_close, schema.ask_close, schema.volume])
        for day in days:
            for bar in day.bars:
                writer.writerow([
                    bar.timestamp.isoformat(sep=" "),
                    repr(bar.bid_close),
                    repr(bar.ask_close),
                    repr(bar.volume),
                ])


def write_rejections(path: str | Path, rejections: Sequence[Rejection]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "reason"])
        for rej in rejections:
            writer.writerow([rej.date.isoformat(), rej.reason])


def load_day_series(path: str | Path, schema: ColumnMap | None = None) -> list[DaySeries]:
    """Parse, filter, and derive in one call; raises if nothing survives."""
    parsed = parse_minute_bars(path, schema)
    kept, _ = filter_complete_days(parsed.days)
    if not kept:
        raise DataError(f"{path}: no complete trading days")
    return [derive_series(day) for day in kept]
