"""Exchange-rate loading, the shared trading calendar, log returns and windows."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class RateSeries:
    """Dated USD quotes for one currency.

    ``dates`` is strictly increasing and every rate is strictly positive.
    """

    currency: str
    dates: tuple[dt.date, ...]
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=np.float64)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != len(rates):
            raise DataError(f"{self.currency}: {len(self.dates)} dates but {len(rates)} rates")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError(f"{self.currency}: dates are not strictly increasing")
        if not np.all(np.isfinite(rates)) or np.any(rates <= 0):
            raise DataError(f"{self.currency}: rates must be finite and positive")

    def __len__(self):
        return len(self.dates)

    def rate_on(self, day: dt.date) -> float:
        return float(self.rates[self._index()[day]])

    def _index(self) -> dict[dt.date, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {d: i for i, d in enumerate(self.dates)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def restrict(self, dates: Iterable[dt.date]) -> "RateSeries":
        """Series reduced to ``dates`` (each must be present)."""
        idx = self._index()
        dates = list(dates)
        missing = [d for d in dates if d not in idx]
        if missing:
            raise DataError(f"{self.currency}: no quote on {missing[0].isoformat()}")
        return RateSeries(self.currency, dates, self.rates[[idx[d] for d in dates]])


@dataclass(frozen=True)
class ReturnSeries:
    currency: str
    dates: tuple[dt.date, ...]
    returns: np.ndarray

    def __len__(self):
        return len(self.dates)

    def as_dict(self) -> dict[dt.date, float]:
        return {d: float(r) for d, r in zip(self.dates, self.returns)}


@dataclass(frozen=True)
class TradingCalendar:
    dates: tuple[dt.date, ...]

    def __len__(self):
        return len(self.dates)

    def __iter__(self):
        return iter(self.dates)

    def __contains__(self, day):
        return day in self._positions()

    def position(self, day: dt.date) -> int:
        return self._positions()[day]

    def _positions(self) -> dict[dt.date, int]:
        pos = self.__dict__.get("_pos")
        if pos is None:
            pos = {d: i for i, d in enumerate(self.dates)}
            object.__setattr__(self, "_pos", pos)
        return pos

    def previous(self, day: dt.date) -> dt.date | None:
        """Trading day immediately before ``day`` (which must be in the calendar)."""
        i = self.position(day)
        return self.dates[i - 1] if i > 0 else None

    def between(self, start: dt.date, end: dt.date) -> list[dt.date]:
        return [d for d in self.dates if start <= d <= end]


@dataclass(frozen=True)
class WindowSample:
    currency: str
    window_dates: tuple[dt.date, ...]
    window: np.ndarray
    target_date: dt.date
    target: float

    @property
    def last_rate(self) -> float:
        return float(self.window[-1])


def parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def load_rate_series(path: str | Path, currency: str | None = None) -> RateSeries:
    """Read a ``date,rate`` file.

    The currency defaults to the ``<CUR>`` prefix of a ``<CUR>_USD.csv`` file name.
    Any malformed or non-positive row is an error; weekends are removed later
    by the calendar.
    """
    path = Path(path)
    if currency is None:
        currency = path.stem.split("_")[0].upper()
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty input")
    header = [c.strip().lower() for c in rows[0]]
    if header[:2] != ["date", "rate"]:
        raise DataError(f"{path}: expected header 'date,rate', got {','.join(rows[0])!r}")
    dates, rates = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2 or not row[1].strip():
            raise DataError(f"{path}:{lineno}: missing rate")
        try:
            day = parse_date(row[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed date {row[0]!r}") from None
        try:
            rate = float(row[1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed rate {row[1]!r}") from None
        if not math.isfinite(rate) or rate <= 0:
            raise DataError(f"{path}:{lineno}: rate must be positive, got {row[1]!r}")
        if dates and day <= dates[-1]:
            raise DataError(f"{path}:{lineno}: date {day} is not after {dates[-1]}")
        dates.append(day)
        rates.append(rate)
    if not dates:
        raise DataError(f"{path}: empty input")
    return RateSeries(currency, dates, np.array(rates))


def to_log_returns(series: RateSeries) -> ReturnSeries:
    if len(series) < 2:
        raise DataError(f"{series.currency}: need at least 2 observations for returns")
    logs = np.log(series.rates)
    return ReturnSeries(series.currency, series.dates[1:], np.diff(logs))


def build_calendar(
    series_set: Iterable[RateSeries],
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> TradingCalendar:
    """Dates quoted by every series, restricted to ``[start, end]``."""
    series_set = list(series_set)
    if not series_set:
        raise DataError("no rate series supplied")
    common = None
    for s in series_set:
        if len(s) == 0:
            raise DataError(f"{s.currency}: empty series")
        days = set(s.dates)
        common = days if common is None else common & days
    days = sorted(
        d for d in common
        if d.weekday() < 5 and (start is None or d >= start) and (end is None or d <= end)
    )
    if not days:
        raise DataError("empty trading calendar: the series share no dates in the span")
    return TradingCalendar(tuple(days))


def window_samples(
    series: RateSeries,
    calendar: TradingCalendar,
    n: int,
    targets: Sequence[dt.date] | None = None,
) -> list[WindowSample]:
    """One sample per calendar date that has ``n`` earlier trading days.

    When ``targets`` is given only those target dates are produced; windows
    still draw on the whole calendar for their history.
    """
    if n < 1:
        raise ValueError("window length must be >= 1")
    aligned = series.restrict(calendar.dates)
    rates = aligned.rates
    dates = calendar.dates
    wanted = None if targets is None else set(targets)
    out = []
    for i in range(n, len(dates)):
        if wanted is not None and dates[i] not in wanted:
            continue
        out.append(WindowSample(
            series.currency, dates[i - n:i], rates[i - n:i].copy(), dates[i], float(rates[i])
        ))
    return out
