"""COVID policy-tracker records and the 13-feature model instances.

Indicator levels are mapped onto the binary features as follows (this table is
the single place the mapping is defined):

=======  ===========================  =====================
feature  source indicator             active when
=======  ===========================  =====================
E1       income_support               level >= 1
E2       debt_relief                  level == 1
E3       debt_relief                  level == 2
N1       stay_home                    level == 1
N2       stay_home                    level >= 2
N3       workplace_closing            level == 1
N4       workplace_closing            level >= 2
N5       intl_travel                  level == 1
N6       intl_travel                  level == 2
N7       intl_travel                  level >= 3
N8       internal_movement            level >= 1
C1       new_cases                    sum over the 5 calendar days ending on the feature date
=======  ===========================  =====================
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .market_data import ReturnSeries, TradingCalendar, parse_date

POLICY_FEATURES = ("E1", "E2", "E3", "N1", "N2", "N3", "N4", "N5", "N6", "N7", "N8", "C1")
FEATURE_NAMES = ("LSTM",) + POLICY_FEATURES
EN_FEATURES = POLICY_FEATURES[:-1]
N_FEATURES = len(FEATURE_NAMES)

DEFAULT_COUNTRY_MAP = {
    "AUD": "AUS", "CAD": "CAN", "CHF": "CHE", "EUR": "DEU", "GBP": "GBR",
    "JPY": "JPN", "NOK": "NOR", "NZD": "NZL", "SEK": "SWE",
}

POLICY_COLUMNS = (
    "country_code", "date", "income_support", "debt_relief", "stay_home",
    "workplace_closing", "intl_travel", "internal_movement", "new_cases",
)
# indicator column -> highest valid level
_LEVELS = {
    "income_support": 2, "debt_relief": 2, "stay_home": 3,
    "workplace_closing": 3, "intl_travel": 4, "internal_movement": 2,
}
CASE_WINDOW = 5


@dataclass(frozen=True)
class PolicyRecord:
    country_code: str
    date: dt.date
    income_support: int = 0
    debt_relief: int = 0
    stay_home: int = 0
    workplace_closing: int = 0
    intl_travel: int = 0
    internal_movement: int = 0
    new_cases: float = 0.0

    def __post_init__(self):
        for name, top in _LEVELS.items():
            level = getattr(self, name)
            if not 0 <= level <= top:
                raise DataError(f"{self.country_code} {self.date}: {name}={level} outside 0..{top}")
        if self.new_cases < 0:
            raise DataError(f"{self.country_code} {self.date}: negative new_cases")


@dataclass
class PolicyTable:
    """Records keyed by (country, date), plus the cells that were defaulted."""

    records: dict[tuple[str, dt.date], PolicyRecord]
    gaps: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, key):
        return self.records[key]

    def __contains__(self, key):
        return key in self.records

    def countries(self) -> set[str]:
        return {c for c, _ in self.records}

    def record_on_or_before(self, country: str, day: dt.date, max_back: int = 7) -> PolicyRecord | None:
        for back in range(max_back + 1):
            rec = self.records.get((country, day - dt.timedelta(days=back)))
            if rec is not None:
                return rec
        return None

    def trailing_cases(self, country: str, day: dt.date) -> list[float]:
        """New cases on the five calendar days ending at ``day``; absent days count 0."""
        out = []
        for back in range(CASE_WINDOW - 1, -1, -1):
            rec = self.records.get((country, day - dt.timedelta(days=back)))
            out.append(rec.new_cases if rec is not None else 0.0)
        return out


def load_policy_records(path: str | Path) -> PolicyTable:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty input") from None
        missing = [c for c in POLICY_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        col = {name: header.index(name) for name in POLICY_COLUMNS}
        records: dict[tuple[str, dt.date], PolicyRecord] = {}
        gaps: list[tuple[int, str]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            row = row + [""] * (len(header) - len(row))
            country = row[col["country_code"]].strip().upper()
            try:
                day = parse_date(row[col["date"]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed date {row[col['date']]!r}") from None
            values = {}
            for name in list(_LEVELS) + ["new_cases"]:
                cell = row[col[name]].strip()
                if not cell:
                    gaps.append((lineno, name))
                    values[name] = 0
                    continue
                try:
                    num = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed {name} {cell!r}") from None
                if name == "new_cases":
                    values[name] = num
                elif num != int(num):
                    raise DataError(f"{path}:{lineno}: {name} must be an integer level")
                else:
                    values[name] = int(num)
            key = (country, day)
            if key in records:
                raise DataError(f"{path}:{lineno}: duplicate record for {country} {day}")
            try:
                records[key] = PolicyRecord(country, day, **values)
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return PolicyTable(records, gaps)


@dataclass(frozen=True)
class PolicyFeatureSet:
    values: tuple[float, ...]  # E1..E3, N1..N8, C1

    def __getitem__(self, name: str) -> float:
        return self.values[POLICY_FEATURES.index(name)]

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


def encode_features(record: PolicyRecord, trailing_cases: Sequence[float]) -> PolicyFeatureSet:
    if len(trailing_cases) != CASE_WINDOW:
        raise ValueError(f"trailing_cases must have {CASE_WINDOW} entries")
    r = record
    bits = (
        r.income_support >= 1,
        r.debt_relief == 1,
        r.debt_relief == 2,
        r.stay_home == 1,
        r.stay_home >= 2,
        r.workplace_closing == 1,
        r.workplace_closing >= 2,
        r.intl_travel == 1,
        r.intl_travel == 2,
        r.intl_travel >= 3,
        r.internal_movement >= 1,
    )
    return PolicyFeatureSet(tuple(float(b) for b in bits) + (float(sum(trailing_cases)),))


@dataclass(frozen=True)
class ModelInstance:
    currency: str
    target_date: dt.date
    features: np.ndarray
    actual_return: float
    last_rate: float
    actual_rate: float
    feature_date: dt.date
    # every date that fed the instance; used by the temporal-hygiene audit
    source_dates: tuple[dt.date, ...] = ()

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        assert feats.shape == (N_FEATURES,), feats.shape
        object.__setattr__(self, "features", feats)


def feature_map_for(
    table: PolicyTable,
    country: str,
    days: Sequence[dt.date],
) -> dict[dt.date, PolicyFeatureSet]:
    """Encoded features for each day, falling back to the latest earlier record."""
    if country not in table.countries():
        raise ConfigError(f"no policy records for country {country!r}")
    out = {}
    for day in days:
        rec = table.record_on_or_before(country, day)
        if rec is None:
            continue
        out[day] = encode_features(rec, table.trailing_cases(country, day))
    return out


def assemble_instances(
    currency: str,
    calendar: TradingCalendar,
    predicted_returns: Mapping[dt.date, float],
    actual_returns: ReturnSeries,
    feature_map: Mapping[dt.date, PolicyFeatureSet],
    rates: Mapping[dt.date, float] | None = None,
    window_dates: Mapping[dt.date, Sequence[dt.date]] | None = None,
) -> list[ModelInstance]:
    """Join first-stage returns with policy features dated the prior trading day."""
    actual = actual_returns.as_dict()
    instances, missing = [], []
    for day in sorted(predicted_returns):
        if day not in actual:
            continue
        prev = calendar.previous(day)
        if prev is None:
            continue
        feats = feature_map.get(prev)
        if feats is None:
            missing.append(day)
            continue
        vec = np.concatenate(([predicted_returns[day]], feats.as_array()))
        last_rate = rates[prev] if rates else float("nan")
        actual_rate = rates[day] if rates else float("nan")
        src = tuple(window_dates.get(day, ())) if window_dates else ()
        instances.append(ModelInstance(
            currency, day, vec, actual[day], last_rate, actual_rate, prev, src + (prev,)
        ))
    if missing:
        listed = ", ".join(d.isoformat() for d in missing[:10])
        raise DataError(f"{currency}: no policy features for the day before {listed}"
                        + (" ..." if len(missing) > 10 else ""))
    return instances
