"""Directional accuracy, MAE/RMSE, direction labels and largest-contribution counts."""

from __future__ import annotations

import datetime as dt
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .policy import EN_FEATURES, FEATURE_NAMES

APPRECIATION = "appreciation"
DEPRECIATION = "depreciation"
OTHER = "other"


@dataclass(frozen=True)
class MetricsReport:
    currency: str
    model: str
    da: float
    mae: float
    rmse: float
    n: int

    def as_dict(self):
        return {"currency": self.currency, "model": self.model, "DA": self.da,
                "MAE": self.mae, "RMSE": self.rmse, "N": self.n}


@dataclass(frozen=True)
class DirectionOutcome:
    target_date: dt.date | None
    predicted: str
    actual: str

    @property
    def correct(self) -> bool:
        return self.predicted == self.actual


@dataclass(frozen=True)
class ContributionCount:
    currency: str
    direction: str
    feature: str
    count: int


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise DataError("empty input")
    return y, y_hat


def directional_accuracy(actual, predicted) -> float:
    """Fraction of days where the forecast moves the same way as the market.

    ``actual`` holds N+1 prices y(0)..y(N); ``predicted`` holds N forecasts
    for y(1)..y(N), or N+1 values whose first entry is ignored. A day counts
    as correct when (y(t+1) - y(t)) * (yhat(t+1) - y(t)) >= 0.
    """
    y = np.asarray(actual, dtype=np.float64)
    y_hat = np.asarray(predicted, dtype=np.float64)
    if len(y_hat) == len(y):
        y_hat = y_hat[1:]
    if len(y) < 2 or len(y_hat) != len(y) - 1:
        raise DataError(f"need N+1 actual and N predicted prices, got {len(y)} and {len(y_hat)}")
    hits = (y[1:] - y[:-1]) * (y_hat - y[:-1]) >= 0
    return float(np.mean(hits))


def mae(actual, predicted) -> float:
    y, y_hat = _pair(actual, predicted)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(actual, predicted) -> float:
    y, y_hat = _pair(actual, predicted)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def direction_of(ret: float) -> str:
    return APPRECIATION if ret >= 0 else DEPRECIATION


def label_directions(actual_returns, predicted_returns, dates=None) -> list[DirectionOutcome]:
    actual_returns = list(actual_returns)
    predicted_returns = list(predicted_returns)
    if len(actual_returns) != len(predicted_returns):
        raise DataError("actual and predicted returns are not aligned")
    dates = list(dates) if dates is not None else [None] * len(actual_returns)
    return [DirectionOutcome(d, direction_of(p), direction_of(a))
            for d, a, p in zip(dates, actual_returns, predicted_returns)]


def price_metrics(currency: str, model: str, last_rates, actual_rates, predicted_returns) -> MetricsReport:
    """DA/MAE/RMSE on prices rebuilt as ``last_rate * exp(predicted_return)``.

    Each instance carries its own previous rate, so DA uses the per-day
    products directly rather than assuming a contiguous price path.
    """
    last = np.asarray(last_rates, dtype=np.float64)
    y = np.asarray(actual_rates, dtype=np.float64)
    y_hat = last * np.exp(np.asarray(predicted_returns, dtype=np.float64))
    if not (len(last) == len(y) == len(y_hat)) or len(y) == 0:
        raise DataError(f"{currency}/{model}: no aligned instances for metrics")
    da = float(np.mean((y - last) * (y_hat - last) >= 0))
    return MetricsReport(currency, model, da, mae(y, y_hat), rmse(y, y_hat), len(y))


def largest_contribution_counts(
    attributions: Sequence,
    outcomes: Sequence[DirectionOutcome],
    currency: str = "",
) -> list[ContributionCount]:
    """Count, per actual direction, which E/N feature dominates each correct instance.

    For each correct instance the feature with the largest ``|normalized phi|``
    among E1..N8 gets the instance (first listed wins a tie) when it is also
    the overall largest. Instances dominated by the LSTM or C1 feature, and
    degenerate all-zero attributions, go to the ``other`` bucket, so the
    counts per direction add up to the number of correct instances.
    """
    if len(attributions) != len(outcomes):
        raise DataError("attributions and outcomes are not aligned")
    en_pos = [FEATURE_NAMES.index(f) for f in EN_FEATURES]
    tally: Counter = Counter()
    for attr, outcome in zip(attributions, outcomes):
        if not outcome.correct:
            continue
        if attr.degenerate:
            tally[(outcome.actual, OTHER)] += 1
            continue
        mag = np.abs(np.asarray(attr.normalized, dtype=np.float64))
        overall = int(np.argmax(mag))
        best_en = en_pos[int(np.argmax(mag[en_pos]))]
        if overall in en_pos or mag[best_en] >= mag[overall]:
            tally[(outcome.actual, FEATURE_NAMES[best_en])] += 1
        else:
            tally[(outcome.actual, OTHER)] += 1
    out = []
    for direction in (APPRECIATION, DEPRECIATION):
        for feature in EN_FEATURES + (OTHER,):
            out.append(ContributionCount(currency, direction, feature, tally[(direction, feature)]))
    return out
