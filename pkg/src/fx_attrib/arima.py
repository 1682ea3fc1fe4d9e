"""ARIMA(p, d, q) baseline fitted by conditional sum of squares.

Residuals follow the recursion

    e_t = w_t - c - sum_i phi_i w_{t-i} - sum_j theta_j e_{t-j}

on the d-times differenced series ``w`` with zero pre-sample residuals and the
first ``p`` observations used only as lags. Coefficients minimise the sum of
squared residuals by damped Gauss-Newton; the order with the smallest
``N * ln(SSE / N) + 2 * (p + q + 1)`` wins. Every order in a grid is scored on
the same ``N`` target observations so the criteria are comparable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import DataError, FitError

DEFAULT_GRID = tuple(itertools.product((0, 1, 2), (0, 1), (0, 1, 2)))
ROOT_MARGIN = 1e-3
MIN_LENGTH = 30


@dataclass(frozen=True)
class ArimaModel:
    order: tuple[int, int, int]
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    residual_variance: float
    aic: float
    sse: float = float("nan")
    nobs: int = 0

    @property
    def p(self):
        return self.order[0]

    @property
    def d(self):
        return self.order[1]

    @property
    def q(self):
        return self.order[2]


def _residuals(w: np.ndarray, p: int, q: int, params: np.ndarray) -> np.ndarray:
    c, phi, theta = params[0], params[1:1 + p], params[1 + p:1 + p + q]
    y = w[p:]
    pred = np.full(y.shape, c)
    for i in range(p):
        pred = pred + phi[i] * w[p - 1 - i:len(w) - 1 - i]
    # e_t + sum_j theta_j e_{t-j} = y_t - pred_t
    return lfilter([1.0], np.concatenate(([1.0], theta)), y - pred)


def _jacobian(w: np.ndarray, p: int, q: int, params: np.ndarray, e: np.ndarray) -> np.ndarray:
    theta = params[1 + p:1 + p + q]
    denom = np.concatenate(([1.0], theta))
    n = len(e)
    cols = [lfilter([1.0], denom, -np.ones(n))]
    for i in range(p):
        cols.append(lfilter([1.0], denom, -w[p - 1 - i:len(w) - 1 - i]))
    for j in range(q):
        lagged = np.concatenate((np.zeros(j + 1), e[:n - j - 1]))
        cols.append(lfilter([1.0], denom, -lagged))
    return np.column_stack(cols)


def _roots_ok(coefs: np.ndarray, sign: float) -> bool:
    """True when 1 + sign * sum_k coefs_k z^k has every root outside |z| = 1 + margin."""
    if len(coefs) == 0 or not np.any(coefs):
        return True
    poly = np.concatenate(([1.0], sign * np.asarray(coefs)))
    roots = np.roots(poly[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + ROOT_MARGIN))


def _initial_guess(w: np.ndarray, p: int, q: int) -> np.ndarray:
    params = np.zeros(1 + p + q)
    if p:
        # least-squares AR fit as a starting point
        y = w[p:]
        X = np.column_stack([np.ones(len(y))] + [w[p - 1 - i:len(w) - 1 - i] for i in range(p)])
        sol, *_ = np.linalg.lstsq(X, y, rcond=None)
        params[:1 + p] = sol
        if not _roots_ok(params[1:1 + p], -1.0):
            params[1:1 + p] *= 0.5
            params[0] = np.mean(w) * (1 - params[1:1 + p].sum())
    else:
        params[0] = np.mean(w)
    return params


def css_fit(w: np.ndarray, p: int, q: int, max_iter: int = 100, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Damped Gauss-Newton on the conditional sum of squares."""
    params = _initial_guess(w, p, q)
    e = _residuals(w, p, q, params)
    sse = float(e @ e)
    for _ in range(max_iter):
        J = _jacobian(w, p, q, params, e)
        step, *_ = np.linalg.lstsq(J, -e, rcond=None)
        damping = 1.0
        improved = False
        while damping > 1e-6:
            trial = params + damping * step
            ma_ok = _roots_ok(trial[1 + p:], 1.0)
            if ma_ok:
                e_new = _residuals(w, p, q, trial)
                sse_new = float(e_new @ e_new)
                if math.isfinite(sse_new) and sse_new <= sse:
                    improved = True
                    break
            damping *= 0.5
        if not improved:
            break
        gain = sse - sse_new
        params, e, sse = trial, e_new, sse_new
        if gain <= tol * max(sse, 1e-300):
            break
    return params, sse


def _difference(x: np.ndarray, d: int) -> np.ndarray:
    return np.diff(x, n=d) if d else x


def fit_order(series: Sequence[float], order: tuple[int, int, int], burn_in: int | None = None) -> ArimaModel:
    """Fit one order. ``burn_in`` leading observations serve only as lags, so
    the residual count is ``len(series) - burn_in`` (default ``p + d``)."""
    p, d, q = order
    if p < 0 or q < 0 or d not in (0, 1):
        raise ValueError(f"unsupported order {order}")
    x = np.asarray(series, dtype=np.float64)
    if burn_in is not None:
        if burn_in < p + d:
            raise ValueError("burn_in shorter than the order's lags")
        x = x[burn_in - p - d:]
    w = _difference(x, d)
    params, sse = css_fit(w, p, q)
    n = len(w) - p
    if not _roots_ok(params[1:1 + p], -1.0):
        raise FitError(f"order {order}: AR part is non-stationary")
    if not _roots_ok(params[1 + p:], 1.0):
        raise FitError(f"order {order}: MA part is non-invertible")
    if not sse > 0:
        # exact fit (e.g. a constant series); keep a tiny positive variance
        sse = np.finfo(float).tiny * n
    aic = n * math.log(sse / n) + 2 * (p + q + 1)
    return ArimaModel(order, params[1:1 + p].copy(), params[1 + p:].copy(), float(params[0]),
                      sse / n, aic, sse, n)


def fit_arima(series, order_grid: Iterable[tuple[int, int, int]] = DEFAULT_GRID) -> ArimaModel:
    """Fit every order in the grid and return the minimum-AIC model.

    Orders whose estimates are explosive or non-invertible are skipped; ties
    keep the first order in grid order.
    """
    x = np.asarray(getattr(series, "rates", series), dtype=np.float64)
    if len(x) < MIN_LENGTH:
        raise DataError(f"ARIMA needs at least {MIN_LENGTH} observations, got {len(x)}")
    grid = list(order_grid)
    if not grid:
        raise ValueError("empty order grid")
    burn_in = max(p + d for p, d, _ in grid)
    best, reasons = None, []
    for order in grid:
        try:
            model = fit_order(x, order, burn_in)
        except FitError as exc:
            reasons.append(str(exc))
            continue
        if best is None or model.aic < best.aic:
            best = model
    if best is None:
        raise FitError("every ARIMA order was discarded: " + "; ".join(reasons))
    return best


def residuals(model: ArimaModel, history: Sequence[float]) -> np.ndarray:
    """In-sample residuals of ``model`` on a raw (undifferenced) history."""
    w = _difference(np.asarray(history, dtype=np.float64), model.d)
    params = np.concatenate(([model.intercept], model.ar, model.ma))
    return _residuals(w, model.p, model.q, params)


def forecast_one(model: ArimaModel, history: Sequence[float], resid: Sequence[float] = ()) -> float:
    """One-step-ahead forecast from raw rates and the latest residuals.

    ``resid`` holds residuals of the differenced process, most recent last;
    if omitted they are reconstructed from ``history``.
    """
    x = np.asarray(history, dtype=np.float64)
    p, d, q = model.order
    if len(x) < p + d or len(x) == 0:
        raise DataError(f"need at least {max(p + d, 1)} observations for order {model.order}")
    resid = np.asarray(resid, dtype=np.float64)
    if q and len(resid) == 0:
        resid = residuals(model, x) if len(x) > p + d else np.zeros(0)
    if len(resid) < q:
        raise DataError(f"need {q} residuals, got {len(resid)}")
    w = _difference(x, d)
    pred = model.intercept
    for i in range(p):
        pred += model.ar[i] * w[len(w) - 1 - i]
    for j in range(q):
        pred += model.ma[j] * resid[len(resid) - 1 - j]
    return float(x[-1] + pred) if d else float(pred)


def rolling_forecasts(model: ArimaModel, rates: Sequence[float], start: int) -> np.ndarray:
    """Forecasts for ``rates[start:]``, each conditioned on actual rates before it."""
    x = np.asarray(rates, dtype=np.float64)
    resid = residuals(model, x)
    offset = model.d + model.p  # resid[k] belongs to x[k + offset]
    out = np.empty(len(x) - start)
    for k, t in enumerate(range(start, len(x))):
        r = resid[:max(t - offset, 0)]
        if model.q and len(r) < model.q:
            r = np.concatenate((np.zeros(model.q - len(r)), r))
        out[k] = forecast_one(model, x[:t], r)
    return out
