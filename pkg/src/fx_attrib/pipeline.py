"""End-to-end LSTM-RF-SHAP run and the report files it writes.

Stages:

1. load rates and build the shared trading calendar
2. train one forecaster per currency on the training span
3. roll one-step forecasts over the evaluation span (actual rates feed every window)
4. join forecasts with policy features of the prior trading day
5. fit the random forest on the evaluation instances
6. explain every instance with TreeSHAP
7. label directions, compute metrics and largest-contribution counts
8. write the report files

The forest is fitted and explained on the same evaluation span: the aim is to
explain what the model learned, not to forecast out of sample.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import arima as arima_mod
from . import lstm as lstm_mod
from .errors import ConfigError, DataError, FxAttribError, NumericError, StageError
from .evaluation import (
    ContributionCount, MetricsReport, label_directions,
    largest_contribution_counts, price_metrics,
)
from .forest import Forest, ForestConfig, fit_forest, parallel_map, predict
from .market_data import (
    RateSeries, TradingCalendar, build_calendar, load_rate_series, to_log_returns, window_samples,
)
from .policy import (
    DEFAULT_COUNTRY_MAP, FEATURE_NAMES, ModelInstance, PolicyTable, assemble_instances,
    feature_map_for, load_policy_records,
)
from .treeshap import Attribution, explain_batch

log = logging.getLogger(__name__)

FORECASTERS = ("lstm", "arima")
ABLATIONS = ("two-stage", "rf-only")
RF_SCOPES = ("pooled", "per-currency")
MODEL_TAGS = {"lstm": "LSTM-RF", "arima": "ARIMA-RF", "rf-only": "RF"}
OUTPUT_FILES = ("predictions.csv", "attributions.csv", "metrics.json", "contribution_counts.csv")
MANIFEST = "manifest.json"
TIMINGS = "timings.json"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.10g}"


def _round(v: float) -> float:
    return float(f"{v:.10g}")


def parse_span(text: str) -> tuple[dt.date, dt.date]:
    try:
        a, b = text.split("..")
        start, end = dt.date.fromisoformat(a.strip()), dt.date.fromisoformat(b.strip())
    except ValueError:
        raise ConfigError(f"span must look like YYYY-MM-DD..YYYY-MM-DD, got {text!r}") from None
    if end < start:
        raise ConfigError(f"span {text!r} ends before it starts")
    return start, end


def derive_seed(master: int, *labels) -> int:
    """Stable 32-bit sub-seed for a labelled stochastic step."""
    key = ":".join([str(master)] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


@dataclass
class PipelineConfig:
    rates_dir: Path
    policy_file: Path | None = None
    currencies: tuple[str, ...] = tuple(DEFAULT_COUNTRY_MAP)
    train_span: tuple[dt.date, dt.date] = (dt.date(2019, 1, 1), dt.date(2019, 12, 31))
    eval_span: tuple[dt.date, dt.date] = (dt.date(2020, 1, 1), dt.date(2021, 1, 13))
    window: int = 5
    forecaster: str = "lstm"
    ablation: str = "two-stage"
    rf_scope: str = "pooled"
    forest: ForestConfig = field(default_factory=ForestConfig)
    train: lstm_mod.TrainConfig = field(default_factory=lstm_mod.TrainConfig)
    arima_grid: tuple = arima_mod.DEFAULT_GRID
    seed: int = 0
    out: Path = Path("out")
    country_map: dict = field(default_factory=lambda: dict(DEFAULT_COUNTRY_MAP))

    def __post_init__(self):
        self.rates_dir = Path(self.rates_dir)
        self.policy_file = Path(self.policy_file) if self.policy_file else None
        self.out = Path(self.out)
        self.currencies = tuple(c.upper() for c in self.currencies)
        if self.forecaster not in FORECASTERS:
            raise ConfigError(f"forecaster must be one of {FORECASTERS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if self.rf_scope not in RF_SCOPES:
            raise ConfigError(f"rf scope must be one of {RF_SCOPES}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.train_span[1] < self.eval_span[0]:
            raise ConfigError("training span must end before the evaluation span starts")
        if not self.currencies:
            raise ConfigError("no currencies configured")

    def echo(self) -> dict:
        """Configuration as JSON-ready data (the output directory is left out)."""
        return {
            "rates_dir": str(self.rates_dir),
            "policy_file": str(self.policy_file) if self.policy_file else None,
            "currencies": list(self.currencies),
            "train_span": [d.isoformat() for d in self.train_span],
            "eval_span": [d.isoformat() for d in self.eval_span],
            "window": self.window,
            "forecaster": self.forecaster,
            "ablation": self.ablation,
            "rf_scope": self.rf_scope,
            "forest": asdict(self.forest),
            "train": asdict(self.train),
            "arima_grid": [list(o) for o in self.arima_grid],
            "seed": self.seed,
            "country_map": {c: self.country_map[c] for c in self.currencies if c in self.country_map},
        }


@dataclass
class Forecasts:
    """Per-currency first-stage output: predicted returns and rates by target date."""

    returns: dict[dt.date, float] = field(default_factory=dict)
    rates: dict[dt.date, float] = field(default_factory=dict)
    window_dates: dict[dt.date, tuple] = field(default_factory=dict)
    dropped: list[dt.date] = field(default_factory=list)


@dataclass
class ModelRun:
    """Stages 5-7 for one family of instances."""

    tag: str
    instances: list[ModelInstance]
    forests: dict[str, Forest]
    predictions: np.ndarray
    attributions: list[Attribution] | None = None
    outcomes: list = field(default_factory=list)


@dataclass
class RunResult:
    config: PipelineConfig
    calendar: TradingCalendar
    forecasts: dict[str, dict[str, Forecasts]]
    primary: ModelRun
    secondary: ModelRun | None
    metrics: list[MetricsReport]
    counts: list[ContributionCount]
    violations: list[str]
    manifest: dict
    timings: dict
    files: dict[str, Path] = field(default_factory=dict)


# ------------------------------------------------------------------ stages

def load_rates(config: PipelineConfig) -> dict[str, RateSeries]:
    if not config.rates_dir.is_dir():
        raise DataError(f"rates directory not found: {config.rates_dir}")
    out = {}
    for cur in config.currencies:
        path = config.rates_dir / f"{cur}_USD.csv"
        if not path.is_file():
            raise DataError(f"rate file not found: {path}")
        out[cur] = load_rate_series(path, cur)
    return out


def train_forecasters(series: dict[str, RateSeries], calendar: TradingCalendar,
                      config: PipelineConfig) -> dict[str, dict]:
    """Fit the LSTM (with its scaler) and the ARIMA baseline per currency."""
    start, end = config.train_span
    train_days = calendar.between(start, end)
    if len(train_days) <= config.window:
        raise DataError(f"training span has {len(train_days)} trading days; need more than {config.window}")
    train_cal = TradingCalendar(tuple(train_days))

    def one(cur):
        s = series[cur].restrict(train_days)
        samples = window_samples(s, train_cal, config.window)
        scaler = lstm_mod.Scaler.fit(s.rates)
        tc = replace(config.train, seed=derive_seed(config.seed, "lstm", cur), window=config.window)
        params = lstm_mod.init_parameters(tc)
        result = lstm_mod.train(params, samples, scaler, tc)
        model = arima_mod.fit_arima(s.rates, config.arima_grid)
        log.info("%s: LSTM loss %.3g -> %.3g, ARIMA%s", cur, result.losses[0], result.losses[-1], model.order)
        return cur, {"lstm": (result.params, scaler), "arima": model, "loss": result.losses}

    return dict(parallel_map(one, config.currencies))


def eval_targets(calendar: TradingCalendar, config: PipelineConfig) -> list[dt.date]:
    """Evaluation dates with a full window of earlier trading days."""
    start, end = config.eval_span
    return [d for d in calendar.between(start, end) if calendar.position(d) >= config.window]


def roll_forecasts(series: dict[str, RateSeries], calendar: TradingCalendar, models: dict,
                   targets: Sequence[dt.date], config: PipelineConfig) -> dict[str, dict[str, Forecasts]]:
    out: dict[str, dict[str, Forecasts]] = {"lstm": {}, "arima": {}}
    for cur in config.currencies:
        aligned = series[cur].restrict(calendar.dates)
        lstm_fc = Forecasts()
        params, scaler = models[cur]["lstm"]
        for sample in window_samples(aligned, calendar, config.window, targets):
            try:
                point = lstm_mod.predict_rate(params, scaler, sample.window, sample.last_rate, sample.target_date)
            except NumericError:
                lstm_fc.dropped.append(sample.target_date)
                continue
            lstm_fc.returns[sample.target_date] = point.predicted_return
            lstm_fc.rates[sample.target_date] = point.predicted_rate
            lstm_fc.window_dates[sample.target_date] = sample.window_dates
        out["lstm"][cur] = lstm_fc

        model = models[cur]["arima"]
        arima_fc = Forecasts()
        if targets:
            first = calendar.position(targets[0])
            preds = arima_mod.rolling_forecasts(model, aligned.rates, first)
            wanted = set(targets)
            for k, t in enumerate(range(first, len(calendar))):
                day = calendar.dates[t]
                if day not in wanted:
                    continue
                rate = float(preds[k])
                if not rate > 0:
                    arima_fc.dropped.append(day)
                    continue
                arima_fc.rates[day] = rate
                arima_fc.returns[day] = math.log(rate / aligned.rates[t - 1])
                arima_fc.window_dates[day] = calendar.dates[max(0, t - config.window):t]
        out["arima"][cur] = arima_fc
    return out


def actual_return_forecasts(series: dict[str, RateSeries], calendar: TradingCalendar,
                            targets: Sequence[dt.date], config: PipelineConfig) -> dict[str, Forecasts]:
    """First feature for the RF-only ablation: the last realised log return before each target."""
    out = {}
    for cur in config.currencies:
        aligned = series[cur].restrict(calendar.dates)
        fc = Forecasts()
        for day in targets:
            t = calendar.position(day)
            fc.returns[day] = math.log(aligned.rates[t - 1] / aligned.rates[t - 2])
            fc.window_dates[day] = calendar.dates[max(0, t - config.window):t]
        out[cur] = fc
    return out


def build_instances(series: dict[str, RateSeries], calendar: TradingCalendar,
                    forecasts: dict[str, Forecasts], policy: PolicyTable,
                    config: PipelineConfig) -> list[ModelInstance]:
    instances = []
    for cur in config.currencies:
        country = config.country_map.get(cur)
        if country is None:
            raise ConfigError(f"no country mapping for currency {cur}")
        fc = forecasts[cur]
        prev_days = sorted({calendar.previous(d) for d in fc.returns if calendar.previous(d) is not None})
        fmap = feature_map_for(policy, country, prev_days)
        aligned = series[cur].restrict(calendar.dates)
        rates = dict(zip(calendar.dates, aligned.rates.tolist()))
        instances += assemble_instances(cur, calendar, fc.returns, to_log_returns(aligned), fmap,
                                        rates, fc.window_dates)
    return instances


def audit_temporal_hygiene(instances: Sequence[ModelInstance]) -> list[str]:
    """Every input date must precede the instance's target date."""
    bad = []
    for inst in instances:
        for d in inst.source_dates + (inst.feature_date,):
            if d >= inst.target_date:
                bad.append(f"{inst.currency} {inst.target_date}: input dated {d}")
    return bad


def fit_and_explain(tag: str, instances: list[ModelInstance], forest_config: ForestConfig,
                    scope: str = "pooled", explain: bool = True) -> ModelRun:
    """Stages 5-7 on a set of instances: forest fit, TreeSHAP, direction labels."""
    if not instances:
        raise DataError(f"{tag}: no instances to fit")
    groups = {"*": list(range(len(instances)))}
    if scope == "per-currency":
        groups = {}
        for i, inst in enumerate(instances):
            groups.setdefault(inst.currency, []).append(i)
    X = np.stack([inst.features for inst in instances])
    y = np.array([inst.actual_return for inst in instances])
    preds = np.zeros(len(instances))
    attrs: list = [None] * len(instances)
    forests = {}
    for key, rows in groups.items():
        cfg = replace(forest_config, seed=derive_seed(forest_config.seed, tag, key))
        forest = fit_forest(X[rows], y[rows], cfg)
        forests[key] = forest
        preds[rows] = predict(forest, X[rows])
        if explain:
            for i, a in zip(rows, explain_batch(forest, X[rows])):
                inst = instances[i]
                attrs[i] = replace(a, currency=inst.currency, target_date=inst.target_date)
    outcomes = label_directions(y, preds, [inst.target_date for inst in instances])
    return ModelRun(tag, instances, forests, preds, attrs if explain else None, outcomes)


def metrics_for(run: ModelRun, currencies: Sequence[str]) -> list[MetricsReport]:
    out = []
    for cur in currencies:
        rows = [i for i, inst in enumerate(run.instances) if inst.currency == cur]
        if not rows:
            continue
        out.append(price_metrics(
            cur, run.tag,
            [run.instances[i].last_rate for i in rows],
            [run.instances[i].actual_rate for i in rows],
            run.predictions[rows],
        ))
    return out


def counts_for(run: ModelRun, currencies: Sequence[str]) -> list[ContributionCount]:
    out = []
    for cur in currencies:
        rows = [i for i, inst in enumerate(run.instances) if inst.currency == cur]
        out += largest_contribution_counts([run.attributions[i] for i in rows],
                                           [run.outcomes[i] for i in rows], cur)
    return out


# ------------------------------------------------------------------ output

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def report_texts(result: RunResult) -> dict[str, str]:
    primary = result.primary
    fc = result.forecasts
    pred_rows = []
    for i, inst in enumerate(primary.instances):
        rf_rate = inst.last_rate * math.exp(primary.predictions[i])
        lstm_rate = fc.get("lstm", {}).get(inst.currency, Forecasts()).rates.get(inst.target_date)
        arima_rate = fc.get("arima", {}).get(inst.currency, Forecasts()).rates.get(inst.target_date)
        pred_rows.append((inst.target_date.isoformat(), inst.currency, _fmt(inst.actual_rate),
                          _fmt(lstm_rate), _fmt(rf_rate), _fmt(arima_rate)))
    names = [n.lower() if n == "LSTM" else n for n in FEATURE_NAMES]
    attr_header = (["date", "currency", "phi0"] + [f"phi_{n}" for n in names]
                   + [f"norm_{n}" for n in names] + ["predicted_direction", "actual_direction", "correct"])
    attr_rows = []
    for inst, a, o in zip(primary.instances, primary.attributions, primary.outcomes):
        attr_rows.append([inst.target_date.isoformat(), inst.currency, _fmt(a.base_value)]
                         + [_fmt(v) for v in a.phis] + [_fmt(v) for v in a.normalized]
                         + [o.predicted, o.actual, str(o.correct).lower()])
    metrics = [{k: (_round(v) if isinstance(v, float) else v) for k, v in m.as_dict().items()}
               for m in result.metrics]
    return {
        "predictions.csv": _csv_text(
            ["date", "currency", "actual_rate", "lstm_rate", "rf_rate", "arima_rate"], pred_rows),
        "attributions.csv": _csv_text(attr_header, attr_rows),
        "metrics.json": json.dumps(metrics, indent=2) + "\n",
        "contribution_counts.csv": _csv_text(
            ["currency", "direction", "feature", "count"],
            [(c.currency, c.direction, c.feature, c.count) for c in result.counts]),
    }


def emit_reports(result: RunResult, directory: Path) -> dict[str, Path]:
    """Write the four report files plus the manifest; remove them all on failure."""
    directory = Path(directory)
    written: list[Path] = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for name, text in report_texts(result).items():
            path = directory / name
            path.write_text(text, encoding="utf-8")
            written.append(path)
        result.manifest["outputs"] = {p.name: _sha256(p) for p in written}
        manifest = directory / MANIFEST
        manifest.write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(manifest)
        timings = directory / TIMINGS
        timings.write_text(json.dumps(result.timings, indent=2) + "\n", encoding="utf-8")
        written.append(timings)
    except OSError as exc:
        for p in written:
            p.unlink(missing_ok=True)
        raise DataError(f"could not write {getattr(exc, 'filename', None) or directory}: {exc.strerror}") from exc
    return {p.name: p for p in written}


# ------------------------------------------------------------------ driver

def run(config: PipelineConfig, write: bool = True) -> RunResult:
    """Execute every stage; failures are re-raised as :class:`StageError`."""
    timings: dict[str, float] = {}
    def stage(n, name, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        except StageError:
            raise
        except (FxAttribError, ValueError, OSError) as exc:
            raise StageError(n, exc) from exc
        finally:
            timings[f"{n}-{name}"] = round(time.perf_counter() - t0, 3)

    def load():
        series = load_rates(config)
        calendar = build_calendar(series.values(), config.train_span[0], config.eval_span[1])
        policy = load_policy_records(config.policy_file) if config.policy_file else None
        if policy is None:
            raise DataError("a policy file is required")
        return series, calendar, policy

    series, calendar, policy = stage(1, "load", load)
    targets = eval_targets(calendar, config)
    two_stage = config.ablation == "two-stage"

    if two_stage:
        models = stage(2, "train", train_forecasters, series, calendar, config)
        forecasts = stage(3, "forecast", roll_forecasts, series, calendar, models, targets, config)
    else:
        models = {}
        forecasts = {"rf-only": stage(3, "forecast", actual_return_forecasts, series, calendar,
                                      [d for d in targets if calendar.position(d) >= 2], config)}
    primary_key = config.forecaster if two_stage else "rf-only"
    if not any(fc.returns for fc in forecasts[primary_key].values()):
        raise StageError(3, DataError("no predictable dates in the evaluation span"))

    def assemble():
        sets = {k: build_instances(series, calendar, forecasts[k], policy, config) for k in forecasts}
        return sets, audit_temporal_hygiene([i for s in sets.values() for i in s])

    instance_sets, violations = stage(4, "features", assemble)
    if violations:
        raise StageError(4, DataError(f"{len(violations)} temporal-hygiene violations, e.g. {violations[0]}"))

    forest_cfg = replace(config.forest, seed=derive_seed(config.seed, "forest"))
    primary = stage(5, "forest+explain", fit_and_explain, MODEL_TAGS[primary_key],
                    instance_sets[primary_key], forest_cfg, config.rf_scope, True)
    secondary = None
    if two_stage:
        other = "arima" if primary_key == "lstm" else "lstm"
        secondary = stage(5, "forest-baseline", fit_and_explain, MODEL_TAGS[other],
                          instance_sets[other], forest_cfg, config.rf_scope, False)

    def evaluate():
        runs = [primary] + ([secondary] if secondary else [])
        metrics = [m for r in runs for m in metrics_for(r, config.currencies)]
        metrics.sort(key=lambda m: (m.currency, m.model))
        return metrics, counts_for(primary, config.currencies)

    metrics, counts = stage(7, "evaluate", evaluate)

    inputs = {f"{c}_USD.csv": _sha256(config.rates_dir / f"{c}_USD.csv") for c in config.currencies}
    inputs[config.policy_file.name] = _sha256(config.policy_file)
    manifest = {
        "config": config.echo(),
        "inputs": inputs,
        "seeds": {
            "master": config.seed,
            "forest": forest_cfg.seed,
            **{f"lstm:{c}": derive_seed(config.seed, "lstm", c) for c in config.currencies if two_stage},
        },
        "calendar_days": len(calendar),
        "instances": {MODEL_TAGS[k]: len(v) for k, v in instance_sets.items()},
        "forecasters_trained": len(models),
        "forests_trained": len(primary.forests) + (len(secondary.forests) if secondary else 0),
        "dropped_forecasts": {
            f"{k}:{c}": len(fc.dropped) for k, per in forecasts.items() for c, fc in per.items() if fc.dropped
        },
        "temporal_violations": len(violations),
        "policy_gaps": len(policy.gaps),
    }
    if two_stage:
        manifest["arima_orders"] = {c: list(models[c]["arima"].order) for c in config.currencies}
    result = RunResult(config, calendar, forecasts, primary, secondary, metrics, counts,
                       violations, manifest, timings)
    if write:
        result.files = stage(8, "emit", emit_reports, result, config.out)
    return result
