"""``fx-attrib`` command line.

Exit status: 0 on success, 1 on a domain error (bad data, failed stage),
2 on a usage error. Every pipeline flag can also come from ``--config``, a
flat ``key = value`` file using the flag names without dashes; flags given
on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import forest as forest_mod
from . import lstm as lstm_mod
from .errors import ConfigError, FxAttribError
from .evaluation import directional_accuracy, label_directions, mae, rmse
from .pipeline import (
    PipelineConfig, build_calendar, build_instances, derive_seed, eval_targets, fit_and_explain,
    load_rates, parse_span, roll_forecasts, run, train_forecasters,
)
from .policy import DEFAULT_COUNTRY_MAP, FEATURE_NAMES, ModelInstance, load_policy_records
from .treeshap import explain_batch

log = logging.getLogger("fx_attrib")

# flag -> (default, type, help); None defaults mean "required somewhere"
PIPELINE_FLAGS = {
    "rates-dir": (None, "path", "directory holding <CUR>_USD.csv rate files"),
    "policy-file": (None, "path", "policy-tracker table (csv)"),
    "currencies": (",".join(DEFAULT_COUNTRY_MAP), str, "comma-separated currency codes"),
    "train-span": ("2019-01-01..2019-12-31", str, "forecaster training span START..END"),
    "eval-span": ("2020-01-01..2021-01-13", str, "evaluation span START..END"),
    "window": (5, int, "window length in trading days"),
    "forecaster": ("lstm", str, "first-stage model: lstm or arima"),
    "ablation": ("two-stage", str, "two-stage or rf-only"),
    "rf-scope": ("pooled", str, "pooled or per-currency forests"),
    "trees": (200, int, "trees per forest"),
    "max-depth": (8, int, "maximum tree depth"),
    "min-leaf": (5, int, "minimum samples per leaf"),
    "max-features": (4, int, "features tried at each split"),
    "hidden-size": (16, int, "LSTM hidden units"),
    "epochs": (200, int, "LSTM training epochs"),
    "learning-rate": (1e-3, float, "LSTM Adam learning rate"),
    "country-map": ("", str, "overrides such as EUR:FRA,GBP:GBR"),
    "seed": (0, int, "master seed"),
    "out": ("out", "path", "output directory"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_pipeline_flags(p: argparse.ArgumentParser, names=None):
    p.add_argument("--config", type=Path, default=None, help="key=value config file (default: none)")
    for name in names or PIPELINE_FLAGS:
        default, kind, text = PIPELINE_FLAGS[name]
        conv = Path if kind == "path" else kind
        p.add_argument(f"--{name}", type=conv, default=None, help=f"{text} (default: {default})")


def read_config_file(path: Path) -> dict:
    """Parse a flat ``key = value`` file; relative paths resolve against its folder."""
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in PIPELINE_FLAGS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        default, kind, _ = PIPELINE_FLAGS[key]
        if kind == "path":
            p = Path(value)
            values[key] = p if p.is_absolute() else (path.parent / p)
        else:
            try:
                values[key] = kind(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def resolve_settings(args) -> dict:
    settings = {k: v[0] for k, v in PIPELINE_FLAGS.items()}
    if getattr(args, "config", None) is not None:
        settings.update(read_config_file(args.config))
    for key in PIPELINE_FLAGS:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            settings[key] = v
    return settings


def pipeline_config(settings: dict) -> PipelineConfig:
    if settings["rates-dir"] is None:
        raise ConfigError("--rates-dir is required")
    country_map = dict(DEFAULT_COUNTRY_MAP)
    for item in filter(None, str(settings["country-map"]).split(",")):
        cur, _, country = item.partition(":")
        if not country:
            raise UsageError(f"bad --country-map entry {item!r}; expected CUR:CTRY")
        country_map[cur.strip().upper()] = country.strip().upper()
    return PipelineConfig(
        rates_dir=Path(settings["rates-dir"]).resolve(),
        policy_file=Path(settings["policy-file"]).resolve() if settings["policy-file"] else None,
        currencies=tuple(c.strip() for c in str(settings["currencies"]).split(",") if c.strip()),
        train_span=parse_span(settings["train-span"]),
        eval_span=parse_span(settings["eval-span"]),
        window=settings["window"],
        forecaster=settings["forecaster"],
        ablation=settings["ablation"],
        rf_scope=settings["rf-scope"],
        forest=forest_mod.ForestConfig(
            tree_count=settings["trees"], max_depth=settings["max-depth"],
            min_leaf=settings["min-leaf"], max_features=settings["max-features"],
        ),
        train=lstm_mod.TrainConfig(
            hidden_size=settings["hidden-size"], epochs=settings["epochs"],
            learning_rate=settings["learning-rate"], window=settings["window"],
        ),
        seed=settings["seed"],
        out=Path(settings["out"]),
        country_map=country_map,
    )


# ------------------------------------------------------------------ instance files

INSTANCE_HEADER = (["date", "currency"] + [f"f_{n}" for n in FEATURE_NAMES]
                   + ["actual_return", "last_rate", "actual_rate"])


def write_instances(path: Path, instances) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INSTANCE_HEADER)
        for inst in instances:
            w.writerow([inst.target_date.isoformat(), inst.currency]
                       + [repr(float(v)) for v in inst.features]
                       + [repr(inst.actual_return), repr(inst.last_rate), repr(inst.actual_rate)])


def read_instances(path: Path) -> list[ModelInstance]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != INSTANCE_HEADER:
            raise ConfigError(f"{path}: not an instances file")
        for row in reader:
            day = dt.date.fromisoformat(row[0])
            vals = [float(v) for v in row[2:]]
            out.append(ModelInstance(row[1], day, np.array(vals[:13]), vals[13], vals[14], vals[15],
                                     day - dt.timedelta(days=1)))
    return out


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    cfg = pipeline_config(resolve_settings(args))
    result = run(cfg)
    print(f"wrote {len(result.files)} files to {cfg.out}")
    for m in result.metrics:
        print(f"  {m.currency} {m.model:9s} DA={m.da:.3f} MAE={m.mae:.6g} RMSE={m.rmse:.6g} N={m.n}")
    return 0


def cmd_train_forecaster(args) -> int:
    cfg = pipeline_config(resolve_settings(args))
    series = load_rates(cfg)
    calendar = build_calendar(series.values(), cfg.train_span[0], cfg.eval_span[1])
    models = train_forecasters(series, calendar, cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for cur, m in models.items():
        params, scaler = m["lstm"]
        path = cfg.out / f"lstm_{cur}.txt"
        lstm_mod.save(path, params, scaler, cfg.window)
        print(f"{cur}: loss {m['loss'][0]:.4g} -> {m['loss'][-1]:.4g}, ARIMA{m['arima'].order}; saved {path}")
    return 0


def cmd_fit_forest(args) -> int:
    cfg = pipeline_config(resolve_settings(args))
    if cfg.policy_file is None:
        raise ConfigError("--policy-file is required")
    series = load_rates(cfg)
    calendar = build_calendar(series.values(), cfg.train_span[0], cfg.eval_span[1])
    models = train_forecasters(series, calendar, cfg)
    targets = eval_targets(calendar, cfg)
    fc = roll_forecasts(series, calendar, models, targets, cfg)[cfg.forecaster]
    instances = build_instances(series, calendar, fc, load_policy_records(cfg.policy_file), cfg)
    fcfg = replace(cfg.forest, seed=derive_seed(cfg.seed, "forest"))
    result = fit_and_explain(cfg.forecaster, instances, fcfg, "pooled", explain=False)
    cfg.out.mkdir(parents=True, exist_ok=True)
    forest_mod.save(cfg.out / "forest.txt", result.forests["*"])
    write_instances(cfg.out / "instances.csv", instances)
    print(f"fitted {fcfg.tree_count} trees on {len(instances)} instances; wrote {cfg.out / 'forest.txt'}")
    return 0


def cmd_explain(args) -> int:
    forest = forest_mod.load(args.forest)
    instances = read_instances(args.instances)
    X = np.stack([i.features for i in instances])
    attrs = explain_batch(forest, X)
    outcomes = label_directions([i.actual_return for i in instances], [a.prediction for a in attrs])
    names = [n.lower() if n == "LSTM" else n for n in FEATURE_NAMES]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "currency", "phi0"] + [f"phi_{n}" for n in names] + [f"norm_{n}" for n in names]
                   + ["predicted_direction", "actual_direction", "correct"])
        for inst, a, o in zip(instances, attrs, outcomes):
            w.writerow([inst.target_date.isoformat(), inst.currency, f"{a.base_value:.10g}"]
                       + [f"{v:.10g}" for v in a.phis] + [f"{v:.10g}" for v in a.normalized]
                       + [o.predicted, o.actual, str(o.correct).lower()])
    print(f"explained {len(instances)} instances; wrote {args.out}")
    return 0


def cmd_metrics(args) -> int:
    """DA/MAE/RMSE per currency and model column of a predictions file."""
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    columns = {"rf_rate": "RF", "lstm_rate": "LSTM", "arima_rate": "ARIMA"}
    reports = []
    for cur in sorted({r["currency"] for r in rows}):
        sub = [r for r in rows if r["currency"] == cur]
        y = np.array([float(r["actual_rate"]) for r in sub])
        for col, tag in columns.items():
            if not sub or not sub[0].get(col):
                continue
            y_hat = np.array([float(r[col]) for r in sub])
            reports.append({"currency": cur, "model": tag,
                            "DA": directional_accuracy(y, y_hat[1:]) if len(y) > 1 else float("nan"),
                            "MAE": mae(y, y_hat), "RMSE": rmse(y, y_hat), "N": len(y)})
    text = json.dumps(reports, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify_shap(args) -> int:
    from .verify import verify_shap

    res = verify_shap(args.trials, args.seed, args.tol)
    status = "PASS" if res.failures == 0 else "FAIL"
    print(f"{status}: {res.trials} trees, max |TreeSHAP - brute force| = {res.max_error:.3e}, "
          f"{res.failures} above {args.tol:g}")
    return 0 if res.failures == 0 else 1


def cmd_verify_grad(args) -> int:
    from .verify import verify_grad

    errors = verify_grad(args.seeds, args.hidden_size, args.window, args.step)
    worst = max(errors)
    status = "PASS" if worst < args.tol else "FAIL"
    print(f"{status}: {len(errors)} seeds, max relative gradient error = {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fx-attrib", description="LSTM-RF-SHAP attribution of FX moves to COVID policies")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress (default: off)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="full pipeline")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train-forecaster", help="train per-currency LSTMs (and ARIMA) and save them")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train_forecaster)

    p = sub.add_parser("fit-forest", help="build instances and fit the pooled forest")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_fit_forest)

    p = sub.add_parser("explain", help="TreeSHAP attributions for an instances file")
    p.add_argument("--forest", type=Path, required=True, help="forest text file (required)")
    p.add_argument("--instances", type=Path, required=True, help="instances csv (required)")
    p.add_argument("--out", type=Path, default=Path("attributions.csv"),
                   help="output csv (default: attributions.csv)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("metrics", help="DA/MAE/RMSE from a predictions file")
    p.add_argument("--predictions", type=Path, required=True, help="predictions csv (required)")
    p.add_argument("--out", type=Path, default=None, help="output json (default: stdout)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("verify-shap", help="TreeSHAP vs brute-force enumeration on random trees")
    p.add_argument("--trials", type=int, default=200, help="random trees (default: 200)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--tol", type=float, default=1e-9, help="per-coordinate tolerance (default: 1e-09)")
    p.set_defaults(func=cmd_verify_shap)

    p = sub.add_parser("verify-grad", help="LSTM gradient check against finite differences")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds (default: 20)")
    p.add_argument("--hidden-size", type=int, default=3, help="hidden units (default: 3)")
    p.add_argument("--window", type=int, default=5, help="window length (default: 5)")
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference step (default: 1e-05)")
    p.add_argument("--tol", type=float, default=1e-4, help="relative error bound (default: 0.0001)")
    p.set_defaults(func=cmd_verify_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fx-attrib: usage error: {exc}", file=sys.stderr)
        return 2
    except (FxAttribError, OSError, ValueError) as exc:
        print(f"fx-attrib: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
