import csv
import datetime as dt
import json
from dataclasses import replace

import numpy as np
import pytest

from fx_attrib import lstm
from fx_attrib.errors import ConfigError, StageError
from fx_attrib.evaluation import OTHER
from fx_attrib.forest import ForestConfig
from fx_attrib.pipeline import (
    MANIFEST, OUTPUT_FILES, PipelineConfig, audit_temporal_hygiene, derive_seed, parse_span, run,
)
from fx_attrib.policy import ModelInstance
from fx_attrib.synthetic import SAMPLE_DIR

GOLDEN_FIRST_PREDICTION = 0.0008140415553439162


def quick_config(out, **kw):
    base = PipelineConfig(
        rates_dir=SAMPLE_DIR / "rates", policy_file=SAMPLE_DIR / "policy.csv",
        currencies=("GBP", "EUR", "JPY"),
        forest=ForestConfig(tree_count=20, max_depth=6),
        train=lstm.TrainConfig(hidden_size=4, epochs=20, learning_rate=1e-2),
        arima_grid=((0, 1, 0), (1, 1, 0)), seed=42, out=out,
    )
    return replace(base, **kw)


@pytest.fixture(scope="module")
def quick(tmp_path_factory):
    out = tmp_path_factory.mktemp("quick")
    return run(quick_config(out)), out


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_every_file(quick):
    result, out = quick
    for name in OUTPUT_FILES + (MANIFEST,):
        assert (out / name).is_file()
    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["forecasters_trained"] == 3
    assert manifest["temporal_violations"] == 0
    assert manifest["policy_gaps"] == 2
    assert set(manifest["outputs"]) == set(OUTPUT_FILES)


def test_attribution_rows(quick):
    result, out = quick
    rows = read_csv(out / "attributions.csv")
    assert len(rows) == len(result.primary.instances)
    phi_cols = [c for c in rows[0] if c.startswith("phi_")]
    norm_cols = [c for c in rows[0] if c.startswith("norm_")]
    assert len(phi_cols) == 13 and len(norm_cols) == 13
    for r in rows:
        norms = np.array([float(r[c]) for c in norm_cols])
        assert np.all(np.abs(norms) <= 1)
        total = float(r["phi0"]) + sum(float(r[c]) for c in phi_cols)
        # phi0 + sum(phi) is the forest prediction; skip rows too close to zero to call
        if abs(total) > 1e-9:
            assert r["predicted_direction"] == ("appreciation" if total > 0 else "depreciation")


def test_metrics_rows(quick):
    result, out = quick
    metrics = json.loads((out / "metrics.json").read_text())
    assert {(m["currency"], m["model"]) for m in metrics} == {
        (c, t) for c in ("GBP", "EUR", "JPY") for t in ("LSTM-RF", "ARIMA-RF")}
    assert all(m["RMSE"] >= m["MAE"] for m in metrics)


def test_count_conservation(quick):
    result, out = quick
    rows = read_csv(out / "contribution_counts.csv")
    attrs = read_csv(out / "attributions.csv")
    for cur in ("GBP", "EUR", "JPY"):
        for direction in ("appreciation", "depreciation"):
            counted = sum(int(r["count"]) for r in rows if r["currency"] == cur and r["direction"] == direction)
            correct = sum(a["correct"] == "true" and a["actual_direction"] == direction
                          for a in attrs if a["currency"] == cur)
            assert counted == correct
    assert {r["feature"] for r in rows} >= {"E1", "N8", OTHER}


def test_no_future_inputs(quick):
    result, _ = quick
    assert audit_temporal_hygiene(result.primary.instances) == []
    for inst in result.primary.instances:
        assert inst.feature_date < inst.target_date
        assert inst.source_dates and max(inst.source_dates) < inst.target_date


def test_audit_flags_leaks():
    day = dt.date(2020, 3, 3)
    bad = ModelInstance("GBP", day, np.zeros(13), 0.0, 1.0, 1.0, day)
    assert len(audit_temporal_hygiene([bad])) == 1


def test_golden_prediction(quick):
    # recorded from the seeded reference run of this configuration
    result, _ = quick
    first = result.primary.instances[0]
    assert (first.currency, first.target_date) == ("GBP", dt.date(2020, 1, 3))
    assert result.primary.predictions[0] == pytest.approx(GOLDEN_FIRST_PREDICTION, abs=1e-12)


def test_rerun_is_identical(quick, tmp_path):
    _, out = quick
    run(quick_config(tmp_path))
    for name in OUTPUT_FILES + (MANIFEST,):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_rf_only_ablation_keeps_instance_set(quick, tmp_path):
    result, _ = quick
    ablation = run(quick_config(tmp_path, ablation="rf-only"))
    key = lambda r: [(i.currency, i.target_date) for i in r.primary.instances]  # noqa: E731
    assert key(ablation) == key(result)
    assert ablation.primary.tag == "RF"
    assert {m.model for m in ablation.metrics} == {"RF"}


def test_per_currency_scope(tmp_path):
    result = run(quick_config(tmp_path, rf_scope="per-currency", forecaster="arima"), write=False)
    assert set(result.primary.forests) == {"GBP", "EUR", "JPY"}
    assert result.primary.tag == "ARIMA-RF"


def test_empty_eval_span_aborts_at_stage_three(tmp_path):
    cfg = quick_config(tmp_path, eval_span=(dt.date(2021, 1, 16), dt.date(2021, 1, 17)))
    with pytest.raises(StageError) as info:
        run(cfg)
    assert info.value.stage == 3


def test_missing_rates_dir_fails_at_stage_one(tmp_path):
    with pytest.raises(StageError) as info:
        run(quick_config(tmp_path, rates_dir=tmp_path / "nope"))
    assert info.value.stage == 1


def test_unwritable_output_leaves_nothing(tmp_path):
    blocker = tmp_path / "out"
    blocker.write_text("not a directory")
    with pytest.raises(StageError) as info:
        run(quick_config(blocker))
    assert info.value.stage == 8


def test_seed_derivation():
    assert derive_seed(42, "forest") == derive_seed(42, "forest")
    assert derive_seed(42, "forest") != derive_seed(43, "forest")
    assert derive_seed(42, "lstm", "GBP") != derive_seed(42, "lstm", "EUR")
    assert 0 <= derive_seed(0, "x") < 2 ** 32


def test_span_and_config_validation(tmp_path):
    assert parse_span("2020-01-01..2020-02-01") == (dt.date(2020, 1, 1), dt.date(2020, 2, 1))
    for bad in ("2020-01-01", "2020-02-01..2020-01-01", "x..y"):
        with pytest.raises(ConfigError):
            parse_span(bad)
    with pytest.raises(ConfigError):
        quick_config(tmp_path, forecaster="gru")
    with pytest.raises(ConfigError):
        quick_config(tmp_path, train_span=(dt.date(2019, 1, 1), dt.date(2020, 6, 1)))
