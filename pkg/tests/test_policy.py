import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import weekdays
from fx_attrib.errors import ConfigError, DataError
from fx_attrib.market_data import RateSeries, build_calendar, to_log_returns
from fx_attrib.policy import (
    N_FEATURES, POLICY_FEATURES, ModelInstance, PolicyRecord, assemble_instances, encode_features,
    feature_map_for, load_policy_records,
)

HEADER = "country_code,date,income_support,debt_relief,stay_home,workplace_closing,intl_travel,internal_movement,new_cases\n"


def test_load_passthrough_and_gap(tmp_path):
    p = tmp_path / "policy.csv"
    p.write_text(HEADER + "GBR,2020-04-01,,1,2,3,4,2,100\n", encoding="utf-8")
    table = load_policy_records(p)
    rec = table[("GBR", dt.date(2020, 4, 1))]
    assert rec.stay_home == 2 and rec.income_support == 0 and rec.new_cases == 100
    assert table.gaps == [(2, "income_support")]


def test_load_duplicate_country_day(tmp_path):
    p = tmp_path / "policy.csv"
    p.write_text(HEADER + "GBR,2020-04-01,0,0,0,0,0,0,1\nGBR,2020-04-01,0,0,0,0,0,0,2\n", encoding="utf-8")
    with pytest.raises(DataError, match="duplicate"):
        load_policy_records(p)


def test_load_rejects_out_of_range_level(tmp_path):
    p = tmp_path / "policy.csv"
    p.write_text(HEADER + "GBR,2020-04-01,0,0,9,0,0,0,1\n", encoding="utf-8")
    with pytest.raises(DataError, match="stay_home"):
        load_policy_records(p)


def test_null_policy_encodes_to_zero():
    f = encode_features(PolicyRecord("GBR", dt.date(2020, 1, 1)), [0] * 5)
    assert f.as_array().tolist() == [0.0] * 12


def test_income_support_sets_e1():
    f = encode_features(PolicyRecord("GBR", dt.date(2020, 4, 1), income_support=1), [0] * 5)
    assert f["E1"] == 1.0
    assert sum(f.values) == 1.0


def test_case_sum():
    f = encode_features(PolicyRecord("GBR", dt.date(2020, 4, 1)), [10, 20, 30, 40, 50])
    assert f["C1"] == 150


def test_case_window_must_have_five_entries():
    with pytest.raises(ValueError):
        encode_features(PolicyRecord("GBR", dt.date(2020, 4, 1)), [1, 2, 3])


@pytest.mark.parametrize("field, level, on", [
    ("debt_relief", 1, {"E2"}), ("debt_relief", 2, {"E3"}),
    ("stay_home", 1, {"N1"}), ("stay_home", 3, {"N2"}),
    ("workplace_closing", 1, {"N3"}), ("workplace_closing", 2, {"N4"}),
    ("intl_travel", 1, {"N5"}), ("intl_travel", 2, {"N6"}), ("intl_travel", 4, {"N7"}),
    ("internal_movement", 2, {"N8"}),
])
def test_level_thresholds(field, level, on):
    f = encode_features(PolicyRecord("GBR", dt.date(2020, 4, 1), **{field: level}), [0] * 5)
    assert {k for k in POLICY_FEATURES[:-1] if f[k]} == on


@given(st.integers(0, 3), st.integers(0, 2), st.integers(0, 3), st.integers(0, 4), st.integers(0, 2),
       st.integers(0, 2))
def test_mutually_exclusive_bins(stay, debt, work, travel, internal, income):
    f = encode_features(PolicyRecord("GBR", dt.date(2020, 4, 1), income, debt, stay, work, travel, internal),
                        [0] * 5)
    assert f["N1"] + f["N2"] == (stay >= 1)
    assert f["E2"] + f["E3"] == (debt >= 1)
    assert f["N3"] + f["N4"] == (work >= 1)
    assert f["N5"] + f["N6"] + f["N7"] == (travel >= 1)


@given(st.lists(st.integers(0, 10**6), min_size=5, max_size=5), st.integers(0, 10**6))
def test_case_sum_translation(cases, k):
    rec = PolicyRecord("GBR", dt.date(2020, 4, 1))
    assert encode_features(rec, [c + k for c in cases])["C1"] - encode_features(rec, cases)["C1"] == 5 * k


def _instances_for(days, records, target_days=None):
    table_records = {(r.country_code, r.date): r for r in records}
    from fx_attrib.policy import PolicyTable
    table = PolicyTable(table_records)
    s = RateSeries("GBP", days, np.linspace(1.0, 1.1, len(days)))
    cal = build_calendar([s])
    fmap = feature_map_for(table, "GBR", days)
    preds = {d: 0.001 for d in (target_days or days[1:])}
    rates = dict(zip(days, s.rates.tolist()))
    return assemble_instances("GBP", cal, preds, to_log_returns(s), fmap, rates)


def test_features_lag_one_trading_day():
    days = [dt.date(2021, 9, 20), dt.date(2021, 9, 21)]
    recs = [PolicyRecord("GBR", days[0], stay_home=2), PolicyRecord("GBR", days[1], stay_home=0)]
    inst = _instances_for(days, recs)
    assert len(inst) == 1
    assert inst[0].target_date == dt.date(2021, 9, 21)
    assert inst[0].feature_date == dt.date(2021, 9, 20)
    assert inst[0].features.shape == (N_FEATURES,)
    assert inst[0].features[1 + POLICY_FEATURES.index("N2")] == 1.0
    assert inst[0].features[0] == 0.001


def test_monday_target_uses_friday_features():
    days = weekdays(dt.date(2021, 9, 16), 3)  # Thu, Fri, Mon
    recs = [PolicyRecord("GBR", d, debt_relief=k % 3) for k, d in enumerate(days)]
    inst = _instances_for(days, recs)
    monday = inst[-1]
    assert monday.target_date.weekday() == 0
    assert monday.feature_date == days[1]
    assert monday.features[1 + POLICY_FEATURES.index("E2")] == 1.0


def test_missing_features_listed():
    days = weekdays(dt.date(2020, 3, 2), 3)
    with pytest.raises(DataError, match="no policy features"):
        _instances_for(days, [PolicyRecord("GBR", days[2])])


def test_unknown_country():
    from fx_attrib.policy import PolicyTable
    with pytest.raises(ConfigError):
        feature_map_for(PolicyTable({}), "XXX", [dt.date(2020, 1, 1)])


def test_feature_vector_length_asserted():
    with pytest.raises(AssertionError):
        ModelInstance("GBP", dt.date(2020, 1, 2), np.zeros(12), 0.0, 1.0, 1.0, dt.date(2020, 1, 1))
