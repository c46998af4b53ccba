from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_record, synthetic_rows, write_csv
from ipo_fusion.dataset import IssueType, Target, parse_records, split_by_year
from ipo_fusion.features import (
    TEXT_COLUMNS, ColumnKind, FeatureConfig, FeatureError, FeaturePipeline, MacroUnavailable, Window,
    encode_categoricals, join_macro, previous_quarter, read_feature_csv, trailing_success_rate,
)


def _quarter_index(day: dt.date) -> int:
    return day.year * 4 + (day.month - 1) // 3


def brute_force_rate(records, as_of, window, exclude=None):
    """Walks every candidate day instead of computing window bounds."""
    if window == "prev_quarter":
        inside = lambda d: _quarter_index(d) == _quarter_index(as_of) - 1
    else:
        inside = lambda d: 1 <= (as_of - d).days <= 90
    hits = []
    for rec in records:
        if rec.key == exclude or not inside(rec.listing_date):
            continue
        close = rec.exchange_prices.get("NSE") or rec.exchange_prices.get("BSE")
        if close is None or close.close is None:
            continue
        hits.append(close.close > rec.issue_price)
    return (sum(hits) / len(hits), len(hits)) if hits else (0.5, 0)


_date = st.dates(dt.date(2019, 1, 1), dt.date(2021, 12, 31))


@st.composite
def history(draw):
    n = draw(st.integers(0, 25))
    recs = []
    for i in range(n):
        day = draw(_date)
        close = draw(st.sampled_from([None, 90.0, 100.0, 110.0]))
        recs.append(make_record(f"C{i}", day, issue=100.0, nse=(100.0, None, close) if close else None))
    return recs


@settings(max_examples=200, deadline=None)
@given(history(), _date, st.sampled_from(["prev_quarter", "last_90d"]))
def test_trailing_rate_matches_brute_force(recs, as_of, window):
    exclude = recs[0].key if recs else None
    assert trailing_success_rate(recs, as_of, window, exclude) == brute_force_rate(recs, as_of, window, exclude)


def test_empty_window_is_neutral():
    assert trailing_success_rate([], dt.date(2022, 1, 1), Window.LAST_90_DAYS) == (0.5, 0)


def test_same_day_listing_not_counted():
    day = dt.date(2022, 3, 10)
    recs = [make_record("same", day, nse=(1, 1, 200)), make_record("before", day - dt.timedelta(1), nse=(1, 1, 50))]
    assert trailing_success_rate(recs, day, "last_90d") == (0.0, 1)


def test_previous_quarter_bounds():
    assert previous_quarter(dt.date(2022, 2, 14)) == (dt.date(2021, 10, 1), dt.date(2021, 12, 31))
    assert previous_quarter(dt.date(2022, 8, 1)) == (dt.date(2022, 4, 1), dt.date(2022, 6, 30))


def test_macro_join_with_stale_fallback():
    table = {2019: {"gdp": 1.0}, 2021: {"gdp": 3.0}}
    assert join_macro(make_record(listing=dt.date(2021, 5, 1)), table) == ({"gdp": 3.0}, False)
    assert join_macro(make_record(listing=dt.date(2020, 5, 1)), table) == ({"gdp": 1.0}, True)
    with pytest.raises(MacroUnavailable):
        join_macro(make_record(listing=dt.date(2018, 5, 1)), table)


def histogram_oracle(train, field, threshold):
    counts = {}
    for r in train:
        counts[getattr(r, field)] = counts.get(getattr(r, field), 0) + 1
    return {k for k, c in counts.items() if k is not None and c >= threshold}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "d", None]), min_size=1, max_size=40), st.integers(1, 6))
def test_frequent_levels_match_histogram(sectors, threshold):
    train = [make_record(f"C{i}", sector=s) for i, s in enumerate(sectors)]
    names, X = encode_categoricals(train, threshold)
    sector_cols = [n.split("=", 1)[1] for n in names if n.startswith("sector=")]
    assert set(sector_cols) - {"OTHER"} == histogram_oracle(train, "sector", threshold)
    assert "OTHER" in sector_cols
    block = X[:, [j for j, n in enumerate(names) if n.startswith("sector=")]]
    np.testing.assert_array_equal(block.sum(axis=1), 1.0)


def test_unseen_category_maps_to_other():
    train = [make_record(f"C{i}", sector="Finance") for i in range(5)]
    names, X = encode_categoricals(train, 5, apply_to=[make_record("new", sector="Space")])
    assert X[0, names.index("sector=OTHER")] == 1.0
    assert X[0, names.index("sector=Finance")] == 0.0


@pytest.fixture
def split(tmp_path):
    return split_by_year(parse_records(write_csv(tmp_path / "f.csv", synthetic_rows(140, seed=1)), "MainBoard"))


def test_pipeline_fits_on_train_only(split):
    pipe = FeaturePipeline(FeatureConfig(target=Target.DIRECTION_CLOSE)).fit(split.train)
    Xtr = pipe.transform(split.train)
    shifted = [r.__class__(**{**r.__dict__, "financials": {"revenue": 1e9, "profit": 1e9}}) for r in split.test]
    Xte = pipe.transform(split.test)
    Xte2 = pipe.transform(shifted)
    assert Xtr.column_names == Xte.column_names == Xte2.column_names
    # imputation statistics stay those of training data
    np.testing.assert_array_equal(pipe.fill_values, FeaturePipeline(FeatureConfig()).fit(split.train).fill_values)
    assert Xte.shape[0] == len(split.test)
    assert np.isfinite(Xte.values).all()


def test_missing_values_get_train_median():
    train = [make_record(f"C{i}", dt.date(2020, 1, 1 + i), financials={"revenue": float(v)}, nse=(1, 1, 1))
             for i, v in enumerate([1, 2, 3, 10, 20])]
    pipe = FeaturePipeline(FeatureConfig(rare_category_threshold=1)).fit(train)
    X = pipe.transform([make_record("new", dt.date(2023, 1, 1), nse=(1, 1, 1))])
    assert X.values[0, X.column_names.index("fin_revenue")] == 3.0


def test_meta_columns_require_meta(split):
    pipe = FeaturePipeline(FeatureConfig(include_meta=True)).fit(split.train)
    with pytest.raises(FeatureError):
        pipe.transform(split.train)

    class Neutral:
        columns = TEXT_COLUMNS

        def vector(self, key):
            return np.full(len(TEXT_COLUMNS), 0.5)

    base = FeaturePipeline(FeatureConfig()).fit(split.train).transform(split.train)
    aug = pipe.transform(split.train, Neutral())
    assert aug.shape[1] - base.shape[1] == 26
    assert aug.drop_kind(ColumnKind.META).column_names == base.column_names


def test_feature_csv_roundtrip(tmp_path, split):
    X = FeaturePipeline().fit(split.train).transform(split.test)
    X.to_csv(tmp_path / "x.csv")
    back = read_feature_csv(tmp_path / "x.csv", X.kinds_json())
    np.testing.assert_array_equal(back.values, X.values)
    assert back.column_kinds == X.column_kinds


def test_config_validation():
    with pytest.raises(FeatureError):
        FeatureConfig(rare_category_threshold=0)
    with pytest.raises(FeatureError):
        FeatureConfig(imputation="mode")


def test_issue_type_and_exchange_are_encoded():
    train = [make_record(f"C{i}", issue_type=IssueType.FIXED_PRICE, nse=(1, 1, 1)) for i in range(6)]
    names, X = encode_categoricals(train, 5)
    assert X[:, names.index("issue_type=FixedPrice")].sum() == 6
    assert X[:, names.index("exchange=NSE")].sum() == 6
