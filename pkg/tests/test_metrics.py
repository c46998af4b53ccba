from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipo_fusion.metrics import MetricError, auc, classification_report, f1, mae, mse, regression_report
from oracles import pairwise_auc


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 5, n) / 4.0 if rng.random() < 0.5 else rng.random(n)
        assert auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


def test_auc_single_class_errors():
    with pytest.raises(MetricError):
        auc([0.1, 0.2], [1, 1])


@pytest.mark.parametrize("preds,labels,cls,expected", [
    # tp=2 fp=1 fn=1 -> p=2/3 r=2/3
    ([1, 1, 1, 0, 0], [1, 1, 0, 1, 0], 1, 2 / 3),
    # for class 0: tp=1 fp=1 fn=1
    ([1, 1, 1, 0, 0], [1, 1, 0, 1, 0], 0, 0.5),
    ([0, 0, 0], [1, 1, 1], 1, 0.0),
    ([1, 1, 0, 0], [1, 1, 0, 0], 1, 1.0),
    # tp=1 fp=0 fn=2 -> p=1 r=1/3 -> 0.5
    ([1, 0, 0, 0], [1, 1, 1, 0], 1, 0.5),
])
def test_f1_hand_fixtures(preds, labels, cls, expected):
    assert f1(preds, labels, cls) == pytest.approx(expected)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=50))
def test_mae_bounded_by_rmse(pairs):
    p, t = zip(*pairs)
    assert mae(p, t) <= np.sqrt(mse(p, t)) * (1 + 1e-12) + 1e-12


def test_mae_mse_values_and_errors():
    assert mae([1, 2], [2, 4]) == 1.5
    assert mse([1, 2], [2, 4]) == 2.5
    with pytest.raises(MetricError):
        mae([], [])
    with pytest.raises(MetricError):
        mse([1], [1, 2])


def test_reports():
    rep = classification_report([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
    assert rep.auc == 0.75 and rep.support_class0 == 2 and rep.f1_class1 == 0.5
    assert classification_report([0.9, 0.8], [1, 1]).auc is None
    # 0.5 is not above the threshold
    assert classification_report([0.5, 0.5], [0, 1]).f1_class0 == pytest.approx(2 / 3)
    assert regression_report([0, 0], [1, -1]).as_dict() == {"mae": 1.0, "mse": 1.0, "n": 2}
