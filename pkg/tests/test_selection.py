from __future__ import annotations

import json

import numpy as np
import pytest

from ipo_fusion.features import FeatureMatrix
from ipo_fusion.learners import (
    Family, LearnerTask, ModelSpec, TrainingError, automl_select, cross_validate, default_grid, make_folds,
    mlp, out_of_fold_predictions, stacked_ensemble, train,
)
from ipo_fusion.learners.selection import Leaderboard, fold_metric
from ipo_fusion.metrics import auc
from oracles import central_difference

CLS, REG = LearnerTask.CLASSIFICATION, LearnerTask.REGRESSION
FAST = {
    "GLM": [ModelSpec.make(Family.GLM, CLS, **{"lambda": 0.01})],
    "DRF": [ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=20, max_depth=6)],
    "XGB": [ModelSpec.make(Family.GBT, CLS, style="xgb", n_rounds=30, max_depth=3)],
    "GBM": [ModelSpec.make(Family.GBT, CLS, style="gbm", n_rounds=30, max_depth=3)],
    "DL": [ModelSpec.make(Family.MLP, CLS, hidden=(8,), epochs=20)],
}


def matrix(X):
    return FeatureMatrix.from_array(np.asarray(X, dtype=float))


# ---------------------------------------------------------------- single learners


def test_glm_separable_and_constant_labels():
    X = np.array([[0, 0], [0, 1], [1, 0], [3, 3], [3, 4], [4, 3]], dtype=float)
    y = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    model = train(matrix(X), y, ModelSpec.make(Family.GLM, CLS, **{"lambda": 1e-4}))
    assert np.all((model.predict(matrix(X)) > 0.5) == y)
    zero = train(matrix(X), np.zeros(6), ModelSpec.make(Family.GLM, CLS, **{"lambda": 1e-4}))
    assert np.all(zero.predict(matrix(X)) <= 0.01)


def test_glm_gradient_vanishes_at_convergence():
    from ipo_fusion.learners import glm

    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 5))
    y = (X[:, 0] + rng.normal(size=60) > 0).astype(float)
    theta, _ = glm.minimize(X, y, 0.01, CLS)
    _, g = glm.objective(theta, X, y, 0.01, CLS)
    num = central_difference(lambda t: glm.objective(t, X, y, 0.01, CLS)[0], theta)
    assert np.max(np.abs(g - num)) < 1e-4
    assert np.linalg.norm(g) < 1e-5


def test_mlp_331_gradient_abs_error():
    rng = np.random.default_rng(3)
    params = mlp.init_params([3, 3, 1], rng)
    X, y = rng.normal(size=(10, 3)), rng.integers(0, 2, 10).astype(float)
    _, grads = mlp.loss_and_grads(params, X, y, CLS)
    for i, w in enumerate(params):
        def f(wi, i=i):
            trial = list(params)
            trial[i] = wi
            return mlp.loss_and_grads(trial, X, y, CLS)[0]
        assert np.max(np.abs(grads[i] - central_difference(f, w))) < 1e-5


def test_mlp_learns_xor():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0], dtype=float)
    model = train(matrix(X), y, ModelSpec.make(Family.MLP, CLS, 1, hidden=(8,), epochs=5000, learning_rate=0.01,
                                               batch_size=4, l2=0.0))
    assert np.all((model.predict(matrix(X)) > 0.5) == y)


def test_forest_step_function_and_stump_on_xor():
    x = np.linspace(0, 1, 100)[:, None]
    y = (x[:, 0] > 0.4).astype(float)
    model = train(matrix(x), y, ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=20))
    grid = np.linspace(0.005, 0.995, 50)[:, None]
    assert np.all((model.predict(matrix(grid)) > 0.5) == (grid[:, 0] > 0.4))
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    yx = np.array([0, 1, 1, 0], dtype=float)
    stump = train(matrix(X), yx, ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=1, max_depth=1))
    assert np.mean((stump.predict(matrix(X)) > 0.5) == yx) <= 0.75


def test_gbt_fits_noiseless_quadratic():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(200, 2))
    y = X[:, 0] ** 2 + 0.5 * X[:, 1] ** 2
    model = train(matrix(X), y, ModelSpec.make(Family.GBT, REG, style="xgb", n_rounds=500, max_depth=3,
                                               learning_rate=0.1))
    assert np.mean((model.predict(matrix(X)) - y) ** 2) < 1e-3


# ---------------------------------------------------------------- cross-validation


def test_fold_sizes_and_stratification():
    y = np.r_[np.zeros(60), np.ones(40)]
    folds = make_folds(y, 5, seed=1)
    assert sorted(np.bincount(folds)) == [20] * 5
    for f in range(5):
        assert np.sum(y[folds == f]) == 8
    np.testing.assert_array_equal(folds, make_folds(y, 5, seed=1))


def test_single_class_fold_is_merged():
    y = np.r_[np.zeros(20), np.ones(2)]
    folds = make_folds(y, 5, seed=0)
    for f in np.unique(folds):
        assert len(np.unique(y[folds == f])) == 2
    with pytest.raises(ValueError):
        make_folds(y, 1)


def test_perfect_and_constant_predictors():
    rng = np.random.default_rng(5)
    x = rng.normal(size=100)
    y = (x > 0).astype(float)
    # the label itself as the only feature
    perfect = cross_validate(matrix(y[:, None]), y, ModelSpec.make(Family.GLM, CLS))
    assert perfect == 1.0
    noise = matrix(np.zeros((100, 1)))
    assert cross_validate(noise, y, ModelSpec.make(Family.GLM, CLS)) == 0.5


def test_oof_never_uses_own_row():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 40))  # one-hot-like memorization fixture: rows are unique
    y = rng.integers(0, 2, 40).astype(float)
    spec = ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=20)
    in_fold = train(matrix(X), y, spec).predict(matrix(X))
    oof = out_of_fold_predictions(matrix(X), y, spec)
    assert auc(in_fold, y) > 0.99
    assert auc(oof, y) < 0.9


# ---------------------------------------------------------------- selection and stacking


def planted(n=200, seed=0, kind="interaction"):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    if kind == "interaction":
        y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    else:
        y = (X[:, 0] + 0.5 * rng.normal(size=n) > 0).astype(float)
    return matrix(X), y


def test_leaderboard_arity_and_ordering():
    m, y = planted(kind="linear")
    board = automl_select(m, y, CLS, budget=1, k=3, grids=FAST)
    assert len(board.base_entries()) == 5
    assert board.ensemble is not None and len(board.entries) == 6
    metrics = [e.cv_metric for e in board.entries]
    assert metrics == sorted(metrics, reverse=True)
    json.dumps(board.to_json())


def test_duplicate_specs_are_deduplicated():
    m, y = planted(kind="linear")
    spec = FAST["GLM"][0]
    board = automl_select(m, y, CLS, candidates=[spec, spec], k=3, include_ensemble=False)
    assert len(board.entries) == 1


def test_trees_win_on_planted_interaction():
    m, y = planted(n=400)
    board = automl_select(m, y, CLS, k=3, grids=FAST, kinds=("GLM", "XGB", "DL"), include_ensemble=False)
    assert board.selected.kind == "XGB"


def test_duplicated_base_keeps_base_metric():
    m, y = planted(kind="linear")
    spec = FAST["XGB"][0]
    base = train(m, y, spec)
    folds = make_folds(y, 5, 42)
    oof = out_of_fold_predictions(m, y, spec, folds=folds)
    ens = stacked_ensemble([base, base], m, y)
    assert ens.cv_metric == pytest.approx(fold_metric(CLS, oof, y, folds), abs=1e-9)
    assert ens.extra["level_one"].shape == (len(y), 2)


def test_complementary_experts_stack_at_least_as_well():
    rng = np.random.default_rng(9)
    n = 400
    y = rng.integers(0, 2, n).astype(float)
    a = y + rng.normal(0, 1.0, n)
    b = y + rng.normal(0, 1.0, n)
    # each expert sees only its own noisy copy of the label
    X = np.column_stack([a, b])
    m = matrix(X)
    e1 = ModelSpec.make(Family.GLM, CLS)
    only_a = matrix(np.column_stack([a, np.zeros(n)]))
    only_b = matrix(np.column_stack([np.zeros(n), b]))
    folds = make_folds(y, 5, 42)
    oof_a = out_of_fold_predictions(only_a, y, e1, folds=folds)
    oof_b = out_of_fold_predictions(only_b, y, e1, folds=folds)
    ens = stacked_ensemble([train(only_a, y, e1), train(only_b, y, e1)], m, y,
                           level_one=np.column_stack([oof_a, oof_b]), folds=folds)
    assert ens.cv_metric >= max(fold_metric(CLS, oof_a, y, folds), fold_metric(CLS, oof_b, y, folds))


def test_stacked_model_roundtrip(tmp_path):
    m, y = planted(kind="linear")
    board = automl_select(m, y, CLS, k=3, grids=FAST, kinds=("GLM", "XGB"))
    ens = board.ensemble.model
    ens.save(tmp_path / "e.json")
    from ipo_fusion.learners import TrainedModel

    back = TrainedModel.load(tmp_path / "e.json")
    np.testing.assert_allclose(back.predict(m), ens.predict(m))
    assert np.all((ens.predict(m) >= 0) & (ens.predict(m) <= 1))


def test_stacking_rejects_single_base():
    m, y = planted(kind="linear")
    with pytest.raises(TrainingError):
        stacked_ensemble([train(m, y, FAST["GLM"][0])], m, y)


def test_regression_selection_uses_mae():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(120, 3))
    y = X[:, 0] * 2 + 0.1 * rng.normal(size=120)
    grids = {"GLM": [ModelSpec.make(Family.GLM, REG)],
             "GBM": [ModelSpec.make(Family.GBT, REG, style="gbm", n_rounds=30)]}
    board = automl_select(matrix(X), y, REG, k=3, kinds=("GLM", "GBM"), grids=grids)
    assert isinstance(board, Leaderboard) and board.metric_name == "mae"
    vals = [e.cv_metric for e in board.entries]
    assert vals == sorted(vals)
    assert board.selected.kind in ("GLM", "Ens")


def test_default_grids_are_cheapest_first():
    for kind in ("GLM", "DRF", "XGB", "GBM", "DL"):
        grid = default_grid(kind, CLS)
        assert len(grid) >= 2 and len(set(grid)) == len(grid)
    assert default_grid("XGB", CLS)[0].params["n_rounds"] == 200
    with pytest.raises(ValueError):
        default_grid("SVM", CLS)


def test_automl_is_deterministic():
    m, y = planted(kind="linear")
    a = automl_select(m, y, CLS, k=3, grids=FAST, kinds=("GLM", "DRF"))
    b = automl_select(m, y, CLS, k=3, grids=FAST, kinds=("GLM", "DRF"))
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
