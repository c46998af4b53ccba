from __future__ import annotations

import numpy as np
import pytest

from ipo_fusion.features import FeatureMatrix
from ipo_fusion.learners import (
    Family, LearnerTask, ModelSpec, TrainedModel, TrainingError, glm, mlp, train, train_glm,
)
from ipo_fusion.learners.tree import Binning, build_tree
from oracles import brute_best_gini_split, central_difference

CLS, REG = LearnerTask.CLASSIFICATION, LearnerTask.REGRESSION


def rel_err(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def toy(n=120, p=5, seed=0, task=CLS):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    z = X[:, 0] - 0.5 * X[:, 1] + 0.3 * rng.normal(size=n)
    y = (z > 0).astype(float) if task is CLS else z
    return FeatureMatrix.from_array(X), y


@pytest.mark.parametrize("task", [CLS, REG])
def test_glm_gradient_matches_finite_differences(task):
    rng = np.random.default_rng(1)
    for _ in range(20):
        n, p = rng.integers(5, 30), rng.integers(1, 6)
        X = rng.normal(size=(n, p))
        y = rng.integers(0, 2, n).astype(float) if task is CLS else rng.normal(size=n)
        theta = rng.normal(size=p + 1)
        lam = float(rng.random())
        _, g = glm.objective(theta, X, y, lam, task)
        num = central_difference(lambda t: glm.objective(t, X, y, lam, task)[0], theta)
        assert rel_err(g, num) < 1e-4


@pytest.mark.parametrize("task", [CLS, REG])
def test_mlp_gradient_matches_finite_differences(task):
    rng = np.random.default_rng(2)
    for _ in range(10):
        n, p = int(rng.integers(4, 12)), int(rng.integers(1, 4))
        sizes = [p, int(rng.integers(1, 5)), int(rng.integers(1, 4)), 1]
        params = mlp.init_params(sizes, rng)
        params = [w + 0.1 * rng.normal(size=w.shape) for w in params]
        X = rng.normal(size=(n, p))
        y = rng.integers(0, 2, n).astype(float) if task is CLS else rng.normal(size=n)
        _, grads = mlp.loss_and_grads(params, X, y, task, l2=0.01)
        for i, w in enumerate(params):
            def f(wi, i=i):
                trial = list(params)
                trial[i] = wi
                return mlp.loss_and_grads(trial, X, y, task, l2=0.01)[0]
            assert rel_err(grads[i], central_difference(f, w)) < 1e-4


def test_glm_objective_history_is_monotone_and_converges():
    m, y = toy()
    model = train(m, y, ModelSpec.make(Family.GLM, CLS, **{"lambda": 0.01}))
    hist = np.asarray(model.state["objective_history"])
    assert np.all(np.diff(hist) <= 1e-15)
    probs = model.predict(m)
    assert np.all((probs > 0) & (probs < 1))


def test_glm_non_negative_mode():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] - X[:, 1] > 0).astype(float)
    theta, _ = glm.minimize(X, y, 1e-4, CLS, non_negative=True)
    assert np.all(theta[1:] >= 0)
    assert theta[2] == 0.0


def test_glm_ridge_matches_closed_form():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 3))
    y = X @ [1.0, -2.0, 0.5] + 0.1 * rng.normal(size=80)
    lam = 0.1
    theta, _ = glm.minimize(X, y, lam, REG, tol=1e-10, max_iter=50000)
    Xc, yc = X - X.mean(0), y - y.mean()
    w = np.linalg.solve(Xc.T @ Xc / 80 + lam * np.eye(3), Xc.T @ yc / 80)
    np.testing.assert_allclose(theta[1:], w, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_root_split_matches_brute_force_gini(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 60))
    x = rng.integers(0, 8, n).astype(float)
    y = rng.integers(0, 2, n).astype(float)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    X = x[:, None]
    binning = Binning.fit(X)
    tree = build_tree(binning.transform(X), binning, y, np.ones(n), max_depth=1, allow_zero_gain=False)
    best = brute_best_gini_split(x, y)
    if tree.feature[0] < 0:
        assert best <= 1e-12
        return
    left = x <= tree.threshold[0]

    def mass(lab):
        return lab.size * 2 * lab.mean() * (1 - lab.mean()) if lab.size else 0.0

    achieved = mass(y) - mass(y[left]) - mass(y[~left])
    assert achieved == pytest.approx(best, abs=1e-9)


def test_binning_uses_midpoints():
    X = np.array([[1.0], [2.0], [4.0]])
    b = Binning.fit(X)
    np.testing.assert_array_equal(b.thresholds[0], [1.5, 3.0])
    np.testing.assert_array_equal(b.transform(X)[:, 0], [0, 1, 2])


def test_gbt_training_loss_is_monotone():
    for style in ("xgb", "gbm"):
        for task in (CLS, REG):
            m, y = toy(task=task)
            model = train(m, y, ModelSpec.make(Family.GBT, task, style=style, n_rounds=60, max_depth=3,
                                               learning_rate=0.3))
            loss = np.asarray(model.state["train_loss"])
            assert np.all(np.diff(loss) <= 1e-12), (style, task)


def test_gbt_constant_labels():
    m, _ = toy()
    model = train(m, np.ones(len(m)), ModelSpec.make(Family.GBT, CLS, style="xgb", n_rounds=5))
    np.testing.assert_array_equal(model.predict(m), 1.0)


def test_unlimited_forest_memorizes_unique_rows():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 4))
    y = rng.integers(0, 2, 50).astype(float)
    model = train(FeatureMatrix.from_array(X), y,
                  ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=100, max_depth=None))
    acc = np.mean((model.predict(FeatureMatrix.from_array(X)) > 0.5) == y)
    assert acc == 1.0


def test_forest_regression_reduces_error():
    m, y = toy(task=REG)
    model = train(m, y, ModelSpec.make(Family.RANDOM_FOREST, REG, n_trees=30, max_depth=6))
    assert np.mean((model.predict(m) - y) ** 2) < 0.5 * np.var(y)


@pytest.mark.parametrize("spec", [
    ModelSpec.make(Family.GLM, CLS, **{"lambda": 0.01}),
    ModelSpec.make(Family.RANDOM_FOREST, CLS, n_trees=10, max_depth=4),
    ModelSpec.make(Family.GBT, CLS, style="xgb", n_rounds=10),
    ModelSpec.make(Family.GBT, REG, style="gbm", n_rounds=10),
    ModelSpec.make(Family.MLP, CLS, hidden=(8,), epochs=5),
], ids=lambda s: s.kind)
def test_same_seed_gives_byte_identical_models(spec):
    m, y = toy(task=spec.task)
    a, b = train(m, y, spec), train(m, y, spec)
    assert a.dumps() == b.dumps()


def test_model_save_load_roundtrip(tmp_path):
    m, y = toy()
    for spec in (ModelSpec.make(Family.GBT, CLS, style="xgb", n_rounds=5),
                 ModelSpec.make(Family.MLP, CLS, hidden=(4,), epochs=3)):
        model = train(m, y, spec)
        model.save(tmp_path / "m.json")
        back = TrainedModel.load(tmp_path / "m.json")
        np.testing.assert_array_equal(back.predict(m), model.predict(m))
        assert back.spec == spec


def test_column_permutation_equivariance():
    m, y = toy()
    perm = np.random.default_rng(0).permutation(m.shape[1])
    shuffled = FeatureMatrix([m.column_names[j] for j in perm], m.values[:, perm], m.row_ids,
                             [m.column_kinds[j] for j in perm])
    for spec in (ModelSpec.make(Family.GLM, CLS), ModelSpec.make(Family.GBT, CLS, style="gbm", n_rounds=10)):
        a = train(m, y, spec)
        b = train(shuffled, y, spec)
        np.testing.assert_allclose(a.predict(m), b.predict(shuffled))
        np.testing.assert_allclose(a.predict(shuffled), a.predict(m))


def test_rejects_bad_inputs():
    m, y = toy()
    with pytest.raises(TrainingError):
        train(m, y * 2, ModelSpec.make(Family.GLM, CLS))
    bad = FeatureMatrix.from_array(np.where(np.eye(len(m), m.shape[1]) > 0, np.nan, m.values))
    with pytest.raises(TrainingError):
        train(bad, y, ModelSpec.make(Family.GLM, CLS))
    with pytest.raises(TrainingError):
        train(m, np.zeros(len(m)), ModelSpec.make(Family.RANDOM_FOREST, CLS))
    with pytest.raises(ValueError):
        train_glm(m, y, ModelSpec.make(Family.MLP, CLS))
    with pytest.raises(ValueError):
        train(m, y, ModelSpec.make(Family.MLP, CLS, hidden=(0,)))
    model = train(m, y, ModelSpec.make(Family.GLM, CLS))
    with pytest.raises(Exception):
        model.predict(FeatureMatrix.from_array(m.values[:, :3]))


def test_spec_json_roundtrip():
    spec = ModelSpec.make(Family.MLP, REG, 7, hidden=[8, 4])
    assert ModelSpec.from_json(spec.to_json()) == spec
    assert spec.params["hidden"] == (8, 4)
    assert spec.kind == "DL"
    assert ModelSpec.make(Family.GBT, CLS, style="xgb").kind == "XGB"
