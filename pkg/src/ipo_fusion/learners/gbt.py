"""Stagewise gradient-boosted regression trees.

style="xgb": leaves are regularized Newton steps -G/(H + lambda), splits by second-order gain.
style="gbm": trees are least-squares fits to the negative gradient, leaves are mean residuals.
"""
from __future__ import annotations

import numpy as np

from .base import LearnerTask
from .glm import sigmoid
from .tree import Binning, Tree, build_tree

MAX_HALVINGS = 30


def loss(F: np.ndarray, y: np.ndarray, task: LearnerTask) -> float:
    if task is LearnerTask.CLASSIFICATION:
        return float(np.mean(np.logaddexp(0.0, F) - y * F))
    return float(0.5 * np.mean((F - y) ** 2))


def gradients(F, y, task):
    if task is LearnerTask.CLASSIFICATION:
        p = sigmoid(F)
        return p - y, p * (1.0 - p)
    return F - y, np.ones_like(F)


def fit(X, y, task: LearnerTask, hp: dict, seed: int) -> dict:
    y = y.astype(float)
    style = hp.get("style", "xgb")
    eta = float(hp.get("learning_rate", 0.1))
    depth = int(hp.get("max_depth", 3))
    rounds = int(hp.get("n_rounds", 200))
    lam = float(hp.get("reg_lambda", 1.0))
    min_leaf = int(hp.get("min_samples_leaf", 1))
    if style not in ("xgb", "gbm"):
        raise ValueError(f"unknown boosting style {style!r}")

    if np.all(y == y[0]):
        return {"constant": float(y[0]), "init": 0.0, "trees": [], "scales": [], "train_loss": []}
    if task is LearnerTask.CLASSIFICATION:
        p = y.mean()
        init = float(np.log(p / (1 - p)))
    else:
        init = float(y.mean())

    binning = Binning.fit(X)
    codes = binning.transform(X)
    F = np.full(len(y), init)
    history = [loss(F, y, task)]
    trees, scales = [], []
    for _ in range(rounds):
        g, h = gradients(F, y, task)
        if style == "xgb":
            tree = build_tree(codes, binning, -g, h, lam=lam, max_depth=depth, min_samples_leaf=min_leaf)
        else:
            tree = build_tree(codes, binning, -g, np.ones_like(g), max_depth=depth, min_samples_leaf=min_leaf)
        step = tree.predict(X)
        if not np.any(step):
            break
        # halve the shrinkage until the round does not increase training loss
        scale = eta
        for _ in range(MAX_HALVINGS):
            cand = F + scale * step
            new_loss = loss(cand, y, task)
            if new_loss <= history[-1]:
                break
            scale *= 0.5
        else:
            break
        F = cand
        history.append(new_loss)
        trees.append(tree.to_state())
        scales.append(scale)
    return {"constant": None, "init": init, "trees": trees, "scales": np.asarray(scales),
            "train_loss": np.asarray(history)}


def raw_score(state: dict, X: np.ndarray) -> np.ndarray:
    F = np.full(X.shape[0], state["init"])
    for t, s in zip(state["trees"], state["scales"]):
        F += s * Tree.from_state(t).predict(X)
    return F


def predict(state: dict, X: np.ndarray, task: LearnerTask) -> np.ndarray:
    if state.get("constant") is not None:
        return np.full(X.shape[0], state["constant"])
    F = raw_score(state, X)
    return sigmoid(F) if task is LearnerTask.CLASSIFICATION else F
