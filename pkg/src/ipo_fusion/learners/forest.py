"""Bagged CART forest: Gini splits and vote share for classification, variance splits and means for regression."""
from __future__ import annotations

import math

import numpy as np

from .base import LearnerTask
from .tree import Binning, Tree, build_tree


def default_mtry(p: int, task: LearnerTask) -> int:
    if task is LearnerTask.CLASSIFICATION:
        return max(1, int(math.floor(math.sqrt(p))))
    return max(1, p // 3)


def fit(X, y, task: LearnerTask, hp: dict, seed: int) -> dict:
    n_trees = int(hp.get("n_trees", 100))
    max_depth = hp.get("max_depth", 8)
    max_depth = None if max_depth in (None, "inf", math.inf) else int(max_depth)
    min_leaf = int(hp.get("min_samples_leaf", 1))
    n, p = X.shape
    mtry = int(hp.get("mtry") or default_mtry(p, task))
    binning = Binning.fit(X)
    codes = binning.transform(X)
    y = y.astype(float)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        rows = np.flatnonzero(counts)
        tree = build_tree(codes, binning, counts * y, counts, rows=rows, count=counts, max_depth=max_depth,
                          min_samples_leaf=min_leaf, max_features=mtry, rng=rng, pure_stop=True,
                          allow_zero_gain=task is LearnerTask.CLASSIFICATION)
        trees.append(tree.to_state())
    return {"trees": trees}


def predict(state: dict, X: np.ndarray, task: LearnerTask) -> np.ndarray:
    outputs = np.array([Tree.from_state(t).predict(X) for t in state["trees"]])
    if task is LearnerTask.CLASSIFICATION:
        # each tree votes with its leaf majority; a tied leaf splits its vote
        votes = np.where(outputs > 0.5, 1.0, np.where(outputs < 0.5, 0.0, 0.5))
        return votes.mean(axis=0)
    return outputs.mean(axis=0)
