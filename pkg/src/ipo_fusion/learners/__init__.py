"""From-scratch learners (GLM, random forest, two boosting styles, MLP), CV selection and stacking."""
from __future__ import annotations

import numpy as np

from . import forest, gbt, glm, mlp
from .base import Family, LearnerTask, ModelSpec, TrainedModel, TrainingError, canonical, check_finite

_FAMILIES = {Family.GLM: glm, Family.RANDOM_FOREST: forest, Family.GBT: gbt, Family.MLP: mlp}


def predict_state(spec: ModelSpec, state: dict, X: np.ndarray) -> np.ndarray:
    if spec.family is Family.STACKED:
        from .selection import predict_stacked

        return predict_stacked(spec, state, X)
    return _FAMILIES[spec.family].predict(state, X, spec.task)


def train(matrix, labels, spec: ModelSpec) -> TrainedModel:
    if spec.family is Family.STACKED:
        raise TrainingError("use stacked_ensemble() to build ensembles")
    X, names = canonical(matrix)
    y = np.asarray(labels, dtype=float).ravel()
    check_finite(X, y)
    if spec.task is LearnerTask.CLASSIFICATION and not set(np.unique(y)) <= {0.0, 1.0}:
        raise TrainingError("classification labels must be 0/1")
    if spec.family is Family.RANDOM_FOREST and spec.task is LearnerTask.CLASSIFICATION and len(np.unique(y)) < 2:
        raise TrainingError("random forest classification needs both classes")
    state = _FAMILIES[spec.family].fit(X, y, spec.task, spec.params, spec.seed)
    return TrainedModel(spec, state, names)


def _checked(spec: ModelSpec, family: Family) -> ModelSpec:
    if spec.family is not family:
        raise ValueError(f"expected a {family.value} spec, got {spec.family.value}")
    return spec


def train_glm(matrix, labels, spec: ModelSpec) -> TrainedModel:
    return train(matrix, labels, _checked(spec, Family.GLM))


def train_random_forest(matrix, labels, spec: ModelSpec) -> TrainedModel:
    return train(matrix, labels, _checked(spec, Family.RANDOM_FOREST))


def train_gbt(matrix, labels, spec: ModelSpec) -> TrainedModel:
    return train(matrix, labels, _checked(spec, Family.GBT))


def train_mlp(matrix, labels, spec: ModelSpec) -> TrainedModel:
    return train(matrix, labels, _checked(spec, Family.MLP))


from .selection import (  # noqa: E402
    KINDS,
    Leaderboard,
    automl_select,
    cross_validate,
    default_grid,
    make_folds,
    out_of_fold_predictions,
    stacked_ensemble,
)

__all__ = [
    "Family", "LearnerTask", "ModelSpec", "TrainedModel", "TrainingError", "Leaderboard",
    "train", "train_glm", "train_random_forest", "train_gbt", "train_mlp", "predict_state",
    "cross_validate", "out_of_fold_predictions", "make_folds", "automl_select", "stacked_ensemble",
    "default_grid", "KINDS",
]
