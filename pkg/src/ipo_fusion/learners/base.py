from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from ..features import FeatureMatrix

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class LearnerTask(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class Family(str, Enum):
    GLM = "GLM"
    RANDOM_FOREST = "RandomForest"
    GBT = "GradientBoostedTrees"
    MLP = "MLP"
    STACKED = "StackedEnsemble"


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    task: LearnerTask
    hyperparameters: tuple[tuple[str, Any], ...] = ()
    seed: int = 42

    @classmethod
    def make(cls, family, task, seed: int = 42, **hyperparameters) -> "ModelSpec":
        hp = tuple(sorted((k, _freeze(v)) for k, v in hyperparameters.items()))
        return cls(Family(family), LearnerTask(task), hp, seed)

    @property
    def params(self) -> dict[str, Any]:
        return dict(self.hyperparameters)

    @property
    def kind(self) -> str:
        """Short family label used on leaderboards (GLM, DRF, XGB, GBM, DL, Ens)."""
        if self.family is Family.GBT:
            return "XGB" if self.params.get("style", "xgb") == "xgb" else "GBM"
        return {Family.GLM: "GLM", Family.RANDOM_FOREST: "DRF", Family.MLP: "DL",
                Family.STACKED: "Ens"}[self.family]

    @property
    def name(self) -> str:
        hp = ",".join(f"{k}={v}" for k, v in self.hyperparameters)
        return f"{self.kind}({hp})" if hp else self.kind

    def to_json(self) -> dict:
        return {"family": self.family.value, "task": self.task.value,
                "hyperparameters": {k: list(v) if isinstance(v, tuple) else v for k, v in self.hyperparameters},
                "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls.make(obj["family"], obj["task"], obj["seed"], **obj["hyperparameters"])


def as_matrix(matrix) -> FeatureMatrix:
    if isinstance(matrix, FeatureMatrix):
        return matrix
    return FeatureMatrix.from_array(matrix)


def canonical(matrix) -> tuple[np.ndarray, list[str]]:
    """Columns sorted by name, so fitted models do not depend on column order."""
    m = as_matrix(matrix)
    order = sorted(range(len(m.column_names)), key=lambda j: m.column_names[j])
    return m.values[:, order], [m.column_names[j] for j in order]


def check_finite(X: np.ndarray, y: np.ndarray) -> None:
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise TrainingError("non-finite values in training data")
    if X.shape[0] != y.shape[0]:
        raise TrainingError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise TrainingError("no training rows")


def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        # single-underscore keys hold in-memory caches
        return {k: _to_jsonable(v) for k, v in value.items() if k == "__ndarray__" or not k.startswith("_")}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _from_jsonable(value):
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.asarray(value["__ndarray__"], dtype=value["dtype"])
        return {k: _from_jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_from_jsonable(v) for v in value]
    return value


@dataclass
class TrainedModel:
    spec: ModelSpec
    state: dict
    feature_names: list[str]
    cv_metric: float | None = None
    extra: dict = field(default_factory=dict)

    def _aligned(self, matrix) -> np.ndarray:
        m = as_matrix(matrix)
        if sorted(m.column_names) != self.feature_names:
            missing = sorted(set(self.feature_names) - set(m.column_names))
            unexpected = sorted(set(m.column_names) - set(self.feature_names))
            raise ValueError(f"feature columns differ from training (missing={missing[:5]}, "
                             f"unexpected={unexpected[:5]})")
        index = {n: j for j, n in enumerate(m.column_names)}
        return m.values[:, [index[n] for n in self.feature_names]]

    def predict(self, matrix) -> np.ndarray:
        """Class-1 probabilities for classification, values for regression."""
        from . import predict_state

        return predict_state(self.spec, self.state, self._aligned(matrix))

    def predict_class(self, matrix, threshold: float = 0.5) -> np.ndarray:
        return (self.predict(matrix) > threshold).astype(int)

    def to_json(self) -> dict:
        return {"format_version": MODEL_FORMAT_VERSION, "spec": self.spec.to_json(),
                "feature_names": self.feature_names, "cv_metric": self.cv_metric,
                "state": _to_jsonable(self.state)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainedModel":
        if obj.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"model format {obj.get('format_version')} is not {MODEL_FORMAT_VERSION}")
        return cls(ModelSpec.from_json(obj["spec"]), _from_jsonable(obj["state"]), list(obj["feature_names"]),
                   obj.get("cv_metric"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
