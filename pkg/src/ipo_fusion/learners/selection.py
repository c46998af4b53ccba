"""Cross-validation, grid selection across the five learner kinds, and a GLM-stacked ensemble."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .. import metrics
from ..features import FeatureMatrix
from . import glm
from .base import Family, LearnerTask, ModelSpec, TrainedModel, TrainingError, as_matrix

logger = logging.getLogger(__name__)

DEFAULT_SEED = 42
KINDS = ("GLM", "DRF", "XGB", "GBM", "DL")
META_LAMBDA = 1e-4


def default_grid(kind: str, task: LearnerTask | str, seed: int = DEFAULT_SEED) -> list[ModelSpec]:
    """Hyperparameter grid per learner kind, cheapest configuration first."""
    task = LearnerTask(task)
    if kind == "GLM":
        return [ModelSpec.make(Family.GLM, task, seed, **{"lambda": lam}) for lam in (0.001, 0.01, 0.1)]
    if kind == "DRF":
        return [ModelSpec.make(Family.RANDOM_FOREST, task, seed, n_trees=t, max_depth=d)
                for t in (100, 300) for d in (8, None)]
    if kind in ("XGB", "GBM"):
        style = kind.lower()
        return [ModelSpec.make(Family.GBT, task, seed, style=style, learning_rate=eta, max_depth=d, n_rounds=r)
                for r in (200, 500) for d in (3, 5) for eta in (0.1, 0.05)]
    if kind == "DL":
        return [ModelSpec.make(Family.MLP, task, seed, hidden=h) for h in ((64, 32), (32, 16))]
    raise ValueError(f"unknown learner kind {kind!r}")


def primary_metric(task: LearnerTask, preds, labels) -> float:
    if task is LearnerTask.CLASSIFICATION:
        return metrics.auc(preds, labels)
    return metrics.mae(preds, labels)


def fold_metric(task: LearnerTask, preds, labels, folds) -> float:
    """Fold-size-weighted mean of the per-fold primary metric.

    Pooling AUC across folds mixes differently calibrated models (a constant predictor then scores
    below 0.5); averaging per fold does not. For MAE the two coincide.
    """
    preds, labels, folds = np.asarray(preds), np.asarray(labels), np.asarray(folds)
    total = 0.0
    for f in np.unique(folds):
        held = folds == f
        total += held.sum() * primary_metric(task, preds[held], labels[held])
    return float(total / len(labels))


def better(task: LearnerTask, a: float, b: float) -> bool:
    return a > b if task is LearnerTask.CLASSIFICATION else a < b


def _sort_key(task: LearnerTask):
    return (lambda v: -v) if task is LearnerTask.CLASSIFICATION else (lambda v: v)


def make_folds(labels, k: int = 5, seed: int = DEFAULT_SEED, stratify: bool = True) -> np.ndarray:
    """Fold id per row. Stratified assignment deals each class round-robin over a seeded shuffle."""
    y = np.asarray(labels).ravel()
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(y) < k:
        raise ValueError(f"{len(y)} rows cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    if stratify:
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    else:
        order = rng.permutation(len(y))
    folds = np.empty(len(y), dtype=int)
    folds[order] = np.arange(len(y)) % k
    if stratify:
        folds = _merge_single_class_folds(folds, y)
    return folds


def _merge_single_class_folds(folds: np.ndarray, y: np.ndarray) -> np.ndarray:
    if len(np.unique(y)) < 2:
        return folds
    folds = folds.copy()
    while True:
        ids = list(np.unique(folds))
        bad = next((f for f in ids if len(np.unique(y[folds == f])) < 2), None)
        if bad is None:
            break
        if len(ids) <= 2:
            raise TrainingError("cannot form two folds that each contain both classes")
        pos = ids.index(bad)
        neighbor = ids[pos + 1] if pos + 1 < len(ids) else ids[pos - 1]
        logger.info("fold %d holds a single class; merged into fold %d", bad, neighbor)
        folds[folds == bad] = neighbor
    remap = {f: i for i, f in enumerate(np.unique(folds))}
    return np.array([remap[f] for f in folds])


def out_of_fold_predictions(matrix, labels, spec: ModelSpec, k: int = 5, seed: int = DEFAULT_SEED,
                            folds: np.ndarray | None = None) -> np.ndarray:
    from . import train

    m = as_matrix(matrix)
    y = np.asarray(labels, dtype=float).ravel()
    if folds is None:
        folds = make_folds(y, k, seed, stratify=spec.task is LearnerTask.CLASSIFICATION)
    oof = np.empty(len(y))
    for f in np.unique(folds):
        held = folds == f
        model = train(m.take(~held), y[~held], spec)
        oof[held] = model.predict(m.take(held))
    return oof


def cross_validate(matrix, labels, spec: ModelSpec, k: int = 5, seed: int = DEFAULT_SEED) -> float:
    """Out-of-fold AUC (classification) or MAE (regression), averaged over folds."""
    y = np.asarray(labels, dtype=float).ravel()
    folds = make_folds(y, k, seed, stratify=spec.task is LearnerTask.CLASSIFICATION)
    oof = out_of_fold_predictions(matrix, y, spec, folds=folds)
    return fold_metric(spec.task, oof, y, folds)


# ---------------------------------------------------------------- stacking


def _meta_matrix(level_one: np.ndarray) -> FeatureMatrix:
    return FeatureMatrix.from_array(level_one, [f"base_{i:03d}" for i in range(level_one.shape[1])])


def stacked_ensemble(base: Sequence[TrainedModel], matrix, labels, k: int = 5, seed: int = DEFAULT_SEED,
                     level_one: np.ndarray | None = None, folds: np.ndarray | None = None) -> TrainedModel:
    """Non-negative GLM over the bases' out-of-fold predictions.

    The returned ``cv_metric`` scores the meta-learner on those out-of-fold predictions, per fold.
    ``level_one`` and ``folds`` (when given) must come from the same fold assignment.
    """
    if len(base) < 2:
        raise TrainingError("a stacked ensemble needs at least two base models")
    task = base[0].spec.task
    names = base[0].feature_names
    if any(b.spec.task is not task or b.feature_names != names for b in base):
        raise TrainingError("base models must share task and feature columns")
    y = np.asarray(labels, dtype=float).ravel()
    if folds is None:
        folds = make_folds(y, k, seed, stratify=task is LearnerTask.CLASSIFICATION)
    if level_one is None:
        level_one = np.column_stack([out_of_fold_predictions(matrix, y, b.spec, folds=folds) for b in base])
    level_one = np.asarray(level_one, dtype=float)
    meta_state = glm.fit(level_one, y, task, {"lambda": META_LAMBDA, "non_negative": True}, seed)
    fitted = glm.predict(meta_state, level_one, task)
    spec = ModelSpec.make(Family.STACKED, task, seed, bases=tuple(b.spec.name for b in base))
    state = {"bases": [b.to_json() for b in base], "meta": meta_state}
    model = TrainedModel(spec, state, list(names), cv_metric=fold_metric(task, fitted, y, folds))
    model.extra["level_one"] = level_one
    return model


def predict_stacked(spec: ModelSpec, state: dict, X: np.ndarray) -> np.ndarray:
    bases = state.get("_models")
    if bases is None:
        bases = [TrainedModel.from_json(b) if isinstance(b, dict) else b for b in state["bases"]]
        state["_models"] = bases
    names = bases[0].feature_names
    m = FeatureMatrix.from_array(X, names)
    level_one = np.column_stack([b.predict(m) for b in bases])
    return glm.predict(state["meta"], level_one, spec.task)


# ---------------------------------------------------------------- leaderboard


@dataclass
class LeaderboardEntry:
    spec: ModelSpec
    cv_metric: float
    model: TrainedModel | None = None

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def kind(self) -> str:
        return self.spec.kind


@dataclass
class Leaderboard:
    task: LearnerTask
    entries: list[LeaderboardEntry]
    ensemble: LeaderboardEntry | None = None
    metric_name: str = field(init=False)

    def __post_init__(self):
        key = _sort_key(self.task)
        self.entries = sorted(self.entries, key=lambda e: key(e.cv_metric))
        self.metric_name = "auc" if self.task is LearnerTask.CLASSIFICATION else "mae"

    @property
    def selected(self) -> LeaderboardEntry:
        return self.entries[0]

    def base_entries(self) -> list[LeaderboardEntry]:
        return [e for e in self.entries if e.spec.family is not Family.STACKED]

    def best_of_kind(self) -> dict[str, LeaderboardEntry]:
        out: dict[str, LeaderboardEntry] = {}
        for e in self.entries:
            out.setdefault(e.kind, e)
        return out

    def to_json(self) -> dict:
        return {"task": self.task.value, "metric": self.metric_name,
                "entries": [{"name": e.name, "kind": e.kind, "cv_metric": e.cv_metric, "spec": e.spec.to_json()}
                            for e in self.entries],
                "selected": self.selected.name}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")


def _candidates(task, budget, kinds, grids, seed) -> list[ModelSpec]:
    specs = []
    for kind in kinds:
        grid = [ModelSpec.make(s.family, task, seed, **s.params) for s in grids[kind]] if grids and kind in grids \
            else default_grid(kind, task, seed)
        specs.extend(grid[:budget])
    unique, seen = [], set()
    for s in specs:
        if s not in seen:
            seen.add(s)
            unique.append(s)
    return unique


def automl_select(matrix, labels, task: LearnerTask | str, budget: int = 1, k: int = 5,
                  seed: int = DEFAULT_SEED, kinds: Iterable[str] = KINDS,
                  grids: Mapping[str, Sequence[ModelSpec]] | None = None,
                  include_ensemble: bool = True, candidates: Sequence[ModelSpec] | None = None) -> Leaderboard:
    """Cross-validate up to ``budget`` grid points per kind, refit each on all rows, and stack the best of each kind."""
    from . import train

    task = LearnerTask(task)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    m = as_matrix(matrix)
    y = np.asarray(labels, dtype=float).ravel()
    specs = _candidates(task, budget, tuple(kinds), grids, seed) if candidates is None else list(dict.fromkeys(candidates))
    folds = make_folds(y, k, seed, stratify=task is LearnerTask.CLASSIFICATION)
    entries, oof = [], {}
    for spec in specs:
        preds = out_of_fold_predictions(m, y, spec, folds=folds)
        score = fold_metric(task, preds, y, folds)
        model = train(m, y, spec)
        model.cv_metric = score
        oof[spec] = preds
        entries.append(LeaderboardEntry(spec, score, model))
        logger.info("%s cv %s=%.4f", spec.name, "auc" if task is LearnerTask.CLASSIFICATION else "mae", score)
    board = Leaderboard(task, entries)
    if include_ensemble:
        bests = [e for e in board.best_of_kind().values()]
        if len(bests) >= 2:
            level_one = np.column_stack([oof[e.spec] for e in bests])
            ens = stacked_ensemble([e.model for e in bests], m, y, seed=seed, level_one=level_one, folds=folds)
            board.ensemble = LeaderboardEntry(ens.spec, ens.cv_metric, ens)
            board = Leaderboard(task, entries + [board.ensemble], board.ensemble)
    return board
