"""Text meta-features: per-column classifiers over text embeddings emit P(direction = 1).

Training rows get out-of-fold probabilities so that no row is scored by a model that saw it.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset import IpoRecord, Target, derive_labels, parse_date
from .features import TEXT_COLUMNS, FeatureMatrix
from .learners import KINDS, LearnerTask, TrainedModel, automl_select, make_folds

logger = logging.getLogger(__name__)

NEUTRAL = 0.5
MIN_TEXTS = 20


class Embedder(Protocol):
    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@dataclass
class TextModelConfig:
    kinds: tuple[str, ...] = KINDS
    budget: int = 1
    k: int = 5
    seed: int = 42
    min_texts: int = MIN_TEXTS
    include_ensemble: bool = True


def column_text(record: IpoRecord, column: str, with_news: bool = False) -> str | None:
    if column == "full_text_content":
        parts = [record.full_text_content]
        if with_news:
            parts.append(record.news_content)
        text = " ".join(p for p in parts if p and p.strip())
    elif column.startswith("answer_"):
        text = record.answers[int(column.split("_")[1]) - 1] or ""
    else:
        raise KeyError(f"unknown text column {column!r}")
    return text if text.strip() else None


def embed_text_column(records: Sequence[IpoRecord], column: str, embedder: Embedder,
                      with_news: bool = False) -> list[np.ndarray | None]:
    """One vector per record that has text for ``column``; None flags an absent text."""
    texts = [column_text(r, column, with_news) for r in records]
    present = [i for i, t in enumerate(texts) if t is not None]
    vectors = embedder.embed_batch([texts[i] for i in present]) if present else []
    out: list[np.ndarray | None] = [None] * len(records)
    for i, v in zip(present, vectors):
        out[i] = np.asarray(v, dtype=float)
    return out


def _embedding_matrix(vectors: Sequence[np.ndarray], ids) -> FeatureMatrix:
    X = np.vstack(vectors)
    return FeatureMatrix.from_array(X, [f"emb_{j:04d}" for j in range(X.shape[1])], ids)


def _direction_labels(records: Sequence[IpoRecord], target: Target) -> list[int | None]:
    direction = Target(target).direction
    return [derive_labels(r).get(direction) for r in records]


def _fit_classifier(vectors, labels, config: TextModelConfig) -> TrainedModel | None:
    y = np.asarray(labels, dtype=float)
    if len(y) < config.min_texts or len(np.unique(y)) < 2:
        return None
    k = min(config.k, int(min(np.sum(y == 0), np.sum(y == 1))))
    if k < 2:
        return None
    board = automl_select(_embedding_matrix(vectors, list(range(len(y)))), y, LearnerTask.CLASSIFICATION,
                          budget=config.budget, k=k, seed=config.seed, kinds=config.kinds,
                          include_ensemble=config.include_ensemble)
    return board.selected.model


def train_text_prob_models(train_records: Sequence[IpoRecord], column: str, target: Target,
                           embeddings: Sequence[np.ndarray | None],
                           config: TextModelConfig | None = None) -> TrainedModel | None:
    """Leaderboard winner on embeddings alone, or None (neutral fill) when coverage is too thin."""
    config = config or TextModelConfig()
    labels = _direction_labels(train_records, target)
    rows = [i for i, (v, l) in enumerate(zip(embeddings, labels)) if v is not None and l is not None]
    if len(rows) < config.min_texts:
        logger.warning("%s: only %d texts with labels (< %d); meta-feature left neutral",
                       column, len(rows), config.min_texts)
        return None
    return _fit_classifier([embeddings[i] for i in rows], [labels[i] for i in rows], config)


def _score(model: TrainedModel | None, vectors: Sequence[np.ndarray | None]) -> np.ndarray:
    out = np.full(len(vectors), NEUTRAL)
    present = [i for i, v in enumerate(vectors) if v is not None]
    if model is None or not present:
        return out
    probs = model.predict(_embedding_matrix([vectors[i] for i in present], present))
    out[present] = np.clip(probs, 0.0, 1.0)
    return out


@dataclass
class MetaFeatureBlock:
    target: Target
    columns: tuple[str, ...]
    values: dict[tuple, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target = Target(self.target)
        for key, vec in self.values.items():
            if len(vec) != len(self.columns):
                raise ValueError(f"{key}: expected {len(self.columns)} meta-features")
            if np.any((vec < 0) | (vec > 1)):
                raise ValueError(f"{key}: meta-features must lie in [0, 1]")

    def vector(self, key: tuple) -> np.ndarray:
        return self.values.get(key, np.full(len(self.columns), NEUTRAL))

    def save(self, path: str | Path) -> None:
        rows = [{"company": k[0], "listing_date": k[1].isoformat(), "values": v.tolist()}
                for k, v in self.values.items()]
        obj = {"target": self.target.value, "columns": list(self.columns), "rows": rows,
               "provenance": self.provenance}
        Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetaFeatureBlock":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        values = {(r["company"], parse_date(r["listing_date"])): np.asarray(r["values"]) for r in obj["rows"]}
        return cls(Target(obj["target"]), tuple(obj["columns"]), values, obj.get("provenance", {}))


def meta_features(records: Sequence[IpoRecord], classifiers: Mapping[str, TrainedModel | None], target: Target,
                  embeddings: Mapping[str, Sequence[np.ndarray | None]],
                  columns: Sequence[str] = TEXT_COLUMNS) -> MetaFeatureBlock:
    """Score every record with the column classifiers; absent text or classifier gives 0.5."""
    scores = np.column_stack([_score(classifiers.get(c), embeddings[c]) for c in columns]) if records else \
        np.zeros((0, len(columns)))
    return MetaFeatureBlock(target, tuple(columns), {r.key: scores[i] for i, r in enumerate(records)})


def oof_meta_features(train_records: Sequence[IpoRecord], target: Target,
                      embeddings: Mapping[str, Sequence[np.ndarray | None]],
                      config: TextModelConfig | None = None, columns: Sequence[str] = TEXT_COLUMNS,
                      ) -> tuple[MetaFeatureBlock, dict[str, TrainedModel | None]]:
    """Out-of-fold meta-features for training rows, plus per-column classifiers refit on all training rows."""
    config = config or TextModelConfig()
    labels = _direction_labels(train_records, target)
    n = len(train_records)
    scores = np.full((n, len(columns)), NEUTRAL)
    classifiers: dict[str, TrainedModel | None] = {}
    provenance = {"seed": config.seed, "k": config.k, "kinds": list(config.kinds), "columns": {}}
    for j, column in enumerate(columns):
        vecs = embeddings[column]
        rows = np.array([i for i in range(n) if vecs[i] is not None and labels[i] is not None], dtype=int)
        record = {"n_texts": int(len(rows)), "classifier": None, "folds": None}
        if len(rows) < config.min_texts:
            logger.warning("%s: %d labelled texts (< %d); neutral fill", column, len(rows), config.min_texts)
            classifiers[column] = None
            provenance["columns"][column] = record
            continue
        y = np.asarray([labels[i] for i in rows], dtype=float)
        if len(np.unique(y)) < 2 or min(np.sum(y == 0), np.sum(y == 1)) < 2:
            classifiers[column] = None
            provenance["columns"][column] = record
            continue
        folds = make_folds(y, min(config.k, int(min(np.sum(y == 0), np.sum(y == 1)))), config.seed)
        for f in np.unique(folds):
            held = folds == f
            model = _fit_classifier([vecs[i] for i in rows[~held]], y[~held], config)
            scores[rows[held], j] = _score(model, [vecs[i] for i in rows[held]])
        classifiers[column] = _fit_classifier([vecs[i] for i in rows], y, config)
        record["classifier"] = classifiers[column].spec.name if classifiers[column] else None
        record["folds"] = {"row_ids": [list(map(str, train_records[i].key)) for i in rows],
                           "fold": folds.tolist()}
        provenance["columns"][column] = record
    block = MetaFeatureBlock(target, tuple(columns), {r.key: scores[i] for i, r in enumerate(train_records)},
                             provenance)
    return block, classifiers


def build_meta_features(train_records: Sequence[IpoRecord], test_records: Sequence[IpoRecord], target: Target,
                        embedder: Embedder, config: TextModelConfig | None = None, with_news: bool = False,
                        columns: Sequence[str] = TEXT_COLUMNS) -> tuple[MetaFeatureBlock, MetaFeatureBlock]:
    """(out-of-fold block for train, block for test scored by the full-train classifiers)."""
    train_emb = {c: embed_text_column(train_records, c, embedder, with_news) for c in columns}
    test_emb = {c: embed_text_column(test_records, c, embedder, with_news) for c in columns}
    train_block, classifiers = oof_meta_features(train_records, target, train_emb, config, columns)
    test_block = meta_features(test_records, classifiers, target, test_emb, columns)
    test_block.provenance = {"classifiers": {c: (m.spec.name if m else None) for c, m in classifiers.items()}}
    return train_block, test_block
