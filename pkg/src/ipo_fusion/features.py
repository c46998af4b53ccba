"""Numeric/categorical feature matrix with leakage-safe fit/transform."""
from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import (
    IpoRecord,
    PriceKind,
    PriceUnavailable,
    Target,
    derive_labels,
    resolve_price,
)

logger = logging.getLogger(__name__)

TEXT_COLUMNS = ("full_text_content",) + tuple(f"answer_{i}" for i in range(1, 26))
CATEGORICAL_FIELDS = ("sector", "industry", "issue_type", "exchange")
OTHER = "OTHER"
EMPTY_WINDOW_RATE = 0.5


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    ONEHOT = "onehot"
    META = "meta_probability"


class Window(str, Enum):
    PREV_QUARTER = "prev_quarter"
    LAST_90_DAYS = "last_90d"


class FeatureError(ValueError):
    pass


class MacroUnavailable(LookupError):
    pass


@dataclass
class FeatureMatrix:
    column_names: list[str]
    values: np.ndarray
    row_ids: list[tuple]
    column_kinds: list[ColumnKind]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.row_ids), len(self.column_names))
        if len(set(self.column_names)) != len(self.column_names):
            raise FeatureError("duplicate column names")
        if len(self.column_kinds) != len(self.column_names):
            raise FeatureError("column_kinds length mismatch")

    @classmethod
    def from_array(cls, X, names: Sequence[str] | None = None, row_ids=None) -> "FeatureMatrix":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        names = list(names) if names is not None else [f"x{j:03d}" for j in range(X.shape[1])]
        row_ids = list(row_ids) if row_ids is not None else list(range(X.shape[0]))
        return cls(names, X, row_ids, [ColumnKind.NUMERIC] * len(names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __len__(self) -> int:
        return len(self.row_ids)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        ids = [self.row_ids[i] for i in np.arange(len(self.row_ids))[rows]]
        return FeatureMatrix(list(self.column_names), self.values[rows], ids, list(self.column_kinds))

    def drop_kind(self, kind: ColumnKind) -> "FeatureMatrix":
        keep = [j for j, k in enumerate(self.column_kinds) if k != kind]
        return FeatureMatrix([self.column_names[j] for j in keep], self.values[:, keep], list(self.row_ids),
                             [self.column_kinds[j] for j in keep])

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if list(other.row_ids) != list(self.row_ids):
            raise FeatureError("row ids differ")
        return FeatureMatrix(self.column_names + other.column_names, np.hstack([self.values, other.values]),
                             list(self.row_ids), self.column_kinds + other.column_kinds)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row_id"] + self.column_names)
            for rid, row in zip(self.row_ids, self.values):
                w.writerow([_row_id_text(rid)] + [repr(float(v)) for v in row])

    def kinds_json(self) -> dict[str, str]:
        return {n: k.value for n, k in zip(self.column_names, self.column_kinds)}


def _row_id_text(rid) -> str:
    if isinstance(rid, tuple):
        return "|".join(x.isoformat() if isinstance(x, dt.date) else str(x) for x in rid)
    return str(rid)


def read_feature_csv(path: str | Path, kinds: Mapping[str, str] | None = None) -> FeatureMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float).reshape(len(ids), len(names))
    col_kinds = [ColumnKind(kinds[n]) if kinds else ColumnKind.NUMERIC for n in names]
    return FeatureMatrix(names, values, ids, col_kinds)


@dataclass
class FeatureConfig:
    imputation: str = "median"
    rare_category_threshold: int = 5
    include_meta: bool = False
    target: Target = Target.DIRECTION_CLOSE

    def __post_init__(self):
        self.target = Target(self.target)
        if self.rare_category_threshold < 1:
            raise FeatureError("rare_category_threshold must be >= 1")
        if self.imputation not in ("median", "mean"):
            raise FeatureError(f"unknown imputation {self.imputation!r}")


# ---------------------------------------------------------------- engineered features


def _success_close(record: IpoRecord) -> int | None:
    try:
        return int(resolve_price(record, PriceKind.CLOSE) > record.issue_price)
    except PriceUnavailable:
        return None


def previous_quarter(day: dt.date) -> tuple[dt.date, dt.date]:
    q = (day.month - 1) // 3
    year, q = (day.year, q - 1) if q > 0 else (day.year - 1, 3)
    start = dt.date(year, 3 * q + 1, 1)
    end_month = 3 * q + 3
    end = dt.date(year + end_month // 12, end_month % 12 + 1, 1) - dt.timedelta(days=1)
    return start, end


def _window_bounds(as_of: dt.date, window: Window) -> tuple[dt.date, dt.date]:
    if Window(window) is Window.PREV_QUARTER:
        return previous_quarter(as_of)
    return as_of - dt.timedelta(days=90), as_of - dt.timedelta(days=1)


def trailing_success_rate(records: Iterable[IpoRecord], as_of: dt.date, window: Window | str,
                          exclude: tuple | None = None) -> tuple[float, int]:
    """Share of IPOs listed inside the window (strictly before ``as_of``) that closed above issue."""
    lo, hi = _window_bounds(as_of, Window(window))
    wins = n = 0
    for rec in records:
        if exclude is not None and rec.key == exclude:
            continue
        if not (lo <= rec.listing_date <= hi and rec.listing_date < as_of):
            continue
        success = _success_close(rec)
        if success is None:
            continue
        n += 1
        wins += success
    return (wins / n, n) if n else (EMPTY_WINDOW_RATE, 0)


def join_macro(record: IpoRecord, macro_table: Mapping[int, Mapping[str, float]]) -> tuple[dict[str, float], bool]:
    """Macro row for the listing year, falling back to the latest earlier year (stale=True)."""
    year = record.listing_year
    if year in macro_table:
        return dict(macro_table[year]), False
    earlier = [y for y in macro_table if y < year]
    if not earlier:
        raise MacroUnavailable(f"no macro data for {year} or earlier")
    return dict(macro_table[max(earlier)]), True


def read_macro_table(path: str | Path) -> dict[int, dict[str, float]]:
    """CSV with a ``year`` column and one column per indicator."""
    from .dataset import parse_number

    table: dict[int, dict[str, float]] = {}
    with Path(path).open(newline="", encoding="utf-8-sig") as fh:
        for row in csv.DictReader(fh):
            year = int(row.pop("year"))
            table[year] = {k: v for k, v in ((k, parse_number(v)) for k, v in row.items()) if v is not None}
    return table


# ---------------------------------------------------------------- categoricals


def _category(record: IpoRecord, name: str) -> str | None:
    if name == "issue_type":
        return record.issue_type.value if record.issue_type else None
    if name == "exchange":
        return record.listed_exchanges()
    return getattr(record, name)


@dataclass
class CategoricalEncoder:
    threshold: int = 1
    levels: dict[str, list[str]] = field(default_factory=dict)

    def fit(self, records: Sequence[IpoRecord]) -> "CategoricalEncoder":
        if self.threshold < 1:
            raise FeatureError("threshold must be >= 1")
        self.levels = {}
        for name in CATEGORICAL_FIELDS:
            counts: dict[str, int] = {}
            for rec in records:
                value = _category(rec, name)
                if value is not None:
                    counts[value] = counts.get(value, 0) + 1
            self.levels[name] = sorted(v for v, c in counts.items() if c >= self.threshold and v != OTHER)
        return self

    @property
    def column_names(self) -> list[str]:
        return [f"{name}={level}" for name in CATEGORICAL_FIELDS for level in self.levels[name] + [OTHER]]

    def transform(self, records: Sequence[IpoRecord]) -> np.ndarray:
        out = np.zeros((len(records), len(self.column_names)))
        offset = 0
        for name in CATEGORICAL_FIELDS:
            levels = self.levels[name]
            index = {v: i for i, v in enumerate(levels)}
            for r, rec in enumerate(records):
                out[r, offset + index.get(_category(rec, name), len(levels))] = 1.0
            offset += len(levels) + 1
        return out


def encode_categoricals(train: Sequence[IpoRecord], threshold: int,
                        apply_to: Sequence[IpoRecord] | None = None) -> tuple[list[str], np.ndarray]:
    enc = CategoricalEncoder(threshold).fit(train)
    return enc.column_names, enc.transform(train if apply_to is None else apply_to)


# ---------------------------------------------------------------- numeric block


_GROUPS = (("sub", "subscription_rates"), ("fin", "financials"), ("macro", "macro"), ("mkt", "market"))
_ENGINEERED = ("success_rate_prev_quarter", "count_prev_quarter", "success_rate_last_90d", "count_last_90d")


def _dedupe(records: Iterable[IpoRecord]) -> list[IpoRecord]:
    seen, out = set(), []
    for rec in records:
        if rec.key not in seen:
            seen.add(rec.key)
            out.append(rec)
    return out


class FeaturePipeline:
    """Fits column sets, category levels and imputation statistics on training records only."""

    def __init__(self, config: FeatureConfig | None = None,
                 macro_table: Mapping[int, Mapping[str, float]] | None = None):
        self.config = config or FeatureConfig()
        self.macro_table = macro_table
        self.numeric_columns: list[str] = []
        self.fill_values: np.ndarray | None = None
        self.encoder = CategoricalEncoder(self.config.rare_category_threshold)
        self.history: list[IpoRecord] = []

    def _macro(self, rec: IpoRecord) -> tuple[dict[str, float], float | None]:
        if self.macro_table is None:
            return rec.macro, None
        try:
            values, stale = join_macro(rec, self.macro_table)
        except MacroUnavailable as exc:
            logger.warning("%s: %s", rec.company_id, exc)
            return {}, 1.0
        return values, float(stale)

    def _raw(self, rec: IpoRecord, history: Sequence[IpoRecord]) -> dict[str, float]:
        row = {"issue_price": rec.issue_price, "lot_size": float(rec.lot_size)}
        macro, stale = self._macro(rec)
        sources = {"subscription_rates": rec.subscription_rates, "financials": rec.financials,
                   "macro": macro, "market": rec.market}
        for prefix, attr in _GROUPS:
            for k, v in sources[attr].items():
                row[f"{prefix}_{k}"] = v
        if stale is not None:
            row["macro_stale"] = stale
        as_of = rec.subscription_close_date
        for window, rate_col, count_col in ((Window.PREV_QUARTER, *_ENGINEERED[:2]),
                                            (Window.LAST_90_DAYS, *_ENGINEERED[2:])):
            rate, count = trailing_success_rate(history, as_of, window, exclude=rec.key)
            row[rate_col] = rate
            row[count_col] = float(count)
        return row

    def _numeric(self, records: Sequence[IpoRecord], history: Sequence[IpoRecord]) -> np.ndarray:
        out = np.full((len(records), len(self.numeric_columns)), np.nan)
        index = {c: j for j, c in enumerate(self.numeric_columns)}
        for i, rec in enumerate(records):
            for k, v in self._raw(rec, history).items():
                j = index.get(k)
                if j is not None and v is not None and np.isfinite(v):
                    out[i, j] = v
        return out

    def fit(self, train: Sequence[IpoRecord]) -> "FeaturePipeline":
        self.history = _dedupe(train)
        raws = [self._raw(rec, self.history) for rec in train]
        fixed = ["issue_price", "lot_size"]
        dynamic = sorted({k for raw in raws for k in raw} - set(fixed) - set(_ENGINEERED))
        self.numeric_columns = fixed + dynamic + list(_ENGINEERED)
        block = self._numeric(train, self.history)
        stat = np.nanmedian if self.config.imputation == "median" else np.nanmean
        fills = np.zeros(block.shape[1])
        for j in range(block.shape[1]):
            col = block[:, j]
            if np.isfinite(col).any():
                fills[j] = stat(col[np.isfinite(col)])
        self.fill_values = fills
        self.encoder = CategoricalEncoder(self.config.rare_category_threshold).fit(train)
        return self

    def transform(self, records: Sequence[IpoRecord], meta=None) -> FeatureMatrix:
        """``meta`` is any object exposing ``columns`` and ``vector(record_key)`` (see stacking)."""
        if self.fill_values is None:
            raise FeatureError("pipeline is not fitted")
        history = _dedupe(list(self.history) + list(records))
        numeric = self._numeric(records, history)
        mask = ~np.isfinite(numeric)
        numeric[mask] = np.broadcast_to(self.fill_values, numeric.shape)[mask]
        onehot = self.encoder.transform(records)
        names = list(self.numeric_columns) + self.encoder.column_names
        kinds = [ColumnKind.NUMERIC] * len(self.numeric_columns) + [ColumnKind.ONEHOT] * onehot.shape[1]
        blocks = [numeric, onehot]
        if self.config.include_meta:
            if meta is None:
                raise FeatureError("include_meta is set but no meta-probabilities were supplied")
            meta_cols = [f"meta_{c}" for c in meta.columns]
            blocks.append(np.array([meta.vector(rec.key) for rec in records], dtype=float).reshape(len(records), -1))
            names += meta_cols
            kinds += [ColumnKind.META] * len(meta_cols)
        values = np.hstack(blocks)
        if not np.isfinite(values).all():
            raise FeatureError("non-finite values after imputation")
        return FeatureMatrix(names, values, [rec.key for rec in records], kinds)


def labeled(records: Sequence[IpoRecord], target: Target) -> list[IpoRecord]:
    return [r for r in records if derive_labels(r).get(target) is not None]


def target_vector(records: Sequence[IpoRecord], target: Target) -> np.ndarray:
    values = [derive_labels(r).get(target) for r in records]
    if any(v is None for v in values):
        raise FeatureError(f"target {Target(target).value} not derivable for every record")
    return np.asarray(values, dtype=float)


def build_feature_matrix(records: Sequence[IpoRecord], config: FeatureConfig, meta=None,
                         pipeline: FeaturePipeline | None = None) -> FeatureMatrix:
    """Matrix over the records labelled for ``config.target``; fits a new pipeline unless one is given."""
    rows = labeled(records, config.target)
    if pipeline is None:
        pipeline = FeaturePipeline(config).fit(rows)
    return pipeline.transform(rows, meta=meta)
