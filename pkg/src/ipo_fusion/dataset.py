"""IPO record ingestion, label derivation and the chronological train/test split."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import re
import unicodedata
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)

N_QUESTIONS = 25
TRAIN_LAST_YEAR = 2022
TEST_YEAR = 2023


class DatasetError(ValueError):
    pass


class PriceUnavailable(LookupError):
    """Neither exchange reports the requested listing-day price."""


class Board(str, Enum):
    MAIN = "MainBoard"
    SME = "SME"

    @classmethod
    def parse(cls, value: str | "Board") -> "Board":
        if isinstance(value, Board):
            return value
        key = re.sub(r"[^a-z]", "", str(value).lower())
        if key in ("mainboard", "main", "mb"):
            return cls.MAIN
        if key == "sme":
            return cls.SME
        raise DatasetError(f"unknown board {value!r}")


class IssueType(str, Enum):
    FIXED_PRICE = "FixedPrice"
    BOOK_BUILDING = "BookBuilding"


class PriceKind(str, Enum):
    OPEN = "open"
    HIGH = "high"
    CLOSE = "close"


class Task(str, Enum):
    DIRECTION = "direction"
    UNDERPRICING = "underpricing"


class Target(str, Enum):
    DIRECTION_OPEN = "direction_open"
    DIRECTION_HIGH = "direction_high"
    DIRECTION_CLOSE = "direction_close"
    UNDERPRICING_OPEN = "underpricing_open"
    UNDERPRICING_HIGH = "underpricing_high"
    UNDERPRICING_CLOSE = "underpricing_close"

    @classmethod
    def of(cls, task: Task | str, price: PriceKind | str) -> "Target":
        return cls(f"{Task(task).value}_{PriceKind(price).value}")

    @property
    def task(self) -> Task:
        return Task(self.value.split("_")[0])

    @property
    def price(self) -> PriceKind:
        return PriceKind(self.value.split("_")[1])

    @property
    def direction(self) -> "Target":
        return Target.of(Task.DIRECTION, self.price)


EXCHANGES = ("NSE", "BSE")


@dataclass(frozen=True)
class ListingPrices:
    open: float | None = None
    high: float | None = None
    close: float | None = None

    def get(self, which: PriceKind) -> float | None:
        return getattr(self, PriceKind(which).value)

    def any(self) -> bool:
        return any(v is not None for v in (self.open, self.high, self.close))


@dataclass(frozen=True)
class IpoRecord:
    company_id: str
    board: Board
    listing_date: dt.date
    subscription_close_date: dt.date
    issue_price: float
    lot_size: int
    issue_type: IssueType | None = None
    exchange_prices: dict[str, ListingPrices] = field(default_factory=dict)
    subscription_rates: dict[str, float] = field(default_factory=dict)
    financials: dict[str, float] = field(default_factory=dict)
    macro: dict[str, float] = field(default_factory=dict)
    market: dict[str, float] = field(default_factory=dict)
    sector: str | None = None
    industry: str | None = None
    full_text_content: str | None = None
    news_content: str | None = None
    answers: tuple[str | None, ...] = (None,) * N_QUESTIONS
    gmp: float | None = None

    def __post_init__(self):
        if not self.issue_price > 0:
            raise DatasetError(f"{self.company_id}: issue_price must be > 0")
        if self.lot_size < 1:
            raise DatasetError(f"{self.company_id}: lot_size must be >= 1")
        if len(self.answers) != N_QUESTIONS:
            raise DatasetError(f"{self.company_id}: expected {N_QUESTIONS} answer slots, got {len(self.answers)}")
        for exchange, prices in self.exchange_prices.items():
            for v in (prices.open, prices.high, prices.close):
                if v is not None and not v > 0:
                    raise DatasetError(f"{self.company_id}: non-positive {exchange} price {v}")
        for cat, v in self.subscription_rates.items():
            if v < 0:
                raise DatasetError(f"{self.company_id}: negative subscription rate for {cat}")

    @property
    def key(self) -> tuple[str, dt.date]:
        return record_key(self.company_id, self.listing_date)

    @property
    def listing_year(self) -> int:
        return self.listing_date.year

    def listed_exchanges(self) -> str:
        present = [ex for ex in EXCHANGES if ex in self.exchange_prices and self.exchange_prices[ex].any()]
        return "+".join(present) if present else "NONE"


@dataclass(frozen=True)
class LabelSet:
    """Six targets; a value is None when the target's price could not be resolved."""

    direction_open: int | None = None
    direction_high: int | None = None
    direction_close: int | None = None
    underpricing_open: float | None = None
    underpricing_high: float | None = None
    underpricing_close: float | None = None

    def get(self, target: Target):
        return getattr(self, Target(target).value)

    def any(self) -> bool:
        return any(v is not None for v in asdict(self).values())


@dataclass
class DatasetSplit:
    train: list[IpoRecord]
    test: list[IpoRecord]
    excluded: list[IpoRecord]


def normalize_company(name: str) -> str:
    ascii_name = unicodedata.normalize("NFKD", name).encode("ascii", "ignore").decode()
    return re.sub(r"\s+", " ", ascii_name).strip().lower()


def record_key(company: str, listing_date: dt.date) -> tuple[str, dt.date]:
    return normalize_company(company), listing_date


# ---------------------------------------------------------------- prices/labels


def resolve_price(record: IpoRecord, which: PriceKind | str) -> float:
    """NSE price when present, else BSE."""
    which = PriceKind(which)
    for exchange in EXCHANGES:
        prices = record.exchange_prices.get(exchange)
        if prices is not None and prices.get(which) is not None:
            return prices.get(which)
    raise PriceUnavailable(f"{record.company_id}: no {which.value} price on any exchange")


def underpricing(price: float, issue_price: float) -> float:
    return (price - issue_price) / issue_price


def derive_labels(record: IpoRecord) -> LabelSet:
    values = {}
    for which in PriceKind:
        try:
            price = resolve_price(record, which)
        except PriceUnavailable as exc:
            logger.info("excluded from %s targets: %s", which.value, exc)
            continue
        values[f"direction_{which.value}"] = int(price > record.issue_price)
        values[f"underpricing_{which.value}"] = underpricing(price, record.issue_price)
    return LabelSet(**values)


def split_by_year(records: Iterable[IpoRecord]) -> DatasetSplit:
    """Listing year <= 2022 trains, 2023 tests; later years and unlabeled rows are excluded."""
    train, test, excluded = [], [], []
    for rec in records:
        if not derive_labels(rec).any() or rec.listing_year > TEST_YEAR:
            excluded.append(rec)
        elif rec.listing_year <= TRAIN_LAST_YEAR:
            train.append(rec)
        else:
            test.append(rec)
    return DatasetSplit(train, test, excluded)


# ---------------------------------------------------------------- parsing

MANDATORY_COLUMNS = ("company", "listing_date", "issue_price", "lot_size")
PRICE_COLUMNS = {f"{ex.lower()}_{k.value}": (ex, k) for ex in EXCHANGES for k in PriceKind}
PREFIXES = {"sub_": "subscription_rates", "fin_": "financials", "macro_": "macro", "mkt_": "market"}

_DATE_FORMATS = ("%Y-%m-%d", "%d-%m-%Y", "%d/%m/%Y", "%b %d, %Y", "%d %b %Y", "%d-%b-%Y", "%Y/%m/%d")
_MISSING = {"", "na", "n/a", "nan", "none", "null", "-", "--"}


def parse_date(text: str) -> dt.date:
    text = text.strip()
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    raise ValueError(f"unparseable date {text!r}")


def parse_number(text: str | None) -> float | None:
    """Lenient numeric parse: strips currency marks, commas and trailing 'x'; missing markers give None."""
    if text is None:
        return None
    text = str(text).strip()
    if text.lower() in _MISSING:
        return None
    cleaned = re.sub(r"[,\s₹]|^rs\.?|x$|%$", "", text, flags=re.IGNORECASE)
    try:
        value = float(cleaned)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _parse_issue_type(text: str | None) -> IssueType | None:
    if not text:
        return None
    key = re.sub(r"[^a-z]", "", text.lower())
    if key.startswith("fixed"):
        return IssueType.FIXED_PRICE
    if key.startswith("book"):
        return IssueType.BOOK_BUILDING
    return None


def _text(value: str | None) -> str | None:
    if value is None:
        return None
    value = value.strip()
    return value or None


def _sniff_delimiter(sample: str) -> str:
    try:
        return csv.Sniffer().sniff(sample, delimiters=",\t;|").delimiter
    except csv.Error:
        return ","


def _row_to_record(row: dict[str, str], board: Board) -> IpoRecord:
    company = _text(row.get("company"))
    if company is None:
        raise ValueError("missing company")
    listing_date = parse_date(row["listing_date"])
    issue_price = parse_number(row.get("issue_price"))
    if issue_price is None or issue_price <= 0:
        raise ValueError(f"bad issue_price {row.get('issue_price')!r}")
    lot = parse_number(row.get("lot_size"))
    if lot is None or lot < 1 or lot != int(lot):
        raise ValueError(f"bad lot_size {row.get('lot_size')!r}")

    close_text = _text(row.get("subscription_close_date"))
    try:
        sub_close = parse_date(close_text) if close_text else listing_date
    except ValueError:
        sub_close = listing_date
    if not close_text:
        logger.debug("%s: no subscription_close_date, using listing date", company)

    raw_prices: dict[str, dict[str, float]] = {}
    for col, (exchange, kind) in PRICE_COLUMNS.items():
        value = parse_number(row.get(col))
        if value is not None and value > 0:
            raw_prices.setdefault(exchange, {})[kind.value] = value
    exchange_prices = {ex: ListingPrices(**vals) for ex, vals in raw_prices.items()}

    groups: dict[str, dict[str, float]] = {name: {} for name in PREFIXES.values()}
    for col, value in row.items():
        if col is None:
            continue
        for prefix, attr in PREFIXES.items():
            if col.startswith(prefix):
                number = parse_number(value)
                if number is not None and not (attr == "subscription_rates" and number < 0):
                    groups[attr][col[len(prefix):]] = number
                break

    answers = tuple(_text(row.get(f"answer_{i}")) for i in range(1, N_QUESTIONS + 1))
    board_text = _text(row.get("board"))
    return IpoRecord(
        company_id=company,
        board=Board.parse(board_text) if board_text else board,
        listing_date=listing_date,
        subscription_close_date=sub_close,
        issue_price=issue_price,
        lot_size=int(lot),
        issue_type=_parse_issue_type(row.get("issue_type")),
        exchange_prices=exchange_prices,
        sector=_text(row.get("sector")),
        industry=_text(row.get("industry")),
        full_text_content=_text(row.get("full_text_content")),
        news_content=_text(row.get("news_content")),
        answers=answers,
        gmp=parse_number(row.get("gmp")),
        **groups,
    )


def parse_records(path: str | Path, board: Board | str) -> list[IpoRecord]:
    """Parse one board's delimiter-separated file; bad mandatory fields reject the row."""
    path = Path(path)
    board = Board.parse(board)
    if not path.exists():
        raise DatasetError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        sample = fh.read(8192)
        fh.seek(0)
        reader = csv.DictReader(fh, delimiter=_sniff_delimiter(sample))
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        if header:
            missing = [c for c in MANDATORY_COLUMNS if c not in header]
            if missing:
                raise DatasetError(f"{path}: missing mandatory column(s) {', '.join(missing)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(_row_to_record(row, board))
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("%s:%d rejected: %s", path.name, lineno, exc)
    if not records:
        raise DatasetError(f"{path}: zero parseable rows")
    return records


# ---------------------------------------------------------------- auxiliary joins


def _keyed_rows(path: Path) -> Iterable[tuple[tuple[str, dt.date], dict[str, str]]]:
    with path.open(newline="", encoding="utf-8-sig") as fh:
        sample = fh.read(8192)
        fh.seek(0)
        for row in csv.DictReader(fh, delimiter=_sniff_delimiter(sample)):
            try:
                yield record_key(row["company"], parse_date(row["listing_date"])), row
            except (KeyError, ValueError) as exc:
                logger.warning("%s: skipped auxiliary row: %s", path.name, exc)


def attach_gmp(records: list[IpoRecord], path: str | Path) -> list[IpoRecord]:
    values = {key: parse_number(row.get("gmp")) for key, row in _keyed_rows(Path(path))}
    return [replace(r, gmp=values[r.key]) if r.key in values else r for r in records]


def attach_news(records: list[IpoRecord], path: str | Path) -> list[IpoRecord]:
    values = {key: _text(row.get("news_content")) for key, row in _keyed_rows(Path(path))}
    return [replace(r, news_content=values[r.key]) if r.key in values else r for r in records]


def read_answers(path: str | Path) -> dict[tuple[str, dt.date], tuple[str | None, ...]]:
    """Answers file: one JSON object per line with company, listing_date and a 25-slot answers list."""
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            answers = tuple(_text(a) if isinstance(a, str) else None for a in obj["answers"])
            if len(answers) != N_QUESTIONS:
                raise DatasetError(f"{obj['company']}: answers must have {N_QUESTIONS} slots")
            out[record_key(obj["company"], parse_date(obj["listing_date"]))] = answers
    return out


def write_answers(path: str | Path, rows: Iterable[tuple[str, dt.date, list[str | None]]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for company, listing_date, answers in rows:
            fh.write(json.dumps({"company": company, "listing_date": listing_date.isoformat(),
                                 "answers": list(answers)}, ensure_ascii=False) + "\n")


def attach_answers(records: list[IpoRecord], path: str | Path) -> list[IpoRecord]:
    answers = read_answers(path)
    return [replace(r, answers=answers[r.key]) if r.key in answers else r for r in records]


# ---------------------------------------------------------------- record store


def _record_to_json(rec: IpoRecord) -> dict:
    obj = asdict(rec)
    obj["board"] = rec.board.value
    obj["issue_type"] = rec.issue_type.value if rec.issue_type else None
    obj["listing_date"] = rec.listing_date.isoformat()
    obj["subscription_close_date"] = rec.subscription_close_date.isoformat()
    obj["answers"] = list(rec.answers)
    return obj


def _record_from_json(obj: dict) -> IpoRecord:
    obj = dict(obj)
    obj["board"] = Board(obj["board"])
    obj["issue_type"] = IssueType(obj["issue_type"]) if obj.get("issue_type") else None
    obj["listing_date"] = dt.date.fromisoformat(obj["listing_date"])
    obj["subscription_close_date"] = dt.date.fromisoformat(obj["subscription_close_date"])
    obj["exchange_prices"] = {ex: ListingPrices(**p) for ex, p in obj.get("exchange_prices", {}).items()}
    obj["answers"] = tuple(obj["answers"])
    return IpoRecord(**obj)


def write_record_store(path: str | Path, records: Iterable[IpoRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec), ensure_ascii=False, sort_keys=True) + "\n")


def read_record_store(path: str | Path) -> list[IpoRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [_record_from_json(json.loads(line)) for line in fh if line.strip()]
