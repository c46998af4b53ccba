"""Grey Market Premium baseline: sign alignment with listing gains and GMP-implied underpricing error."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .dataset import TEST_YEAR, Board, IpoRecord, PriceKind, PriceUnavailable, resolve_price, underpricing
from .metrics import RegressionReport, regression_report

ROW_LABELS = ("LP<IP", "LP=IP", "LP>IP")
COL_LABELS = ("GMP<0", "GMP=0", "GMP>0")


class Period(str, Enum):
    OVERALL = "Overall"
    YEAR_2023 = "Year2023"


def gmp_implied_underpricing(gmp: float, issue_price: float) -> float:
    if not issue_price > 0:
        raise ValueError("issue price must be positive")
    return gmp / issue_price


def alignment_rate_from_counts(counts) -> float:
    counts = np.asarray(counts)
    total = counts.sum()
    return float(np.trace(counts) / total) if total else float("nan")


@dataclass(frozen=True)
class GmpAlignmentTable:
    board: Board
    period: Period
    counts: np.ndarray
    eligible: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def alignment_rate(self) -> float:
        """Share of rows where sign(GMP) equals sign(listing price - issue price), zeros included."""
        return alignment_rate_from_counts(self.counts)

    def as_dict(self) -> dict:
        return {"board": self.board.value, "period": self.period.value, "rows": list(ROW_LABELS),
                "columns": list(COL_LABELS), "counts": self.counts.tolist(), "table_total": self.total,
                "eligible_with_gmp": self.eligible, "alignment_rate": self.alignment_rate}


def _in_period(record: IpoRecord, period: Period) -> bool:
    return Period(period) is Period.OVERALL or record.listing_year == TEST_YEAR


def with_gmp(records: Iterable[IpoRecord], board: Board | str | None, period: Period | str) -> list[IpoRecord]:
    board = Board.parse(board) if board is not None else None
    return [r for r in records
            if r.gmp is not None and (board is None or r.board is board) and _in_period(r, Period(period))]


def _open_pairs(records: Iterable[IpoRecord]):
    for r in records:
        try:
            yield r, resolve_price(r, PriceKind.OPEN)
        except PriceUnavailable:
            continue


def alignment_table(records: Iterable[IpoRecord], board: Board | str, period: Period | str) -> GmpAlignmentTable:
    """Listing price is the resolved listing-day open."""
    board, period = Board.parse(board), Period(period)
    eligible = with_gmp(records, board, period)
    counts = np.zeros((3, 3), dtype=int)
    for rec, listing in _open_pairs(eligible):
        counts[int(np.sign(listing - rec.issue_price)) + 1, int(np.sign(rec.gmp)) + 1] += 1
    return GmpAlignmentTable(board, period, counts, len(eligible))


def gmp_error(records: Iterable[IpoRecord], period: Period | str, board: Board | str | None = None
              ) -> RegressionReport:
    pairs = list(_open_pairs(with_gmp(records, board, period)))
    if not pairs:
        raise ValueError("no records with both GMP and an opening price")
    implied = [gmp_implied_underpricing(r.gmp, r.issue_price) for r, _ in pairs]
    actual = [underpricing(lp, r.issue_price) for r, lp in pairs]
    return regression_report(implied, actual)
