from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from ipo_fusion.dataset import Board, IpoRecord, IssueType, ListingPrices

SECTORS = ("Finance", "Industrials", "Technology", "Consumer", "Healthcare")
WORDS_UP = "robust growth strong demand profitable expansion leader order book".split()
WORDS_DOWN = "losses litigation weak decline debt default penalty shortfall".split()
WORDS_NEUTRAL = "company shares issue offer registrar listing board capital office".split()


def synthetic_rows(n: int, seed: int = 0, years=range(2017, 2024), board: str = "MainBoard",
                   text_signal: float = 0.0) -> list[dict]:
    """CSV-style rows; listing-day prices depend on the QIB subscription rate plus noise.

    With ``text_signal`` > 0 a hidden factor drives both the prices and the wording of the text columns.
    """
    rng = np.random.default_rng(seed)
    rows = []
    years = list(years)
    for i in range(n):
        year = years[i % len(years)]
        listing = dt.date(year, 1, 1) + dt.timedelta(days=int(rng.integers(0, 360)))
        sub_close = listing - dt.timedelta(days=int(rng.integers(3, 8)))
        issue = float(rng.integers(50, 900))
        qib = float(rng.gamma(1.5, 10.0))
        hidden = rng.normal()
        score = 0.04 * np.log1p(qib) + text_signal * hidden + rng.normal(0, 0.12) - 0.08
        open_p = round(issue * (1 + score), 2)
        high_p = round(max(open_p, issue * (1 + score + abs(rng.normal(0, 0.05)))), 2)
        close_p = round(issue * (1 + score + rng.normal(0, 0.03)), 2)
        pool = WORDS_UP if hidden > 0 else WORDS_DOWN
        text = " ".join(rng.choice(pool, 6).tolist() + rng.choice(WORDS_NEUTRAL, 6).tolist()) \
            if text_signal > 0 else " ".join(rng.choice(WORDS_NEUTRAL, 8).tolist())
        row = {
            "company": f"Company {board} {i:04d} Ltd",
            "listing_date": listing.isoformat(),
            "subscription_close_date": sub_close.isoformat(),
            "issue_price": f"{issue:.0f}",
            "lot_size": str(int(rng.integers(10, 500))),
            "issue_type": "Book Building" if i % 3 else "Fixed Price",
            "board": board,
            "sector": SECTORS[i % len(SECTORS)],
            "industry": f"Industry {i % 7}",
            "nse_open": f"{max(open_p, 1.0)}", "nse_high": f"{max(high_p, 1.0)}", "nse_close": f"{max(close_p, 1.0)}",
            "sub_qib": f"{qib:.2f}", "sub_retail": f"{rng.gamma(2.0, 3.0):.2f}",
            "fin_revenue": f"{rng.lognormal(5, 1):.1f}", "fin_profit": f"{rng.normal(10, 20):.1f}",
            "mkt_nifty": f"{15000 + 500 * (year - 2017) + rng.normal(0, 200):.0f}",
            "full_text_content": text,
            "gmp": f"{issue * score * 0.8:.1f}",
        }
        for q in range(1, 26):
            row[f"answer_{q}"] = text if text_signal > 0 and q <= 3 else ""
        rows.append(row)
    return rows


def write_csv(path: Path, rows: list[dict]) -> Path:
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return Path(path)


def make_record(company="Acme Ltd", listing=dt.date(2022, 5, 10), issue=100.0, nse=None, bse=None,
                sub_close=None, **kwargs) -> IpoRecord:
    prices = {}
    if nse is not None:
        prices["NSE"] = ListingPrices(*nse)
    if bse is not None:
        prices["BSE"] = ListingPrices(*bse)
    return IpoRecord(company_id=company, board=kwargs.pop("board", Board.MAIN), listing_date=listing,
                     subscription_close_date=sub_close or listing - dt.timedelta(days=5), issue_price=issue,
                     lot_size=kwargs.pop("lot_size", 10), issue_type=kwargs.pop("issue_type", IssueType.BOOK_BUILDING),
                     exchange_prices=prices, **kwargs)


@pytest.fixture
def synthetic_csv(tmp_path) -> Path:
    return write_csv(tmp_path / "mainboard.csv", synthetic_rows(120, seed=1))
