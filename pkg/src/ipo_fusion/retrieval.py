"""Per-prospectus page index: Okapi BM25 for keyword matching, cosine over page embeddings."""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

INDEX_FORMAT_VERSION = 1
K1 = 1.5
B = 0.75

_SPLIT = re.compile(r"[^0-9a-z]+")


class RetrievalError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return [t for t in _SPLIT.split(text.lower()) if len(t) >= 2]


@dataclass(frozen=True)
class ProspectusDoc:
    company_id: str
    pages: Mapping[int, str]
    source: str | None = None

    def __post_init__(self):
        if not self.pages:
            raise RetrievalError(f"{self.company_id}: no pages")
        if any(p < 1 for p in self.pages):
            raise RetrievalError(f"{self.company_id}: page numbers must be positive")
        if not any(text.strip() for text in self.pages.values()):
            raise RetrievalError(f"{self.company_id}: every page is empty")

    @classmethod
    def load(cls, path: str | Path, company_id: str | None = None) -> "ProspectusDoc":
        """JSON object mapping page numbers (as keys) to extracted page text."""
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        pages = {}
        for key, text in raw.items():
            number = int(re.sub(r"\D", "", str(key)) or 0)
            if number in pages:
                raise RetrievalError(f"{path}: duplicate page {number}")
            pages[number] = text or ""
        return cls(company_id or path.stem, pages, source=path.name)


@dataclass
class RetrievalIndex:
    company_id: str
    pages: dict[int, str]
    vocabulary: dict[str, int]
    postings: dict[str, list[tuple[int, int]]]
    page_lengths: dict[int, int]
    avg_length: float
    embeddings: dict[int, np.ndarray]
    source: str | None = None

    @property
    def page_numbers(self) -> list[int]:
        return sorted(self.pages)

    @property
    def dimension(self) -> int:
        return len(next(iter(self.embeddings.values())))

    def save(self, path: str | Path) -> None:
        obj = {
            "format_version": INDEX_FORMAT_VERSION,
            "company_id": self.company_id,
            "source": self.source,
            "pages": {str(p): t for p, t in self.pages.items()},
            "embeddings": {str(p): v.tolist() for p, v in self.embeddings.items()},
        }
        Path(path).write_text(json.dumps(obj), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RetrievalIndex":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format_version") != INDEX_FORMAT_VERSION:
            raise RetrievalError(f"{path}: index format {obj.get('format_version')} != {INDEX_FORMAT_VERSION}")
        doc = ProspectusDoc(obj["company_id"], {int(p): t for p, t in obj["pages"].items()}, obj.get("source"))
        return build_index(doc, {int(p): v for p, v in obj["embeddings"].items()})


def build_index(doc: ProspectusDoc, embeddings: Mapping[int, Sequence[float]]) -> RetrievalIndex:
    missing = [p for p in doc.pages if p not in embeddings]
    if missing:
        raise RetrievalError(f"{doc.company_id}: missing embedding for page(s) {sorted(missing)}")
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = {}
    for page in sorted(doc.pages):
        tokens = tokenize(doc.pages[page])
        lengths[page] = len(tokens)
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((page, tf))
    vocabulary = {term: len(plist) for term, plist in postings.items()}
    unit = {}
    dim = None
    for page in sorted(doc.pages):
        v = np.asarray(embeddings[page], dtype=float)
        if dim is None:
            dim = v.shape
        elif v.shape != dim:
            raise RetrievalError(f"{doc.company_id}: embedding dimension mismatch on page {page}")
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise RetrievalError(f"{doc.company_id}: zero embedding on page {page}")
        unit[page] = v / norm
    return RetrievalIndex(
        company_id=doc.company_id,
        pages={p: doc.pages[p] for p in sorted(doc.pages)},
        vocabulary=vocabulary,
        postings=postings,
        page_lengths=lengths,
        avg_length=sum(lengths.values()) / len(lengths),
        embeddings=unit,
        source=doc.source,
    )


def idf(n_docs: int, df: int) -> float:
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_scores(index: RetrievalIndex, query: str) -> dict[int, float]:
    terms = tokenize(query)
    if not terms:
        raise RetrievalError("empty query")
    n = len(index.page_lengths)
    avg = index.avg_length or 1.0
    scores = dict.fromkeys(index.page_numbers, 0.0)
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        w = idf(n, index.vocabulary[term])
        for page, tf in plist:
            norm = K1 * (1 - B + B * index.page_lengths[page] / avg)
            scores[page] += w * tf * (K1 + 1) / (tf + norm)
    return scores


TIE_TOLERANCE = 1e-12


def _argmax_lowest(scores: Mapping[int, float]) -> tuple[int, float]:
    # scores within rounding noise of the best count as tied
    best = max(scores.values())
    slack = TIE_TOLERANCE * max(1.0, abs(best))
    page = min(p for p, s in scores.items() if s >= best - slack)
    return page, scores[page]


def bm25_top1(index: RetrievalIndex, query: str) -> tuple[int, float]:
    """Best BM25 page; ties go to the lowest page number."""
    return _argmax_lowest(bm25_scores(index, query))


def cosine_top1(index: RetrievalIndex, query_vector: Sequence[float]) -> tuple[int, float]:
    q = np.asarray(query_vector, dtype=float)
    if q.shape != (index.dimension,):
        raise RetrievalError(f"query dimension {q.shape} does not match index dimension {index.dimension}")
    return _argmax_lowest({p: float(v @ q) for p, v in index.embeddings.items()})


def hybrid_retrieve(index: RetrievalIndex, question: str,
                    embed: Callable[[str], Sequence[float]]) -> tuple[str, str]:
    """(semantic page text, syntactic page text) for one question."""
    q = np.asarray(embed(question), dtype=float)
    norm = np.linalg.norm(q)
    sem_page, _ = cosine_top1(index, q / norm if norm > 0 else q)
    syn_page, _ = bm25_top1(index, question)
    return index.pages[sem_page], index.pages[syn_page]


QUESTION_BANK: tuple[str, ...] = (
    "What are the background, qualifications, and experience of the promoters and key management team?",
    "Are there any past or current criminal cases, police cases, or legal proceedings legal cases against the "
    "promoters and key management team or the company?",
    "Are the promoters and key management team capable of managing the company and meet its objectives?",
    "What are the company's business model, products/services?",
    "What are the company's strengths, competitive advantages, and growth potential?",
    "How is the company's position in the industry?",
    "Is the company able to adapt to market changes?",
    "What are the company's growth prospects?",
    "What is the financial performance of the company in terms of revenue, profits, assets, and liabilities?",
    "How does the company plan to use the funds raised through IPO?",
    "Does the company plan to use IPO proceeds to repay debt?",
    "Does the proposed use of funds raised from IPO aligns with the company's growth strategy?",
    "What is the potential impact of the IPO on the company's future prospects?",
    "What are the risks associated with investing in the company?",
    "Is the company's able to mitigate the risks and their potential impact?",
    "What is the potential impact of market fluctuations on the company's performance?",
    "Is the IPO price is reasonable and offers potential for growth?",
    "Does the IPO price reflect the company's intrinsic value and growth prospects?",
    "Is the IPO price is reasonable and offers potential for growth?",
    "Is the company's valuation right based on financial metrics (like P/E ratio, Enterprise value-to-EBITDA "
    "ratio) and industry comparisons?",
    "How is the company's position in the market and among its competitors?",
    "Has the company complied with all relevant regulatory requirements?",
    "Who are the lead, and co-lead managers/under-writers?",
    "What is the company's corporate governance structure, including board composition, executive "
    "compensation, and shareholder rights.?",
    "What is the shareholding pattern, i.e.the ownership structure and potential conflicts of interest?",
)
assert len(QUESTION_BANK) == 25
