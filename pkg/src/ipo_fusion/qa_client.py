"""Clients for the embedding and text-generation services, plus prompt assembly and response parsing.

Embedding wire format (POST ``endpoint``)::

    request:  {"input": ["text", ...], "model": "<name>"}
    response: {"data": [{"index": 0, "embedding": [floats]}, ...]}   # also accepted: {"embeddings": [[...]]}

Generation wire format (POST ``endpoint``, chat-completions style)::

    request:  {"model": "<name>", "messages": [{"role": "user", "content": prompt}],
               "temperature": 0.0, "max_tokens": 512}
    response: {"choices": [{"message": {"content": "text"}}]}
"""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
import os
import re
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, TypeVar

import httpx
import numpy as np

from .dataset import IpoRecord, Target, Task
from .retrieval import tokenize

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ENV_EMBED_URL = "IPO_EMBED_URL"
ENV_EMBED_KEY = "IPO_EMBED_API_KEY"
ENV_GEN_URL = "IPO_GEN_URL"
ENV_GEN_KEY = "IPO_GEN_API_KEY"


class ServiceError(RuntimeError):
    pass


class DimensionMismatch(ServiceError):
    pass


@dataclass(frozen=True)
class EmbeddingServiceConfig:
    endpoint: str
    dimension: int
    max_input_length: int = 8192
    timeout: float = 30.0
    retries: int = 2
    model: str | None = None
    api_key: str | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class GenerationServiceConfig:
    endpoint: str
    model: str | None = None
    timeout: float = 60.0
    retries: int = 2
    api_key: str | None = None
    max_tokens: int = 512


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_words_hint: int = 300
    temperature: float = 0.0

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class ResponseCache:
    """One file per key; writes go through ``os.replace`` so concurrent inserts never tear."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(*parts: Any) -> str:
        return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()

    def get(self, key: str):
        path = self.directory / f"{key}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["value"]

    def put(self, key: str, value) -> None:
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump({"value": value}, fh)
        os.replace(tmp, self.directory / f"{key}.json")


def _post_json(client: httpx.Client, url: str, payload: dict, retries: int, api_key: str | None) -> Any:
    headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = client.post(url, json=payload, headers=headers)
            resp.raise_for_status()
            return resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            last = exc
            logger.warning("POST %s failed (attempt %d/%d): %s", url, attempt + 1, retries + 1, exc)
            if attempt < retries:
                time.sleep(min(0.25 * 2 ** attempt, 4.0))
    raise ServiceError(f"{url}: {last}")


def map_ordered(fn: Callable[[T], R], items: Sequence[T], max_in_flight: int = 1) -> list[R]:
    """Apply ``fn`` with bounded concurrency; results come back in input order."""
    if max_in_flight <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(fn, items))


class EmbeddingClient:
    def __init__(self, config: EmbeddingServiceConfig, cache: ResponseCache | None = None,
                 transport: httpx.BaseTransport | None = None, batch_size: int = 32):
        self.config = config
        self.cache = cache
        self.batch_size = batch_size
        self._http = httpx.Client(timeout=config.timeout, transport=transport)

    @property
    def dimension(self) -> int:
        return self.config.dimension

    def _truncate(self, text: str) -> str:
        limit = self.config.max_input_length
        if len(text) > limit:
            logger.info("truncating embedding input from %d to %d characters", len(text), limit)
            return text[:limit]
        return text

    def _request(self, texts: list[str]) -> list[list[float]]:
        payload = {"input": texts}
        if self.config.model:
            payload["model"] = self.config.model
        body = _post_json(self._http, self.config.endpoint, payload, self.config.retries, self.config.api_key)
        if isinstance(body, dict) and "data" in body:
            rows = sorted(body["data"], key=lambda d: d.get("index", 0))
            vectors = [r["embedding"] for r in rows]
        elif isinstance(body, dict) and "embeddings" in body:
            vectors = body["embeddings"]
        elif isinstance(body, list):
            vectors = body
        else:
            raise ServiceError("unrecognised embedding response")
        if len(vectors) != len(texts):
            raise ServiceError(f"expected {len(texts)} vectors, got {len(vectors)}")
        for v in vectors:
            if len(v) != self.config.dimension:
                raise DimensionMismatch(f"service returned {len(v)} dims, expected {self.config.dimension}")
        return [list(map(float, v)) for v in vectors]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = [self._truncate(t) for t in texts]
        out: list[list[float] | None] = [None] * len(texts)
        pending = []
        for i, text in enumerate(texts):
            cached = self.cache.get(self.cache.key("embed", self.config.model, text)) if self.cache else None
            if cached is not None and len(cached) == self.config.dimension:
                out[i] = cached
            else:
                pending.append(i)
        for start in range(0, len(pending), self.batch_size):
            chunk = pending[start:start + self.batch_size]
            for i, vec in zip(chunk, self._request([texts[i] for i in chunk])):
                out[i] = vec
                if self.cache:
                    self.cache.put(self.cache.key("embed", self.config.model, texts[i]), vec)
        return [np.asarray(v, dtype=float) for v in out]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


class HashingEmbedder:
    """Deterministic offline embedder (signed feature hashing of tokens); no service needed."""

    def __init__(self, dimension: int = 256, max_input_length: int = 8192):
        self.dimension = dimension
        self.max_input_length = max_input_length

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for tok in tokenize(text[:self.max_input_length]):
            h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
            v[h % self.dimension] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(v)
        if norm == 0:
            v[0] = 1.0
            return v
        return v / norm

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


def embed_batch(texts: Sequence[str], config: EmbeddingServiceConfig, client: EmbeddingClient | None = None,
                **kwargs) -> list[np.ndarray]:
    client = client or EmbeddingClient(config, **kwargs)
    return client.embed_batch(texts)


class GenerationClient:
    def __init__(self, config: GenerationServiceConfig, cache: ResponseCache | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.config = config
        self.cache = cache
        self._http = httpx.Client(timeout=config.timeout, transport=transport)

    def generate(self, request: GenerationRequest) -> str:
        key = ResponseCache.key("generate", self.config.model, request.prompt, request.temperature,
                                self.config.max_tokens)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        payload = {"messages": [{"role": "user", "content": request.prompt}],
                   "temperature": request.temperature, "max_tokens": self.config.max_tokens}
        if self.config.model:
            payload["model"] = self.config.model
        body = _post_json(self._http, self.config.endpoint, payload, self.config.retries, self.config.api_key)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ServiceError(f"unrecognised generation response: {exc}") from exc
        if self.cache is not None:
            self.cache.put(key, text)
        return text


# ---------------------------------------------------------------- prompts

_PERSONA = ("You are an expert financial analyst who have extensive experience of participating in Initial "
            "Public Offerings (IPOs) of Indian companies.")

ANSWER_TEMPLATE = (
    _PERSONA + " Relevant contents from Red Herring Prospectus (RHP) of an Indian company going for IPO is given "
    "to you. Your task is to analyse and answer the given question in less than 300 words as free text. Use just "
    "the content provided to you to answer the question and not anything else. If the contents are not relevant, "
    "just return the word 'None'.\n"
    "CONTENT-1: {semantic_content}\n"
    "CONTENT-2: {syntactic_content}\n"
    "Question: {question}"
)

DIRECTION_TEMPLATE = (
    _PERSONA + " You are given various facts of a company in JSON format where each key represents the type of "
    "content and value content itself. Your task is to analyse these content and predict if the {price} price of "
    "the IPO on the listing day will be more than the Issue price. Answer 1 if if the {price} price of the IPO on "
    "the listing day will be more than the Issue price, otherwise answer 0. If you are not confident answer -1. "
    "Your answer should be in -1, 0, 1 only.\n"
    "JSON CONTENT: {json_content}\n"
    "Descriptions of keys of the JSON CONTENT are: {col_desc_dict}\n"
    "Response:"
)

UNDERPRICING_TEMPLATE = (
    _PERSONA + " You are given various facts of a company in JSON format where each key represents the type of "
    "content and value content itself. Your task is to analyse these content and predict if the under-pricing with "
    "respect to {price} price of the IPO on the listing day i.e. ({price} - issue price)/(issue price). Answer "
    "should be a real number only. If you are not confident answer nan.\n"
    "JSON CONTENT: {json_content}\n"
    "Descriptions of keys of the JSON CONTENT are: {col_desc_dict}\n"
    "Response:"
)

PRICE_WORDS = {"open": "Open", "high": "Highest", "close": "Close"}


def _substitute(template: str, **values: str) -> str:
    # str.format would choke on braces inside the JSON payloads
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", value)
    return out


def build_answer_prompt(question: str, semantic_content: str, syntactic_content: str) -> str:
    return _substitute(ANSWER_TEMPLATE, semantic_content=semantic_content, syntactic_content=syntactic_content,
                       question=question)


def _fmt(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dt.date):
        return value.isoformat()
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return int(value) if value.is_integer() else round(value, 6)
    if isinstance(value, dict):
        return {str(k): _fmt(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_fmt(v) for v in value]
    return value


# listing-day prices and the grey-market premium are outcomes or excluded inputs
_BASELINE_EXCLUDED = {"exchange_prices", "gmp", "answers"}


def serialize_record(record: IpoRecord) -> str:
    obj = {k: _fmt(v) for k, v in asdict(record).items() if k not in _BASELINE_EXCLUDED}
    obj["board"] = record.board.value
    obj["issue_type"] = record.issue_type.value if record.issue_type else None
    for i, answer in enumerate(record.answers, start=1):
        obj[f"answer_of_question_{i}"] = answer
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


DEFAULT_COLUMN_DESCRIPTIONS: dict[str, str] = {
    "company_id": "Name of the company",
    "board": "Listing segment: MainBoard or SME",
    "listing_date": "Listing date of the IPO",
    "subscription_close_date": "Last day of the subscription period",
    "issue_price": "Issue price per share in INR",
    "lot_size": "Minimum number of shares per application",
    "issue_type": "FixedPrice or BookBuilding issue",
    "subscription_rates": "Subscription ratio per investor category up to the penultimate subscription day",
    "financials": "Company financials in INR",
    "macro": "Macroeconomic indicators for the listing year",
    "market": "Nifty 50 and India VIX levels before listing",
    "sector": "Sector of the company",
    "industry": "Industry of the company",
    "full_text_content": "Details of the company",
    "news_content": "News related to the IPO",
    **{f"answer_of_question_{i}": f"Answer to prospectus question {i}" for i in range(1, 26)},
}


def build_baseline_prompt(record: IpoRecord, column_descriptions: Mapping[str, str], target: Target | str) -> str:
    target = Target(target)
    template = DIRECTION_TEMPLATE if target.task is Task.DIRECTION else UNDERPRICING_TEMPLATE
    return _substitute(template, price=PRICE_WORDS[target.price.value], json_content=serialize_record(record),
                       col_desc_dict=json.dumps(dict(column_descriptions), sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------- parsing and calls

_INT = re.compile(r"(?<![\w.])[-+]?\d+(?!\w|\.\d)")
_REAL = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?|\bnan\b", re.IGNORECASE)
NOT_CONFIDENT = -1


def parse_direction(text: str) -> int:
    for match in _INT.finditer(text or ""):
        value = int(match.group())
        if value in (-1, 0, 1):
            return value
    return NOT_CONFIDENT


def parse_underpricing(text: str) -> float:
    match = _REAL.search(text or "")
    if match is None:
        return math.nan
    return float(match.group())


def is_absent_answer(text: str | None) -> bool:
    return text is None or text.strip().strip(".'\"`").lower() == "none" or not text.strip()


def answer_question(question: str, semantic_content: str, syntactic_content: str, generator,
                    temperature: float = 0.0) -> str | None:
    """Generated answer, or None when the model declines or the service fails."""
    prompt = build_answer_prompt(question, semantic_content, syntactic_content)
    try:
        reply = generator.generate(GenerationRequest(prompt, temperature=temperature))
    except Exception as exc:  # the batch must survive any single failure
        logger.warning("answer generation failed: %s", exc)
        return None
    if is_absent_answer(reply):
        return None
    return reply.strip()


@dataclass(frozen=True)
class LlmBaselineVerdict:
    target: Target
    value: float

    def __post_init__(self):
        if Target(self.target).task is Task.DIRECTION and self.value not in (-1, 0, 1):
            raise ValueError("direction verdicts must be -1, 0 or 1")

    @property
    def not_confident(self) -> bool:
        if Target(self.target).task is Task.DIRECTION:
            return self.value == NOT_CONFIDENT
        return math.isnan(self.value)


def llm_baseline_predict(record: IpoRecord, column_descriptions: Mapping[str, str], target: Target | str,
                         generator, temperature: float = 0.0) -> LlmBaselineVerdict:
    target = Target(target)
    prompt = build_baseline_prompt(record, column_descriptions, target)
    try:
        reply = generator.generate(GenerationRequest(prompt, temperature=temperature))
    except Exception as exc:
        logger.warning("%s: baseline generation failed: %s", record.company_id, exc)
        reply = ""
    if target.task is Task.DIRECTION:
        return LlmBaselineVerdict(target, parse_direction(reply))
    return LlmBaselineVerdict(target, parse_underpricing(reply))
